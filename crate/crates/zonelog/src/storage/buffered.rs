//! OS-buffered file access.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;

use super::{AlignedBuf, LogStore};
use crate::error::{Error, Result};

pub struct BufferedFile {
    file: File,
}

impl BufferedFile {
    pub fn open(path: &Path, size: u64) -> Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .open(path)?;
        // Pre-size fixed logs; the file reads back as zeros.
        if size > 0 && file.metadata()?.len() < size {
            file.set_len(size)?;
        }
        Ok(BufferedFile { file })
    }
}

pub(super) fn write_all_at(file: &File, mut pos: u64, mut data: &[u8]) -> Result<()> {
    let total = data.len();
    while !data.is_empty() {
        match file.write_at(data, pos) {
            Ok(0) => {
                return Err(Error::PartialIo {
                    done: total - data.len(),
                    total,
                    source: io::Error::new(io::ErrorKind::WriteZero, "write returned 0"),
                })
            }
            Ok(n) => {
                data = &data[n..];
                pos += n as u64;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                return Err(Error::PartialIo {
                    done: total - data.len(),
                    total,
                    source: e,
                })
            }
        }
    }
    Ok(())
}

pub(super) fn read_up_to_at(file: &File, mut pos: u64, mut out: &mut [u8]) -> Result<usize> {
    let total = out.len();
    while !out.is_empty() {
        match file.read_at(out, pos) {
            Ok(0) => break, // end of file
            Ok(n) => {
                out = &mut out[n..];
                pos += n as u64;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(total - out.len())
}

impl LogStore for BufferedFile {
    fn write_at(&mut self, pos: u64, buf: &mut AlignedBuf, off: usize, len: usize) -> Result<()> {
        write_all_at(&self.file, pos, &buf.data()[off..off + len])
    }

    fn read_at(&mut self, pos: u64, buf: &mut AlignedBuf, len: usize) -> Result<usize> {
        read_up_to_at(&self.file, pos, &mut buf.data_mut()[..len])
    }

    fn truncate(&mut self, new_len: u64) -> Result<()> {
        self.file.set_len(new_len)?;
        Ok(())
    }

    fn len(&mut self) -> Result<u64> {
        Ok(self.file.metadata()?.len())
    }
}
