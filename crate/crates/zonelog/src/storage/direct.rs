//! Direct (O_DIRECT + O_DSYNC) file access.
//!
//! Every physical read and write is page-aligned in file position, length
//! and buffer address. Callers write logical ranges; this backend realizes
//! them through the four alignment situations:
//!
//! 1. aligned start, aligned end: plain write
//! 2. aligned start, unaligned end: the whole final page is written from
//!    the buffer's over-allocated tail
//! 3. unaligned buffer offset: the data is first moved to the start of the
//!    page enclosing it
//! 4. unaligned file position: the file's last partial page is read back,
//!    placed in front of the data inside the buffer's spare leading page,
//!    and the write starts at the enclosing page boundary
//!
//! Opening tries O_DIRECT and falls back to page-cache I/O with the same
//! alignment discipline when the filesystem refuses it (the data-sync flag
//! is kept either way).

use std::fs::{File, OpenOptions};
use std::os::unix::fs::OpenOptionsExt;
use std::path::Path;
use std::sync::Arc;

use super::buffered::{read_up_to_at, write_all_at};
use super::{round_up, AlignedBuf, IoStats, LogStore};
use crate::error::Result;

pub struct DirectFile {
    file: File,
    page: usize,
    stats: Arc<IoStats>,
    scratch: AlignedBuf,
}

impl DirectFile {
    pub fn open(path: &Path, size: u64, page: usize, stats: Arc<IoStats>) -> Result<Self> {
        let mut opts = OpenOptions::new();
        opts.read(true).write(true).create(true);

        let mut direct_opts = opts.clone();
        direct_opts.custom_flags(libc::O_DIRECT | libc::O_DSYNC);
        let (file, kernel_direct) = match direct_opts.open(path) {
            Ok(f) => (f, true),
            Err(_) => {
                let mut dsync_opts = opts;
                dsync_opts.custom_flags(libc::O_DSYNC);
                (dsync_opts.open(path)?, false)
            }
        };
        if size > 0 && file.metadata()?.len() < size {
            file.set_len(size)?;
        }
        if !kernel_direct {
            stats.direct_fallbacks.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        Ok(DirectFile {
            file,
            page,
            stats,
            scratch: AlignedBuf::new(page, page),
        })
    }

    fn phys_write(&self, pos: u64, data: &[u8]) -> Result<()> {
        self.stats
            .record_write(pos, data.len(), data.as_ptr(), self.page);
        write_all_at(&self.file, pos, data)
    }
}

impl LogStore for DirectFile {
    fn write_at(&mut self, pos: u64, buf: &mut AlignedBuf, off: usize, len: usize) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        let page = self.page;
        debug_assert_eq!(buf.page_size(), page);
        let abs = page + off; // data start within the whole allocation

        if pos % page as u64 == 0 {
            let (src, situation) = if abs % page == 0 {
                (abs, if len % page == 0 { 1 } else { 2 })
            } else {
                // Situation 3: move the data to the start of its page.
                let dst = abs - abs % page;
                buf.whole_mut().copy_within(abs..abs + len, dst);
                (dst, 3)
            };
            let phys_len = round_up(len, page);
            let whole = buf.whole_mut();
            whole[src + len..src + phys_len].fill(0);
            self.stats.record_situation(situation);
            self.phys_write(pos, &buf.whole()[src..src + phys_len])
        } else {
            // Situation 4 (also covering an unaligned buffer offset): the
            // file's partial tail page is preserved in front of the data.
            let in_page = (pos % page as u64) as usize;
            let file_page_start = pos - in_page as u64;

            let dst_data = if abs % page >= in_page {
                abs - abs % page + in_page
            } else {
                abs - abs % page - page + in_page
            };
            let dst_page = dst_data - in_page;

            if dst_data != abs {
                buf.whole_mut().copy_within(abs..abs + len, dst_data);
            }

            {
                let out = self.scratch.data_mut();
                out.fill(0);
                self.stats
                    .record_read(file_page_start, out.len(), out.as_ptr(), page);
                read_up_to_at(&self.file, file_page_start, out)?;
            }

            let phys_len = round_up(in_page + len, page);
            let whole = buf.whole_mut();
            whole[dst_page..dst_data].copy_from_slice(&self.scratch.data()[..in_page]);
            whole[dst_data + len..dst_page + phys_len].fill(0);
            self.stats.record_situation(4);
            self.phys_write(file_page_start, &buf.whole()[dst_page..dst_page + phys_len])
        }
    }

    fn read_at(&mut self, pos: u64, buf: &mut AlignedBuf, len: usize) -> Result<usize> {
        debug_assert_eq!(pos % self.page as u64, 0, "direct reads are page-aligned");
        let page = self.page;
        let request = round_up(len, page);
        let whole_start = page;
        let got = {
            let whole = buf.whole_mut();
            let out = &mut whole[whole_start..whole_start + request];
            self.stats.record_read(pos, request, out.as_ptr(), page);
            read_up_to_at(&self.file, pos, out)?
        };
        Ok(got.min(len))
    }

    fn truncate(&mut self, new_len: u64) -> Result<()> {
        self.file.set_len(new_len)?;
        Ok(())
    }

    fn len(&mut self) -> Result<u64> {
        Ok(self.file.metadata()?.len())
    }
}
