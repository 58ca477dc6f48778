//! The shared primary log.
//!
//! One append-only log absorbing the small per-zone batches of all zones so
//! they are persistent without paying a tiny disk write per zone. It is
//! never reorganized and is read back only after a power failure. Every
//! append is followed by a zero byte; the next append overwrites that
//! marker, so a scan from position 0 always ends at the current front.

use crate::error::Result;
use crate::storage::{AlignedBuf, LogStore};

pub struct PrimaryLog {
    store: Box<dyn LogStore>,
    capacity: u64,
    position: u64,
    page: usize,
}

impl PrimaryLog {
    pub fn new(store: Box<dyn LogStore>, capacity: u64, page: usize) -> Self {
        PrimaryLog {
            store,
            capacity,
            position: 0,
            page,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn set_position(&mut self, pos: u64) {
        self.position = pos;
    }

    /// Whether `len` data bytes plus the end marker fit before the end.
    pub fn fits(&self, len: usize) -> bool {
        self.position + len as u64 + 1 <= self.capacity
    }

    /// Appends one bulk write. The caller checked `fits` (flushing all
    /// secondary log buffers and calling [`reset`](Self::reset) if not).
    pub fn append(&mut self, data: &[u8]) -> Result<u64> {
        debug_assert!(self.fits(data.len()));
        let pos = self.position;
        let mut buf = AlignedBuf::new(data.len() + 1, self.page);
        buf.data_mut()[..data.len()].copy_from_slice(data);
        buf.data_mut()[data.len()] = 0;
        self.store.write_at(pos, &mut buf, 0, data.len() + 1)?;
        self.position += data.len() as u64;
        Ok(pos)
    }

    /// Wraps to position 0. Only valid once every secondary log buffer has
    /// been flushed; the stale content is cut off by a fresh end marker.
    pub fn reset(&mut self) -> Result<()> {
        let mut buf = AlignedBuf::new(self.page, self.page);
        self.store.write_at(0, &mut buf, 0, self.page)?;
        self.position = 0;
        Ok(())
    }

    /// Reads `len` bytes at `pos` (page-aligned) for the power-fail replay.
    pub fn read_chunk(&mut self, pos: u64, buf: &mut AlignedBuf, len: usize) -> Result<usize> {
        self.store.read_at(pos, buf, len)
    }
}
