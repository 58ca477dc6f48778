//! Epoch-based version control.
//!
//! Backup-side versions are `(epoch, number)` pairs. Within an epoch the
//! per-chunk number counts up from 0; flushing the version buffer to the
//! version log ends the epoch. Version log records are fixed 13-byte tuples:
//! 8-byte chunk ID, 2-byte epoch, 3-byte version, little-endian, no framing.
//!
//! Deletions consume a version number like any write and are marked by the
//! top bit of the on-disk 3-byte version field, so per-chunk stamps stay
//! strictly increasing across mixed write/delete histories.

use std::collections::BTreeMap;

use crate::chunk::ChunkId;
use crate::error::{Error, Result};

/// Bytes of one version log record.
pub const VERSION_RECORD_LEN: usize = 13;

/// Version numbers are confined to 23 bits so they survive the 3-byte
/// version log field next to the deletion flag.
pub const MAX_VERSION_NUMBER: u32 = (1 << 23) - 1;

const DELETED_BIT: u32 = 1 << 23;

/// A unique per-chunk version: lexicographically ordered (epoch, number).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct VersionStamp {
    pub epoch: u16,
    pub number: u32,
}

impl VersionStamp {
    pub fn new(epoch: u16, number: u32) -> Self {
        VersionStamp { epoch, number }
    }
}

/// A stamp plus the deletion marker, as tracked by version structures.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VersionRecord {
    pub chunk: ChunkId,
    pub stamp: VersionStamp,
    pub deleted: bool,
}

impl VersionRecord {
    pub fn encode(&self) -> [u8; VERSION_RECORD_LEN] {
        let mut out = [0u8; VERSION_RECORD_LEN];
        out[0..8].copy_from_slice(&self.chunk.raw().to_le_bytes());
        out[8..10].copy_from_slice(&self.stamp.epoch.to_le_bytes());
        let packed = self.stamp.number | if self.deleted { DELETED_BIT } else { 0 };
        out[10..13].copy_from_slice(&packed.to_le_bytes()[0..3]);
        out
    }

    pub fn decode(bytes: &[u8; VERSION_RECORD_LEN]) -> Self {
        let chunk = ChunkId::from_raw(u64::from_le_bytes(bytes[0..8].try_into().unwrap()));
        let epoch = u16::from_le_bytes(bytes[8..10].try_into().unwrap());
        let packed = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], 0]);
        VersionRecord {
            chunk,
            stamp: VersionStamp::new(epoch, packed & MAX_VERSION_NUMBER),
            deleted: packed & DELETED_BIT != 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BufferSlot {
    /// Epoch at the slot's most recent assignment. Normally the buffer's
    /// current epoch; older when the epoch was bumped without a flush.
    epoch: u16,
    number: u32,
    deleted: bool,
}

/// Per-zone in-memory version buffer covering the current epoch.
///
/// Ordered by chunk ID so flushes produce deterministic bytes.
pub struct VersionBuffer {
    slots: BTreeMap<ChunkId, BufferSlot>,
    epoch: u16,
    /// 13 bytes per distinct chunk in the epoch; re-updates are map
    /// overwrites and add nothing.
    bytes: usize,
}

impl VersionBuffer {
    pub fn new() -> Self {
        VersionBuffer {
            slots: BTreeMap::new(),
            epoch: 0,
            bytes: 0,
        }
    }

    pub fn with_epoch(epoch: u16) -> Self {
        let mut buf = Self::new();
        buf.epoch = epoch;
        buf
    }

    pub fn epoch(&self) -> u16 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Flush-size estimate in bytes.
    pub fn byte_size(&self) -> usize {
        self.bytes
    }

    /// Assigns the next version for a write (or delete) of `chunk`.
    ///
    /// The first touch of a chunk in an epoch gets number 0; later touches
    /// increment. Entries surviving an epoch bump without a flush keep
    /// counting from their previous number so stamps never repeat, and they
    /// are re-stamped with the current epoch only at their next assignment.
    pub fn assign(&mut self, chunk: ChunkId, deleted: bool) -> Result<VersionRecord> {
        let epoch = self.epoch;
        let slot = match self.slots.get_mut(&chunk) {
            Some(slot) => {
                if slot.number >= MAX_VERSION_NUMBER {
                    return Err(Error::VersionExhausted);
                }
                slot.number += 1;
                slot.epoch = epoch;
                slot.deleted = deleted;
                *slot
            }
            None => {
                let slot = BufferSlot {
                    epoch,
                    number: 0,
                    deleted,
                };
                self.slots.insert(chunk, slot);
                self.bytes += VERSION_RECORD_LEN;
                slot
            }
        };
        Ok(VersionRecord {
            chunk,
            stamp: VersionStamp::new(slot.epoch, slot.number),
            deleted: slot.deleted,
        })
    }

    /// Current records without clearing, in chunk order. Stamps are the
    /// assignment-time stamps, matching what the log entry headers carry.
    pub fn records(&self) -> impl Iterator<Item = VersionRecord> + '_ {
        self.slots.iter().map(|(&chunk, slot)| VersionRecord {
            chunk,
            stamp: VersionStamp::new(slot.epoch, slot.number),
            deleted: slot.deleted,
        })
    }

    /// Ends the epoch: returns all records and clears the buffer.
    pub fn drain_for_flush(&mut self) -> Vec<VersionRecord> {
        let records: Vec<_> = self.records().collect();
        self.slots.clear();
        self.bytes = 0;
        self.epoch = self.epoch.wrapping_add(1);
        records
    }

    /// Bumps the epoch without flushing (reorganization/recovery gather).
    /// Lingering slots keep their assignment-time stamps.
    pub fn bump_epoch(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
    }
}

impl Default for VersionBuffer {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let rec = VersionRecord {
            chunk: ChunkId::new(7, 123_456),
            stamp: VersionStamp::new(42, 99),
            deleted: false,
        };
        assert_eq!(VersionRecord::decode(&rec.encode()), rec);

        let del = VersionRecord {
            chunk: ChunkId::new(1, 1),
            stamp: VersionStamp::new(3, MAX_VERSION_NUMBER),
            deleted: true,
        };
        assert_eq!(VersionRecord::decode(&del.encode()), del);
    }

    #[test]
    fn record_is_13_bytes_little_endian() {
        let rec = VersionRecord {
            chunk: ChunkId::from_raw(0x0102_0304_0506_0708),
            stamp: VersionStamp::new(0x0A0B, 0x0C0D0E),
            deleted: false,
        };
        let bytes = rec.encode();
        assert_eq!(
            bytes,
            [0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01, 0x0B, 0x0A, 0x0E, 0x0D, 0x0C]
        );
    }

    #[test]
    fn assign_counts_up_per_chunk() {
        let mut buf = VersionBuffer::new();
        let a = ChunkId::new(1, 10);
        let b = ChunkId::new(1, 11);
        assert_eq!(buf.assign(a, false).unwrap().stamp, VersionStamp::new(0, 0));
        assert_eq!(buf.assign(a, false).unwrap().stamp, VersionStamp::new(0, 1));
        assert_eq!(buf.assign(b, false).unwrap().stamp, VersionStamp::new(0, 0));
        assert_eq!(buf.assign(a, false).unwrap().stamp, VersionStamp::new(0, 2));
        assert_eq!(buf.byte_size(), 2 * VERSION_RECORD_LEN);
    }

    #[test]
    fn flush_resets_numbers_for_next_epoch() {
        let mut buf = VersionBuffer::new();
        let a = ChunkId::new(1, 10);
        buf.assign(a, false).unwrap();
        buf.assign(a, false).unwrap();
        let records = buf.drain_for_flush();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].stamp, VersionStamp::new(0, 1));
        assert!(buf.is_empty());
        assert_eq!(buf.assign(a, false).unwrap().stamp, VersionStamp::new(1, 0));
    }

    #[test]
    fn epoch_bump_without_flush_keeps_assignment_stamps() {
        let mut buf = VersionBuffer::new();
        let a = ChunkId::new(1, 10);
        let b = ChunkId::new(1, 11);
        buf.assign(a, false).unwrap();
        buf.assign(b, false).unwrap();
        buf.bump_epoch();
        // Untouched slots still report the stamp their headers carry.
        let stamps: Vec<_> = buf.records().map(|r| (r.chunk, r.stamp)).collect();
        assert_eq!(stamps[0], (a, VersionStamp::new(0, 0)));
        // A new assignment continues the count under the new epoch.
        assert_eq!(buf.assign(a, false).unwrap().stamp, VersionStamp::new(1, 1));
        let stamps: Vec<_> = buf.records().map(|r| r.stamp).collect();
        assert_eq!(stamps, vec![VersionStamp::new(1, 1), VersionStamp::new(0, 0)]);
    }

    #[test]
    fn delete_consumes_a_number() {
        let mut buf = VersionBuffer::new();
        let a = ChunkId::new(1, 10);
        assert_eq!(buf.assign(a, false).unwrap().stamp.number, 0);
        let del = buf.assign(a, true).unwrap();
        assert!(del.deleted);
        assert_eq!(del.stamp.number, 1);
        let re = buf.assign(a, false).unwrap();
        assert!(!re.deleted);
        assert_eq!(re.stamp.number, 2);
    }
}
