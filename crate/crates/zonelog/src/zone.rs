//! Backup zones.
//!
//! A zone owns one secondary log, one in-memory secondary log buffer, one
//! version buffer and one version log. Version structures are guarded by a
//! per-zone mutex; cross-role access is mutually exclusive.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::chunk::{ChunkId, ZoneId};
use crate::error::Result;
use crate::secondary_log::SecondaryLog;
use crate::storage::{AlignedBuf, LogStore};
use crate::version::{VersionBuffer, VersionRecord, VERSION_RECORD_LEN};

struct VersionState {
    buffer: VersionBuffer,
    log: Box<dyn LogStore>,
    log_len: u64,
    capacity: usize,
    flush_threshold: f64,
    page: usize,
}

/// The zone's secondary log buffer: converted small batches staged until a
/// bulk write to the secondary log pays off.
pub struct SecBufferContent {
    pub data: Vec<u8>,
    pub entry_offsets: Vec<usize>,
}

pub struct Zone {
    pub id: ZoneId,
    pub log: SecondaryLog,
    /// Serializes reorganization passes (and recovery) on this zone.
    pub reorg_guard: Mutex<()>,
    versions: Mutex<VersionState>,
    sec_buffer: Mutex<SecBufferContent>,
    sec_buffer_capacity: usize,
}

impl Zone {
    pub fn new(
        id: ZoneId,
        log: SecondaryLog,
        version_log: Box<dyn LogStore>,
        version_log_len: u64,
        initial_epoch: u16,
        version_buffer_capacity: usize,
        version_flush_threshold: f64,
        sec_buffer_capacity: usize,
        page: usize,
    ) -> Self {
        Zone {
            id,
            log,
            reorg_guard: Mutex::new(()),
            versions: Mutex::new(VersionState {
                buffer: VersionBuffer::with_epoch(initial_epoch),
                log: version_log,
                log_len: version_log_len,
                capacity: version_buffer_capacity,
                flush_threshold: version_flush_threshold,
                page,
            }),
            sec_buffer: Mutex::new(SecBufferContent {
                data: Vec::new(),
                entry_offsets: Vec::new(),
            }),
            sec_buffer_capacity,
        }
    }

    pub fn epoch(&self) -> u16 {
        self.versions.lock().unwrap().buffer.epoch()
    }

    /// Assigns the next (epoch, version) for a write or delete of `chunk`.
    pub fn next_version(&self, chunk: ChunkId, deleted: bool) -> Result<VersionRecord> {
        let mut state = self.versions.lock().unwrap();
        state.buffer.assign(chunk, deleted)
    }

    /// Version buffer has breached its flush threshold.
    pub fn version_buffer_needs_flush(&self) -> bool {
        let state = self.versions.lock().unwrap();
        state.buffer.byte_size() as f64 >= state.capacity as f64 * state.flush_threshold
    }

    /// Version buffer is at capacity (triggers a priority flush).
    pub fn version_buffer_full(&self) -> bool {
        let state = self.versions.lock().unwrap();
        state.buffer.byte_size() >= state.capacity
    }

    pub fn version_buffer_len(&self) -> usize {
        self.versions.lock().unwrap().buffer.len()
    }

    pub fn version_log_len(&self) -> u64 {
        self.versions.lock().unwrap().log_len
    }

    /// Appends all buffered version records to the version log and starts
    /// the next epoch. On storage failure the buffer and epoch are left
    /// untouched. Returns the number of records appended.
    pub fn flush_version_buffer(&self) -> Result<usize> {
        let mut state = self.versions.lock().unwrap();
        if state.buffer.is_empty() {
            return Ok(0);
        }
        let records: Vec<VersionRecord> = state.buffer.records().collect();
        let mut bytes = Vec::with_capacity(records.len() * VERSION_RECORD_LEN);
        for rec in &records {
            bytes.extend_from_slice(&rec.encode());
        }
        let pos = state.log_len;
        let mut buf = AlignedBuf::new(bytes.len(), state.page);
        buf.data_mut().copy_from_slice(&bytes);
        let len = bytes.len();
        state.log.write_at(pos, &mut buf, 0, len)?;
        // keep the file at its logical length so a scan sees no padding
        state.log.truncate(pos + len as u64)?;
        state.log_len = pos + len as u64;
        state.buffer.drain_for_flush();
        Ok(records.len())
    }

    /// Reads the whole version log, keeps the lexicographically greatest
    /// stamp per chunk, overlays the live version buffer and bumps the
    /// epoch. Returns the map and the count of corrupt trailing bytes
    /// skipped.
    pub fn read_all_versions(&self) -> Result<(BTreeMap<ChunkId, VersionRecord>, usize)> {
        let mut state = self.versions.lock().unwrap();
        let mut map = BTreeMap::new();
        let len = state.log_len as usize;
        let mut buf = AlignedBuf::new(len.max(1), state.page);
        let got = state.log.read_at(0, &mut buf, len)?;
        let whole = got - got % VERSION_RECORD_LEN;
        for i in (0..whole).step_by(VERSION_RECORD_LEN) {
            let rec = VersionRecord::decode(
                buf.data()[i..i + VERSION_RECORD_LEN].try_into().unwrap(),
            );
            map.entry(rec.chunk)
                .and_modify(|best: &mut VersionRecord| {
                    if rec.stamp > best.stamp {
                        *best = rec;
                    }
                })
                .or_insert(rec);
        }
        for rec in state.buffer.records() {
            map.insert(rec.chunk, rec);
        }
        state.buffer.bump_epoch();
        Ok((map, got - whole))
    }

    /// Reads only the on-disk version log (no buffer overlay, no epoch
    /// bump): the power-failure recovery view, where the version log may be
    /// ahead of the data and is trusted for deletions only.
    pub fn read_version_log_raw(&self) -> Result<BTreeMap<ChunkId, VersionRecord>> {
        let mut state = self.versions.lock().unwrap();
        let mut map = BTreeMap::new();
        let len = state.log_len as usize;
        let mut buf = AlignedBuf::new(len.max(1), state.page);
        let got = state.log.read_at(0, &mut buf, len)?;
        let whole = got - got % VERSION_RECORD_LEN;
        for i in (0..whole).step_by(VERSION_RECORD_LEN) {
            let rec = VersionRecord::decode(
                buf.data()[i..i + VERSION_RECORD_LEN].try_into().unwrap(),
            );
            map.entry(rec.chunk)
                .and_modify(|best: &mut VersionRecord| {
                    if rec.stamp > best.stamp {
                        *best = rec;
                    }
                })
                .or_insert(rec);
        }
        Ok(map)
    }

    /// Rewrites the version log to exactly one record per chunk of `map`,
    /// then truncates: write-then-truncate so a failure mid-way leaves the
    /// old tail readable.
    pub fn compact_version_log(&self, map: &BTreeMap<ChunkId, VersionRecord>) -> Result<u64> {
        let mut state = self.versions.lock().unwrap();
        let mut bytes = Vec::with_capacity(map.len() * VERSION_RECORD_LEN);
        for rec in map.values() {
            bytes.extend_from_slice(&rec.encode());
        }
        let new_len = bytes.len() as u64;
        if !bytes.is_empty() {
            let mut buf = AlignedBuf::new(bytes.len(), state.page);
            buf.data_mut().copy_from_slice(&bytes);
            let len = bytes.len();
            state.log.write_at(0, &mut buf, 0, len)?;
        }
        state.log.truncate(new_len)?;
        state.log_len = new_len;
        Ok(new_len)
    }

    /// Appends converted entries to the secondary log buffer; the caller
    /// checked capacity with [`sec_buffer_room`](Self::sec_buffer_room).
    pub fn sec_buffer_append(&self, entry: &[u8]) {
        let mut buf = self.sec_buffer.lock().unwrap();
        let offset = buf.data.len();
        buf.entry_offsets.push(offset);
        buf.data.extend_from_slice(entry);
    }

    pub fn sec_buffer_room(&self, len: usize) -> bool {
        let buf = self.sec_buffer.lock().unwrap();
        buf.data.len() + len <= self.sec_buffer_capacity
    }

    pub fn sec_buffer_len(&self) -> usize {
        self.sec_buffer.lock().unwrap().data.len()
    }

    /// Takes the secondary log buffer content for a flush to disk.
    pub fn take_sec_buffer(&self) -> SecBufferContent {
        let mut buf = self.sec_buffer.lock().unwrap();
        SecBufferContent {
            data: std::mem::take(&mut buf.data),
            entry_offsets: std::mem::take(&mut buf.entry_offsets),
        }
    }
}
