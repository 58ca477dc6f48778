//! Recovery.
//!
//! Normal (online) recovery mirrors the reorganization ordering: per zone
//! the versions are gathered first (version log plus live buffer), then the
//! logs are flushed, then the secondary log is read segment by segment and
//! an entry is kept iff its stamp matches the version map and is no
//! deletion.
//!
//! Power-failure recovery trusts only the disk: the primary log is replayed
//! into the per-zone view first, then all segments are scanned and the
//! highest stamp per chunk wins regardless of the version log, which may be
//! ahead of the data and is consulted for deletions only. Checksum
//! failures are dropped either way.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::checksum::crc32c;
use crate::chunk::{ChunkId, ZoneId};
use crate::engine::{Engine, EngineShared};
use crate::entry::{self, DecodeContext, DecodedEntry, FormContext};
use crate::error::Result;
use crate::primary_log::PrimaryLog;
use crate::storage::{AlignedBuf, LogStore};
use crate::version::{VersionRecord, VersionStamp, VERSION_RECORD_LEN};
use crate::zone::Zone;

/// A recovered live chunk: its winning stamp and reassembled payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveredChunk {
    pub stamp: VersionStamp,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub checksum_dropped: u64,
    pub corrupt_scans: u64,
    pub incomplete_chains: u64,
    pub version_records_skipped: u64,
}

#[derive(Debug, Default)]
pub struct RecoveredSet {
    pub chunks: BTreeMap<ChunkId, RecoveredChunk>,
    pub report: RecoveryReport,
}

/// Per-chunk accumulator taking the highest stamp; fragments of the winning
/// stamp are collected for chain reassembly.
struct ChunkAcc {
    stamp: VersionStamp,
    deleted: bool,
    total: u16,
    fragments: BTreeMap<u8, Vec<u8>>,
}

#[derive(Default)]
struct Accumulator {
    chunks: BTreeMap<ChunkId, ChunkAcc>,
}

impl Accumulator {
    fn add(&mut self, meta: &entry::EntryMeta, payload: &[u8]) {
        let (position, total) = match meta.chain {
            Some(chain) => (chain.position, chain.total),
            None => (0, 1),
        };
        let acc = self.chunks.entry(meta.chunk).or_insert_with(|| ChunkAcc {
            stamp: meta.stamp,
            deleted: meta.deleted,
            total,
            fragments: BTreeMap::new(),
        });
        if meta.stamp > acc.stamp {
            acc.stamp = meta.stamp;
            acc.deleted = meta.deleted;
            acc.total = total;
            acc.fragments.clear();
        } else if meta.stamp < acc.stamp {
            return;
        }
        acc.fragments
            .entry(position)
            .or_insert_with(|| payload.to_vec());
    }

    fn finish(
        self,
        deletions: &BTreeMap<ChunkId, VersionRecord>,
        report: &mut RecoveryReport,
    ) -> BTreeMap<ChunkId, RecoveredChunk> {
        let mut out = BTreeMap::new();
        for (chunk, acc) in self.chunks {
            if acc.deleted {
                continue;
            }
            if let Some(rec) = deletions.get(&chunk) {
                if rec.deleted && rec.stamp >= acc.stamp {
                    continue;
                }
            }
            if acc.fragments.len() != acc.total as usize {
                report.incomplete_chains += 1;
                continue;
            }
            let mut payload = Vec::new();
            for frag in acc.fragments.values() {
                payload.extend_from_slice(frag);
            }
            out.insert(chunk, RecoveredChunk { stamp: acc.stamp, payload });
        }
        out
    }
}

impl Engine {
    /// Online recovery of everything the engine holds. Equals the exact
    /// latest acked state when ingest is quiesced.
    pub fn recover_normal(&self) -> Result<RecoveredSet> {
        let shared = &self.shared;
        shared.in_recovery.store(true, Ordering::SeqCst);
        let result = recover_normal_inner(shared);
        shared.in_recovery.store(false, Ordering::SeqCst);
        result
    }

    /// Disk-only recovery: in-memory buffers are considered lost.
    pub fn recover_power_failure(&self) -> Result<RecoveredSet> {
        let shared = &self.shared;
        shared.in_recovery.store(true, Ordering::SeqCst);
        let result = recover_power_failure_inner(shared);
        shared.in_recovery.store(false, Ordering::SeqCst);
        result
    }
}

fn recover_normal_inner(shared: &EngineShared) -> Result<RecoveredSet> {
    let zones: Vec<Arc<Zone>> = shared.zones.read().unwrap().values().cloned().collect();
    let mut report = RecoveryReport::default();

    // versions first, then the flush: data can be newer than the gathered
    // versions (kept via the epoch rule) but never the other way around
    let mut versions: BTreeMap<ZoneId, (BTreeMap<ChunkId, VersionRecord>, u16)> = BTreeMap::new();
    for zone in &zones {
        let _guard = zone.reorg_guard.lock().unwrap();
        let (map, skipped) = zone.read_all_versions()?;
        report.version_records_skipped += skipped as u64;
        versions.insert(zone.id, (map, zone.epoch()));
    }
    shared.priority_flush(false)?;

    let mut acc = Accumulator::default();
    for zone in &zones {
        let _guard = zone.reorg_guard.lock().unwrap();
        let (map, current_epoch) = &versions[&zone.id];
        let ctx = DecodeContext {
            form: FormContext::Secondary(zone.id),
            timestamps: shared.cfg.timestamps_enabled,
            checksums: shared.cfg.checksums_enabled,
        };
        for idx in 0..zone.log.segment_count() {
            if zone.log.segment_infos()[idx].used == 0 {
                continue;
            }
            let image = zone.log.read_segment(idx)?;
            scan_segment(&image, &ctx, &mut report, |decoded, payload| {
                let meta = &decoded.meta;
                let matches = map
                    .get(&meta.chunk)
                    .is_some_and(|rec| rec.stamp == meta.stamp && !rec.deleted && !meta.deleted);
                if matches || meta.stamp.epoch == *current_epoch {
                    acc.add(meta, payload);
                }
            });
        }
    }

    let deletions: BTreeMap<ChunkId, VersionRecord> = versions
        .into_values()
        .flat_map(|(map, _)| map.into_iter())
        .filter(|(_, rec)| rec.deleted)
        .collect();
    let chunks = acc.finish(&deletions, &mut report);
    Ok(RecoveredSet { chunks, report })
}

fn recover_power_failure_inner(shared: &EngineShared) -> Result<RecoveredSet> {
    let zones: Vec<Arc<Zone>> = shared.zones.read().unwrap().values().cloned().collect();
    let mut report = RecoveryReport::default();
    let mut acc = Accumulator::default();

    // primary log first: the only place unflushed small batches live
    if let Some(primary) = shared.primary.lock().unwrap().as_mut() {
        stream_primary(shared, primary, &mut report, &mut |decoded, payload| {
            acc.add(&decoded.meta, payload);
        })?;
    }

    for zone in &zones {
        let ctx = DecodeContext {
            form: FormContext::Secondary(zone.id),
            timestamps: shared.cfg.timestamps_enabled,
            checksums: shared.cfg.checksums_enabled,
        };
        for idx in 0..zone.log.segment_count() {
            let image = zone.log.read_segment(idx)?;
            scan_segment(&image, &ctx, &mut report, |decoded, payload| {
                acc.add(&decoded.meta, payload);
            });
        }
    }

    // the version log is trusted for deletions only
    let mut deletions = BTreeMap::new();
    for zone in &zones {
        for (chunk, rec) in zone.read_version_log_raw()? {
            if rec.deleted {
                deletions.insert(chunk, rec);
            }
        }
    }
    let chunks = acc.finish(&deletions, &mut report);
    Ok(RecoveredSet { chunks, report })
}

/// Scans one segment image, feeding checksum-valid entries to `f`.
fn scan_segment(
    image: &[u8],
    ctx: &DecodeContext,
    report: &mut RecoveryReport,
    mut f: impl FnMut(&DecodedEntry, &[u8]),
) {
    let mut offset = 0usize;
    loop {
        match entry::decode_entry(image, offset, ctx) {
            Ok(Some(decoded)) => {
                let payload = &image[decoded.payload.clone()];
                match decoded.meta.checksum {
                    Some(expect) if crc32c(payload) != expect => {
                        report.checksum_dropped += 1;
                    }
                    _ => f(&decoded, payload),
                }
                offset = decoded.next_offset;
            }
            Ok(None) => break,
            Err(_) => {
                report.corrupt_scans += 1;
                break;
            }
        }
    }
}

/// Streams the primary log from position 0 until the end marker, reading
/// page-aligned windows and resuming exactly at entry boundaries. Returns
/// the offset where the content ends.
pub(crate) fn stream_primary(
    shared: &EngineShared,
    primary: &mut PrimaryLog,
    report: &mut RecoveryReport,
    f: &mut dyn FnMut(&DecodedEntry, &[u8]),
) -> Result<u64> {
    let ctx = DecodeContext {
        form: FormContext::Primary,
        timestamps: shared.cfg.timestamps_enabled,
        checksums: shared.cfg.checksums_enabled,
    };
    let page = shared.cfg.page_size as u64;
    // a window always holds at least one maximum-size entry after the first
    // page, so decoding can always make progress after a refill
    let max_span = shared.cfg.max_entry_size() + 4096;
    let window = (2 * max_span).div_ceil(page as usize) * page as usize;
    let mut buf = AlignedBuf::new(window, shared.cfg.page_size);

    let mut abs = 0u64; // next entry boundary to decode
    loop {
        let win_base = abs - abs % page;
        let got = primary.read_chunk(win_base, &mut buf, window)?;
        let image = &buf.data()[..got];
        let mut offset = (abs - win_base) as usize;
        if offset >= got {
            return Ok(abs);
        }
        loop {
            match entry::decode_entry(image, offset, &ctx) {
                Ok(Some(decoded)) => {
                    let payload = &image[decoded.payload.clone()];
                    match decoded.meta.checksum {
                        Some(expect) if crc32c(payload) != expect => {
                            report.checksum_dropped += 1;
                        }
                        _ => f(&decoded, payload),
                    }
                    offset = decoded.next_offset;
                    abs = win_base + offset as u64;
                    if got == window && window - offset < max_span {
                        break; // refill so the next entry fits entirely
                    }
                }
                Ok(None) => return Ok(abs),
                Err(_) => {
                    if got == window && window - offset < max_span {
                        break; // entry split across the window edge
                    }
                    report.corrupt_scans += 1;
                    return Ok(abs);
                }
            }
        }
    }
}

/// Finds the end of the primary log content (first end marker) for reopen.
pub(crate) fn scan_primary_end(shared: &EngineShared, primary: &mut PrimaryLog) -> Result<u64> {
    let mut report = RecoveryReport::default();
    stream_primary(shared, primary, &mut report, &mut |_, _| {})
}

/// Largest epoch of any record in a version log, for epoch resumption on
/// reopen.
pub(crate) fn version_log_max_epoch(store: &mut dyn LogStore, len: u64) -> Result<Option<u16>> {
    if len == 0 {
        return Ok(None);
    }
    let mut buf = AlignedBuf::new(len as usize, 4096);
    let got = store.read_at(0, &mut buf, len as usize)?;
    let whole = got - got % VERSION_RECORD_LEN;
    let mut max = None;
    for i in (0..whole).step_by(VERSION_RECORD_LEN) {
        let rec = VersionRecord::decode(buf.data()[i..i + VERSION_RECORD_LEN].try_into().unwrap());
        max = Some(max.map_or(rec.stamp.epoch, |m: u16| m.max(rec.stamp.epoch)));
    }
    Ok(max)
}
