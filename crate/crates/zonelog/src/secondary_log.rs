//! Per-zone segmented secondary logs.
//!
//! A secondary log is the final destination of a zone's entries and the
//! only source for online recovery. It is subdivided into fixed segments;
//! entries never span two segments. Placement policy for a sorted batch:
//!
//! * batches of at least 75% of a segment open a fresh segment
//! * smaller batches go to the best-fit used segment with room
//! * otherwise a fresh segment, and as a last resort the batch is split at
//!   entry boundaries over the used segments with the most free space
//!
//! While the reorganizer holds the log, new batches land only in the
//! designated active segment, which is swapped out when full and is never
//! the segment being cleaned. All disk writes of one log are serialized.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::chunk::ZoneId;
use crate::error::Result;
use crate::storage::{AlignedBuf, LogStore};

#[derive(Clone, Copy, Debug)]
pub struct SegmentInfo {
    pub used: u32,
    pub entries: u32,
    /// Last reorganization, or the log's creation time.
    pub last_reorg: u32,
    /// Average age in seconds at `last_reorg` (0 for an empty segment),
    /// byte- or entry-weighted depending on configuration.
    pub avg_age: f64,
}

impl SegmentInfo {
    fn fresh(created: u32) -> Self {
        SegmentInfo {
            used: 0,
            entries: 0,
            last_reorg: created,
            avg_age: 0.0,
        }
    }
}

struct SecMeta {
    segments: Vec<SegmentInfo>,
    active: Option<usize>,
    reorg_segment: Option<usize>,
    reorg_in_progress: bool,
}

/// Where one contiguous slice of a batch was placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub segment: usize,
    pub segment_offset: usize,
    pub batch_start: usize,
    pub batch_end: usize,
}

/// Outcome of trying to place a batch.
#[derive(Debug)]
pub enum WriteOutcome {
    Placed(Vec<Placement>),
    /// Not enough room (or fragmentation too high): the caller registers an
    /// urgent reorganization request and retries.
    NeedsReorg,
}

pub struct SecondaryLog {
    zone: ZoneId,
    segment_size: usize,
    capacity: u64,
    page: usize,
    age_tracking: bool,
    byte_weighted_age: bool,
    store: Mutex<Box<dyn LogStore>>,
    meta: Mutex<SecMeta>,
    used_total: AtomicU64,
}

impl SecondaryLog {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        zone: ZoneId,
        store: Box<dyn LogStore>,
        capacity: u64,
        file_size: u64,
        segment_size: usize,
        page: usize,
        age_tracking: bool,
        byte_weighted_age: bool,
        created: u32,
    ) -> Self {
        let count = (file_size / segment_size as u64) as usize;
        SecondaryLog {
            zone,
            segment_size,
            capacity,
            page,
            age_tracking,
            byte_weighted_age,
            store: Mutex::new(store),
            meta: Mutex::new(SecMeta {
                segments: vec![SegmentInfo::fresh(created); count],
                active: None,
                reorg_segment: None,
                reorg_in_progress: false,
            }),
            used_total: AtomicU64::new(0),
        }
    }

    pub fn zone(&self) -> ZoneId {
        self.zone
    }

    pub fn segment_size(&self) -> usize {
        self.segment_size
    }

    pub fn segment_count(&self) -> usize {
        self.meta.lock().unwrap().segments.len()
    }

    pub fn file_size(&self) -> u64 {
        self.segment_count() as u64 * self.segment_size as u64
    }

    /// Nominal zone capacity; reorganization thresholds are fractions of it.
    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used_total(&self) -> u64 {
        self.used_total.load(Ordering::Relaxed)
    }

    pub fn segment_infos(&self) -> Vec<SegmentInfo> {
        self.meta.lock().unwrap().segments.clone()
    }

    fn recount(meta: &SecMeta) -> u64 {
        meta.segments.iter().map(|s| s.used as u64).sum()
    }

    /// The average-age append adjustment. `used_before` are the bytes (and
    /// `entries_before` the count) in the segment before this entry.
    fn note_append_age(
        &self,
        seg: &mut SegmentInfo,
        entry_size: usize,
        used_before: u64,
        entries_before: u32,
        now: u32,
    ) {
        if !self.age_tracking {
            return;
        }
        let elapsed = now.saturating_sub(seg.last_reorg) as f64;
        seg.avg_age = crate::reorg::apply_append_age(
            seg.avg_age,
            elapsed,
            entry_size,
            used_before,
            entries_before,
            self.byte_weighted_age,
        );
    }

    /// Places and writes one sorted batch. `entry_offsets` are the start
    /// offsets of each entry within `batch` (ascending, first must be 0);
    /// `entry_sizes[i]` = offsets[i+1] - offsets[i].
    pub fn write_batch(
        &self,
        batch: &[u8],
        entry_offsets: &[usize],
        now: u32,
    ) -> Result<WriteOutcome> {
        debug_assert!(!batch.is_empty());
        debug_assert!(batch.len() <= self.segment_size);
        let plan = {
            let mut meta = self.meta.lock().unwrap();
            let plan = if meta.reorg_in_progress {
                self.plan_during_reorg(&mut meta, batch.len(), entry_offsets)
            } else {
                self.plan_normal(&mut meta, batch.len(), entry_offsets)
            };
            let Some(plan) = plan else {
                return Ok(WriteOutcome::NeedsReorg);
            };
            // Account used bytes and ages under the meta guard.
            for p in &plan {
                let entry_spans = entries_within(entry_offsets, batch.len(), p);
                let seg = &mut meta.segments[p.segment];
                let mut used = seg.used as u64;
                let mut count = seg.entries;
                for (start, end) in entry_spans {
                    self.note_append_age(seg, end - start, used, count, now);
                    used += (end - start) as u64;
                    count += 1;
                }
                seg.used = used as u32;
                seg.entries = count;
            }
            self.used_total.store(Self::recount(&meta), Ordering::Relaxed);
            plan
        };

        let mut store = self.store.lock().unwrap();
        for p in &plan {
            let len = p.batch_end - p.batch_start;
            // Trailing end marker, clipped at the segment boundary.
            let marker = usize::from(p.segment_offset + len < self.segment_size);
            // Pieces after a split keep their in-batch page offset, like the
            // tail of a pooled buffer continuing in a new segment.
            let shift = p.batch_start % self.page;
            let mut buf = AlignedBuf::new(shift + len + marker, self.page);
            buf.data_mut()[shift..shift + len].copy_from_slice(&batch[p.batch_start..p.batch_end]);
            if marker == 1 {
                buf.data_mut()[shift + len] = 0;
            }
            let pos = p.segment as u64 * self.segment_size as u64 + p.segment_offset as u64;
            store.write_at(pos, &mut buf, shift, len + marker)?;
        }
        Ok(WriteOutcome::Placed(plan))
    }

    fn plan_normal(
        &self,
        meta: &SecMeta,
        len: usize,
        entry_offsets: &[usize],
    ) -> Option<Vec<Placement>> {
        let seg_size = self.segment_size;
        let find_fresh = meta.segments.iter().position(|s| s.used == 0);

        // At least 75% of a segment: open a new segment.
        if len * 4 >= seg_size * 3 {
            if let Some(idx) = find_fresh {
                return Some(vec![Placement {
                    segment: idx,
                    segment_offset: 0,
                    batch_start: 0,
                    batch_end: len,
                }]);
            }
        } else {
            // Best-fit used segment with enough free space; ties by index.
            let mut best: Option<(usize, usize)> = None; // (free, idx)
            for (idx, seg) in meta.segments.iter().enumerate() {
                if seg.used == 0 {
                    continue;
                }
                let free = seg_size - seg.used as usize;
                if free >= len && best.is_none_or(|(bf, _)| free < bf) {
                    best = Some((free, idx));
                }
            }
            if let Some((_, idx)) = best {
                return Some(vec![Placement {
                    segment: idx,
                    segment_offset: meta.segments[idx].used as usize,
                    batch_start: 0,
                    batch_end: len,
                }]);
            }
            if let Some(idx) = find_fresh {
                return Some(vec![Placement {
                    segment: idx,
                    segment_offset: 0,
                    batch_start: 0,
                    batch_end: len,
                }]);
            }
        }
        // No segment takes the whole batch: split it over the used segments
        // with the most free space, at entry boundaries only.
        self.plan_split(meta, len, entry_offsets)
    }

    fn plan_split(
        &self,
        meta: &SecMeta,
        len: usize,
        entry_offsets: &[usize],
    ) -> Option<Vec<Placement>> {
        let seg_size = self.segment_size;
        let mut order: Vec<usize> = (0..meta.segments.len()).collect();
        // most free space first; ties by lowest index
        order.sort_by_key(|&i| (meta.segments[i].used, i));

        let mut plan = Vec::new();
        let mut entry = 0usize;
        let entry_end = |i: usize| -> usize { entry_offsets.get(i + 1).copied().unwrap_or(len) };
        for idx in order {
            if entry >= entry_offsets.len() {
                break;
            }
            let mut offset = meta.segments[idx].used as usize;
            let start_entry = entry;
            let piece_start = entry_offsets[entry];
            while entry < entry_offsets.len()
                && offset + (entry_end(entry) - entry_offsets[entry]) <= seg_size
            {
                offset += entry_end(entry) - entry_offsets[entry];
                entry += 1;
            }
            if entry > start_entry {
                plan.push(Placement {
                    segment: idx,
                    segment_offset: meta.segments[idx].used as usize,
                    batch_start: piece_start,
                    batch_end: entry_offsets.get(entry).copied().unwrap_or(len),
                });
            }
        }
        if entry < entry_offsets.len() {
            return None; // fragmentation too high
        }
        Some(plan)
    }

    /// During reorganization only the active segment takes writes; it is
    /// exchanged only when the next entries do not fit, and never for the
    /// segment under reorganization.
    fn plan_during_reorg(
        &self,
        meta: &mut SecMeta,
        len: usize,
        entry_offsets: &[usize],
    ) -> Option<Vec<Placement>> {
        let seg_size = self.segment_size;
        let entry_end = |i: usize| -> usize { entry_offsets.get(i + 1).copied().unwrap_or(len) };
        // Working copy of per-segment fill so multi-piece plans see their
        // own earlier pieces.
        let mut used: Vec<usize> = meta.segments.iter().map(|s| s.used as usize).collect();
        let mut plan: Vec<Placement> = Vec::new();
        let mut entry = 0usize;

        while entry < entry_offsets.len() {
            let next_size = entry_end(entry) - entry_offsets[entry];
            let active = match meta.active {
                Some(idx) if Some(idx) != meta.reorg_segment && used[idx] + next_size <= seg_size => {
                    idx
                }
                _ => {
                    // exchange for the emptiest fitting segment, never the
                    // one being reorganized
                    let next = (0..used.len())
                        .filter(|&i| Some(i) != meta.reorg_segment)
                        .filter(|&i| used[i] + next_size <= seg_size)
                        .min_by_key(|&i| (used[i], i))?;
                    meta.active = Some(next);
                    next
                }
            };

            let piece_offset = used[active];
            let piece_start = entry_offsets[entry];
            while entry < entry_offsets.len()
                && used[active] + (entry_end(entry) - entry_offsets[entry]) <= seg_size
            {
                used[active] += entry_end(entry) - entry_offsets[entry];
                entry += 1;
            }
            plan.push(Placement {
                segment: active,
                segment_offset: piece_offset,
                batch_start: piece_start,
                batch_end: entry_offsets.get(entry).copied().unwrap_or(len),
            });
        }
        Some(plan)
    }

    /// Reads one whole segment image.
    pub fn read_segment(&self, idx: usize) -> Result<Vec<u8>> {
        let mut store = self.store.lock().unwrap();
        let mut buf = AlignedBuf::new(self.segment_size, self.page);
        let pos = idx as u64 * self.segment_size as u64;
        let got = store.read_at(pos, &mut buf, self.segment_size)?;
        let mut out = buf.data()[..got].to_vec();
        out.resize(self.segment_size, 0);
        Ok(out)
    }

    /// Rewrites a segment with its compacted survivors and refreshed info.
    /// Empty survivors free the segment instead.
    pub fn write_compacted(&self, idx: usize, survivors: &[u8], info: SegmentInfo) -> Result<()> {
        if survivors.is_empty() {
            return self.free_segment(idx, info.last_reorg);
        }
        debug_assert!(survivors.len() <= self.segment_size);
        {
            let mut store = self.store.lock().unwrap();
            let marker = usize::from(survivors.len() < self.segment_size);
            let mut buf = AlignedBuf::new(survivors.len() + marker, self.page);
            buf.data_mut()[..survivors.len()].copy_from_slice(survivors);
            if marker == 1 {
                buf.data_mut()[survivors.len()] = 0;
            }
            let pos = idx as u64 * self.segment_size as u64;
            store.write_at(pos, &mut buf, 0, survivors.len() + marker)?;
        }
        let mut meta = self.meta.lock().unwrap();
        meta.segments[idx] = info;
        self.used_total.store(Self::recount(&meta), Ordering::Relaxed);
        Ok(())
    }

    /// Marks a segment free by zeroing its first page on disk.
    pub fn free_segment(&self, idx: usize, now: u32) -> Result<()> {
        {
            let meta = self.meta.lock().unwrap();
            debug_assert!(meta.active != Some(idx), "freeing the active segment");
        }
        {
            let mut store = self.store.lock().unwrap();
            let mut buf = AlignedBuf::new(self.page, self.page);
            let pos = idx as u64 * self.segment_size as u64;
            store.write_at(pos, &mut buf, 0, self.page)?;
        }
        let mut meta = self.meta.lock().unwrap();
        meta.segments[idx] = SegmentInfo::fresh(now);
        self.used_total.store(Self::recount(&meta), Ordering::Relaxed);
        Ok(())
    }

    /// Marks the log as being reorganized: writes divert to the active
    /// segment until [`end_reorg`](Self::end_reorg).
    pub fn begin_reorg(&self) {
        let mut meta = self.meta.lock().unwrap();
        meta.reorg_in_progress = true;
    }

    /// Reorganization hold: marks the log as being reorganized and `idx` as
    /// the segment under cleaning (excluded from active-segment choice).
    pub fn begin_reorg_segment(&self, idx: usize) {
        let mut meta = self.meta.lock().unwrap();
        meta.reorg_in_progress = true;
        meta.reorg_segment = Some(idx);
        if meta.active == Some(idx) {
            meta.active = None;
        }
    }

    pub fn end_reorg_segment(&self) {
        let mut meta = self.meta.lock().unwrap();
        meta.reorg_segment = None;
    }

    pub fn end_reorg(&self) {
        let mut meta = self.meta.lock().unwrap();
        meta.reorg_in_progress = false;
        meta.reorg_segment = None;
        meta.active = None;
    }

    pub fn reorg_in_progress(&self) -> bool {
        self.meta.lock().unwrap().reorg_in_progress
    }

    pub fn active_segment(&self) -> Option<usize> {
        self.meta.lock().unwrap().active
    }
}

/// The (start, end) spans of the entries a placement covers.
fn entries_within(
    entry_offsets: &[usize],
    batch_len: usize,
    p: &Placement,
) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for (i, &start) in entry_offsets.iter().enumerate() {
        let end = entry_offsets.get(i + 1).copied().unwrap_or(batch_len);
        if start >= p.batch_start && end <= p.batch_end {
            spans.push((start, end));
        }
    }
    spans
}
