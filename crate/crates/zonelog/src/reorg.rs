//! Background log cleaning.
//!
//! Log selection picks the fullest log above the activation threshold
//! (prompt requests take priority); segment selection is pluggable. A
//! cleaning pass gathers the version map (version log plus live buffer,
//! bumping the epoch), compacts the version log, flushes the zone's staged
//! batches and then rewrites selected segments keeping only entries whose
//! stamp matches the map (and is no deletion) or that were created in the
//! current epoch.
//!
//! Urgent requests (the writer cannot place a batch) are executed
//! synchronously by the blocked role itself and sweep all segments in
//! ascending order.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::checksum::crc32c;
use crate::chunk::{ChunkId, ZoneId};
use crate::config::SelectionStrategy;
use crate::copysets::splitmix64;
use crate::engine::EngineShared;
use crate::entry::{self, DecodeContext, FormContext};
use crate::error::Result;
use crate::secondary_log::SegmentInfo;
use crate::version::VersionRecord;
use crate::zone::Zone;

/// Selects the segment to clean. `eligible` must already exclude the
/// active segment; empty segments are never eligible.
pub fn select_segment(
    segments: &[SegmentInfo],
    eligible: &dyn Fn(usize) -> bool,
    segment_size: usize,
    strategy: SelectionStrategy,
    now: u32,
    rng: &mut u64,
) -> Option<usize> {
    let candidates: Vec<usize> = (0..segments.len())
        .filter(|&i| segments[i].used > 0 && eligible(i))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    match strategy {
        SelectionStrategy::Basic => {
            let score = |i: usize| {
                let seg = &segments[i];
                let age = now.saturating_sub(seg.last_reorg) as f64;
                age * seg.used as f64 / segment_size as f64
            };
            argmax(&candidates, score)
        }
        SelectionStrategy::TimestampAge => {
            let score = |i: usize| {
                let seg = &segments[i];
                let adjusted = seg.avg_age + now.saturating_sub(seg.last_reorg) as f64;
                seg.used as f64 / segment_size as f64 * adjusted
            };
            argmax(&candidates, score)
        }
        SelectionStrategy::Random => {
            let pick = splitmix64(rng) as usize % candidates.len();
            Some(candidates[pick])
        }
    }
}

fn argmax(candidates: &[usize], score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for &i in candidates {
        let s = score(i);
        if s > best_score {
            best_score = s;
            best = Some(i);
        }
    }
    best
}

/// Result of cleaning one segment.
struct CleanOutcome {
    freed: u64,
}

impl EngineShared {
    pub(crate) fn register_prompt(&self, zone: ZoneId) {
        let mut queue = self.reorg.prompt.lock().unwrap();
        if !queue.contains(&zone) {
            queue.push_back(zone);
            self.counters.prompt_requests.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// One scheduling step: prompt requests first, then the largest log
    /// above the activation threshold. Returns whether a pass ran.
    pub(crate) fn reorg_step(&self) -> Result<bool> {
        if self.in_recovery.load(Ordering::SeqCst) || self.shutdown.load(Ordering::SeqCst) {
            return Ok(false);
        }
        let prompted = self.reorg.prompt.lock().unwrap().pop_front();
        let zone = match prompted {
            Some(id) => Some(self.zone(id)?),
            None => self.select_log()?,
        };
        let Some(zone) = zone else {
            return Ok(false);
        };
        self.reorganize_log_pass(&zone)?;
        Ok(true)
    }

    /// The periodic choice: the fullest log at or above the activation
    /// fraction of its zone capacity.
    fn select_log(&self) -> Result<Option<Arc<Zone>>> {
        let zones = self.zones.read().unwrap();
        let activation = self.cfg.activation_fraction;
        let skip = self.reorg.skip_until.lock().unwrap();
        let mut best: Option<(u64, Arc<Zone>)> = None;
        for zone in zones.values() {
            let used = zone.log.used_total();
            if (used as f64) < activation * zone.log.capacity() as f64 {
                continue;
            }
            if let Some(&limit) = skip.get(&zone.id) {
                if used <= limit {
                    continue;
                }
            }
            if best.as_ref().is_none_or(|(b, _)| used > *b) {
                best = Some((used, Arc::clone(zone)));
            }
        }
        Ok(best.map(|(_, z)| z))
    }

    /// A full pass over one log: clean strategy-selected segments until the
    /// log drops below the activation threshold or nothing more helps.
    fn reorganize_log_pass(&self, zone: &Zone) -> Result<()> {
        let _guard = zone.reorg_guard.lock().unwrap();
        if self.in_recovery.load(Ordering::SeqCst) {
            return Ok(());
        }
        self.counters.reorg_passes.fetch_add(1, Ordering::Relaxed);
        let versions = self.prepare_zone(zone)?;
        let current_epoch = zone.epoch();
        zone.log.begin_reorg();

        let target = (self.cfg.activation_fraction * zone.log.capacity() as f64) as u64;
        let mut freed_total = 0u64;
        let mut cleaned: Vec<usize> = Vec::new();
        let segment_count = zone.log.segment_count();
        let result = (|| -> Result<()> {
            while zone.log.used_total() >= target && cleaned.len() < segment_count {
                let infos = zone.log.segment_infos();
                let active = zone.log.active_segment();
                let eligible = |i: usize| Some(i) != active && !cleaned.contains(&i);
                let mut rng = self.reorg.rng.lock().unwrap();
                let pick = select_segment(
                    &infos,
                    &eligible,
                    self.cfg.segment_size_bytes,
                    self.cfg.strategy,
                    self.clock.now_s(),
                    &mut rng,
                );
                drop(rng);
                let Some(idx) = pick else { break };
                cleaned.push(idx);
                let outcome = self.clean_segment(zone, idx, &versions, current_epoch)?;
                freed_total += outcome.freed;
            }
            Ok(())
        })();
        zone.log.end_reorg();
        result?;

        self.counters.freed_bytes.fetch_add(freed_total, Ordering::Relaxed);
        let mut skip = self.reorg.skip_until.lock().unwrap();
        if freed_total == 0 {
            // nothing invalid yet: leave the log alone until it grows
            skip.insert(zone.id, zone.log.used_total());
        } else {
            skip.remove(&zone.id);
        }
        Ok(())
    }

    /// Urgent handling: gather, then sweep all segments in ascending order.
    /// Returns the freed byte count.
    pub(crate) fn run_urgent(&self, zone: &Zone) -> Result<u64> {
        let _guard = zone.reorg_guard.lock().unwrap();
        let versions = self.prepare_zone_urgent(zone)?;
        let current_epoch = zone.epoch();
        zone.log.begin_reorg();
        let mut freed = 0u64;
        let result = (|| -> Result<()> {
            for idx in 0..zone.log.segment_count() {
                if zone.log.active_segment() == Some(idx) {
                    continue;
                }
                if zone.log.segment_infos()[idx].used == 0 {
                    continue;
                }
                freed += self.clean_segment(zone, idx, &versions, current_epoch)?.freed;
            }
            Ok(())
        })();
        zone.log.end_reorg();
        result?;
        self.counters.freed_bytes.fetch_add(freed, Ordering::Relaxed);
        self.reorg.skip_until.lock().unwrap().remove(&zone.id);
        Ok(freed)
    }

    /// Gather the version map, compact the version log and flush the zone's
    /// staged batches so every condemned entry's successor is durable.
    fn prepare_zone(&self, zone: &Zone) -> Result<BTreeMap<ChunkId, VersionRecord>> {
        let (versions, _skipped) = zone.read_all_versions()?;
        zone.compact_version_log(&versions)?;
        let staged = zone.take_sec_buffer();
        self.write_zone_batch(zone, &staged.data, &staged.entry_offsets)?;
        Ok(versions)
    }

    /// The urgent variant must not write to the full log before cleaning:
    /// staged batches stay in memory (they are covered by the primary log)
    /// and are flushed by the writer once space is free.
    fn prepare_zone_urgent(&self, zone: &Zone) -> Result<BTreeMap<ChunkId, VersionRecord>> {
        let (versions, _skipped) = zone.read_all_versions()?;
        zone.compact_version_log(&versions)?;
        Ok(versions)
    }

    /// Cleans one segment: keeps entries whose stamp matches the version
    /// map (and is not a deletion) or that carry the current epoch, drops
    /// checksum failures, compacts survivors to the segment start and
    /// recomputes the average age.
    fn clean_segment(
        &self,
        zone: &Zone,
        idx: usize,
        versions: &BTreeMap<ChunkId, VersionRecord>,
        current_epoch: u16,
    ) -> Result<CleanOutcome> {
        zone.log.begin_reorg_segment(idx);
        let outcome = self.clean_segment_inner(zone, idx, versions, current_epoch);
        zone.log.end_reorg_segment();
        self.counters.reorg_segments.fetch_add(1, Ordering::Relaxed);
        outcome
    }

    fn clean_segment_inner(
        &self,
        zone: &Zone,
        idx: usize,
        versions: &BTreeMap<ChunkId, VersionRecord>,
        current_epoch: u16,
    ) -> Result<CleanOutcome> {
        let now = self.clock.now_s();
        let old_used = zone.log.segment_infos()[idx].used as u64;
        let image = zone.log.read_segment(idx)?;
        let ctx = DecodeContext {
            form: FormContext::Secondary(zone.id),
            timestamps: self.cfg.timestamps_enabled,
            checksums: self.cfg.checksums_enabled,
        };

        let mut survivors = Vec::new();
        let mut kept: Vec<(u32, usize)> = Vec::new(); // (timestamp, footprint)
        let mut kept_count = 0u32;
        let mut offset = 0usize;
        loop {
            let decoded = match entry::decode_entry(&image, offset, &ctx) {
                Ok(Some(d)) => d,
                Ok(None) => break,
                Err(_) => break, // truncated tail: everything after is dead
            };
            let start = offset;
            offset = decoded.next_offset;
            let meta = decoded.meta;

            if let Some(expect) = meta.checksum {
                if crc32c(&image[decoded.payload.clone()]) != expect {
                    self.counters.checksum_drops.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
            }
            let matches = versions
                .get(&meta.chunk)
                .is_some_and(|rec| rec.stamp == meta.stamp && !rec.deleted && !meta.deleted);
            let keep = matches || meta.stamp.epoch == current_epoch;
            if keep {
                survivors.extend_from_slice(&image[start..offset]);
                kept.push((meta.timestamp.unwrap_or(0), offset - start));
                kept_count += 1;
            }
        }

        let avg_age = if self.cfg.timestamps_enabled {
            average_age(
                &kept,
                now,
                self.cfg.htct_threshold_s,
                self.cfg.byte_weighted_age,
            )
        } else {
            0.0
        };
        let info = SegmentInfo {
            used: survivors.len() as u32,
            entries: kept_count,
            last_reorg: now,
            avg_age,
        };
        zone.log.write_compacted(idx, &survivors, info)?;
        Ok(CleanOutcome {
            freed: old_used.saturating_sub(survivors.len() as u64),
        })
    }
}

/// The incremental average-age adjustment when a brand-new entry is
/// appended to a segment: the stored average refers to the last
/// reorganization instant, so the elapsed time since then is charged before
/// averaging the newcomer's zero age in. `used_before`/`entries_before`
/// describe the segment before the append.
pub fn apply_append_age(
    avg_age: f64,
    elapsed_since_reorg: f64,
    entry_size: usize,
    used_before: u64,
    entries_before: u32,
    byte_weighted: bool,
) -> f64 {
    if byte_weighted {
        let s_x = entry_size as f64;
        let u_s = used_before as f64;
        avg_age - (avg_age + elapsed_since_reorg) * s_x / (u_s + s_x)
    } else {
        avg_age - (avg_age + elapsed_since_reorg) / (entries_before as f64 + 1.0)
    }
}

/// Average age over the kept entries: ages of entries older than the
/// hot-to-cold threshold are excluded from the numerator (cold data must
/// not attract the cleaner), while the denominator spans all kept bytes.
pub fn average_age(kept: &[(u32, usize)], now: u32, htct_s: u32, byte_weighted: bool) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(timestamp, size) in kept {
        let age = now.saturating_sub(timestamp) as f64;
        let weight = if byte_weighted { size as f64 } else { 1.0 };
        if age < htct_s as f64 {
            num += age * weight;
        }
        den += weight;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEG: usize = 1000;

    fn seg(used: u32, last_reorg: u32, avg_age: f64) -> SegmentInfo {
        SegmentInfo {
            used,
            entries: 1,
            last_reorg,
            avg_age,
        }
    }

    fn pick(segments: &[SegmentInfo], strategy: SelectionStrategy, now: u32) -> Option<usize> {
        let mut rng = 7u64;
        select_segment(segments, &|_| true, SEG, strategy, now, &mut rng)
    }

    #[test]
    fn basic_prefers_older_at_equal_utilization() {
        let segments = [seg(500, 90, 0.0), seg(500, 0, 0.0)];
        // ages 10 s and 100 s at now = 100
        assert_eq!(pick(&segments, SelectionStrategy::Basic, 100), Some(1));
    }

    #[test]
    fn basic_weighs_utilization_times_age() {
        // utilization 0.9 / age 10 scores 9; utilization 0.3 / age 20 scores 6
        let segments = [seg(900, 10, 0.0), seg(300, 0, 0.0)];
        assert_eq!(pick(&segments, SelectionStrategy::Basic, 20), Some(0));
    }

    #[test]
    fn empty_and_ineligible_segments_are_excluded() {
        let segments = [seg(0, 0, 0.0), seg(400, 0, 0.0), seg(800, 0, 0.0)];
        let mut rng = 1u64;
        let picked = select_segment(
            &segments,
            &|i| i != 2, // say 2 is the active segment
            SEG,
            SelectionStrategy::Basic,
            50,
            &mut rng,
        );
        assert_eq!(picked, Some(1));
        let none = select_segment(&segments, &|_| false, SEG, SelectionStrategy::Basic, 50, &mut rng);
        assert_eq!(none, None);
    }

    #[test]
    fn timestamp_strategy_uses_adjusted_average_age() {
        // same utilization; b's stored average age dominates a's staleness
        let segments = [seg(500, 0, 5.0), seg(500, 50, 100.0)];
        assert_eq!(pick(&segments, SelectionStrategy::TimestampAge, 60), Some(1));
        // hot-to-cold exclusion elsewhere can make a fuller, recently
        // reorganized segment look younger than an emptier old one
        let segments = [seg(900, 0, 0.0), seg(300, 0, 200.0)];
        assert_eq!(pick(&segments, SelectionStrategy::TimestampAge, 10), Some(1));
    }

    #[test]
    fn random_strategy_is_seed_deterministic() {
        let segments = [seg(10, 0, 0.0), seg(20, 0, 0.0), seg(30, 0, 0.0)];
        let run = |seed: u64| {
            let mut rng = seed;
            (0..10)
                .map(|_| {
                    select_segment(&segments, &|_| true, SEG, SelectionStrategy::Random, 0, &mut rng)
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(99), run(99));
        assert_ne!(run(99), run(100));
    }

    #[test]
    fn ties_break_to_the_lowest_index() {
        let segments = [seg(500, 0, 0.0), seg(500, 0, 0.0), seg(500, 0, 0.0)];
        assert_eq!(pick(&segments, SelectionStrategy::Basic, 10), Some(0));
        assert_eq!(pick(&segments, SelectionStrategy::TimestampAge, 10), Some(0));
    }
}
