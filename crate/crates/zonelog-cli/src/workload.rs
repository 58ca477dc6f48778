//! Workload generation: a sequential load phase followed by updates drawn
//! from one of four access distributions, in batches of ten with zone
//! locality.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Sequential,
    Random,
    Zipf,
    HotNCold,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Sequential => "seq",
            Distribution::Random => "rand",
            Distribution::Zipf => "zipf",
            Distribution::HotNCold => "hnc",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub distribution: Distribution,
    pub chunk_count: u64,
    pub chunk_size: usize,
    /// Update phase issues `update_factor * chunk_count` writes.
    pub update_factor: u32,
    pub batch: u64,
    pub skew: f64,
    pub seed: u64,
    /// Chunks per backup zone (every zone holds a contiguous ID range).
    pub chunks_per_zone: u64,
}

impl WorkloadSpec {
    pub fn zone_count(&self) -> u64 {
        self.chunk_count.div_ceil(self.chunks_per_zone)
    }

    pub fn zone_of(&self, chunk_index: u64) -> u64 {
        chunk_index / self.chunks_per_zone
    }

    pub fn updates(&self) -> u64 {
        self.chunk_count * self.update_factor as u64
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.chunk_count >= self.batch, "need at least one batch of chunks");
        anyhow::ensure!(self.batch >= 1, "batch must be positive");
        anyhow::ensure!(self.chunks_per_zone >= self.batch, "zones must hold a whole batch");
        let last_zone = self.chunk_count - (self.zone_count() - 1) * self.chunks_per_zone;
        anyhow::ensure!(
            last_zone >= self.batch,
            "the last zone holds {last_zone} chunks, fewer than one batch"
        );
        anyhow::ensure!(self.skew > 0.0, "zipf skew must be positive");
        Ok(())
    }
}

/// Splits `chunk_count` into zones of at most `target_per_zone` chunks
/// (so a zone's live set fits its capacity), shrinking the zone count when
/// needed until the trailing zone can hold a whole batch.
pub fn zone_layout(chunk_count: u64, target_per_zone: u64, batch: u64) -> u64 {
    let mut zones = chunk_count.div_ceil(target_per_zone.max(batch)).max(1);
    loop {
        let per_zone = chunk_count.div_ceil(zones).max(batch);
        let zones_eff = chunk_count.div_ceil(per_zone);
        let last = chunk_count - (zones_eff - 1) * per_zone;
        if last >= batch || zones_eff <= 1 {
            return per_zone;
        }
        zones = zones_eff - 1;
    }
}

/// Completes a batch around an anchor: the nine following chunks, or the
/// nine preceding ones when the run would cross the anchor's zone end.
/// All IDs stay within one zone (zones hold at least one batch).
pub fn complete_batch(spec: &WorkloadSpec, anchor: u64) -> Vec<u64> {
    let zone = spec.zone_of(anchor);
    let zone_start = zone * spec.chunks_per_zone;
    let zone_end = ((zone + 1) * spec.chunks_per_zone).min(spec.chunk_count);
    let n = spec.batch;
    if anchor + n <= zone_end {
        (anchor..anchor + n).collect()
    } else if anchor >= zone_start + n - 1 {
        (anchor + 1 - n..=anchor).collect()
    } else {
        // zone barely larger than a batch: anchor sits in both runs
        (zone_start..zone_start + n).collect()
    }
}

/// The zipf lookup tables: aggregated probabilities and a chunk-index
/// permutation scrambling ranks over the ID space.
pub struct ZipfTables {
    pub cumulative: Vec<f64>,
    pub permutation: Vec<u64>,
}

/// The rank weight 1/rank^skew (rank starts at 1). Skew 1 is the harmonic
/// series, computed by plain division so small-rank ratios are exact.
pub fn zipf_weight(rank: u64, skew: f64) -> f64 {
    if skew == 1.0 {
        1.0 / rank as f64
    } else {
        (rank as f64).powf(-skew)
    }
}

pub fn build_zipf_tables(n: u64, skew: f64, seed: u64) -> ZipfTables {
    let mut h = 0.0f64;
    for rank in 1..=n {
        h += zipf_weight(rank, skew);
    }
    let mut cumulative = Vec::with_capacity(n as usize);
    let mut acc = 0.0f64;
    for rank in 1..=n {
        acc += zipf_weight(rank, skew);
        cumulative.push(acc / h);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x21F0_57A1);
    let mut permutation: Vec<u64> = (0..n).collect();
    for i in (1..permutation.len()).rev() {
        let j = rng.gen_range(0..=i);
        permutation.swap(i, j);
    }
    ZipfTables { cumulative, permutation }
}

/// Draws p in [0, 1), binary-searches the aggregated table and maps the
/// rank through the permutation.
pub fn pick_zipf(tables: &ZipfTables, rng: &mut ChaCha12Rng) -> u64 {
    let p: f64 = rng.gen_range(0.0..1.0);
    let idx = tables.cumulative.partition_point(|&c| c <= p);
    tables.permutation[idx.min(tables.permutation.len() - 1)]
}

/// Hot-and-cold partitions: 10% of the chunks are hot and receive 90% of
/// the updates.
pub struct HotNColdTables {
    pub hot: Vec<u64>,
    pub cold: Vec<u64>,
}

pub fn build_hotncold(n: u64, seed: u64) -> HotNColdTables {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x407C_01D5);
    let mut hot = Vec::new();
    let mut cold = Vec::new();
    for chunk in 0..n {
        if rng.gen_range(0.0..1.0) < 0.1 {
            hot.push(chunk);
        } else {
            cold.push(chunk);
        }
    }
    // degenerate partitions still must be drawable
    if hot.is_empty() {
        hot.push(0);
    }
    if cold.is_empty() {
        cold.push(n.saturating_sub(1));
    }
    HotNColdTables { hot, cold }
}

pub fn pick_hotncold(tables: &HotNColdTables, rng: &mut ChaCha12Rng) -> u64 {
    if rng.gen_range(0.0..1.0) < 0.9 {
        tables.hot[rng.gen_range(0..tables.hot.len())]
    } else {
        tables.cold[rng.gen_range(0..tables.cold.len())]
    }
}

/// Uniform anchor for the random distribution.
pub fn pick_random(n: u64, rng: &mut ChaCha12Rng) -> u64 {
    rng.gen_range(0..n)
}

/// The full update-phase anchor stream of a workload, as an iterator of
/// batches.
pub struct UpdateStream<'a> {
    spec: &'a WorkloadSpec,
    rng: ChaCha12Rng,
    zipf: Option<ZipfTables>,
    hotncold: Option<HotNColdTables>,
    issued: u64,
    sequential_cursor: u64,
}

impl<'a> UpdateStream<'a> {
    /// Distribution tables are generated up front, before phase 2 begins.
    pub fn new(spec: &'a WorkloadSpec) -> Self {
        let zipf = (spec.distribution == Distribution::Zipf)
            .then(|| build_zipf_tables(spec.chunk_count, spec.skew, spec.seed));
        let hotncold = (spec.distribution == Distribution::HotNCold)
            .then(|| build_hotncold(spec.chunk_count, spec.seed));
        UpdateStream {
            spec,
            rng: ChaCha12Rng::seed_from_u64(spec.seed),
            zipf,
            hotncold,
            issued: 0,
            sequential_cursor: 0,
        }
    }

    pub fn remaining(&self) -> u64 {
        self.spec.updates().saturating_sub(self.issued)
    }
}

impl Iterator for UpdateStream<'_> {
    type Item = Vec<u64>;

    fn next(&mut self) -> Option<Vec<u64>> {
        if self.issued >= self.spec.updates() {
            return None;
        }
        let spec = self.spec;
        let batch = match spec.distribution {
            Distribution::Sequential => {
                let start = self.sequential_cursor;
                let ids: Vec<u64> = (0..spec.batch)
                    .map(|i| (start + i) % spec.chunk_count)
                    .collect();
                self.sequential_cursor = (start + spec.batch) % spec.chunk_count;
                ids
            }
            Distribution::Random => {
                let anchor = pick_random(spec.chunk_count, &mut self.rng);
                complete_batch(spec, anchor)
            }
            Distribution::Zipf => {
                let anchor = pick_zipf(self.zipf.as_ref().unwrap(), &mut self.rng);
                complete_batch(spec, anchor)
            }
            Distribution::HotNCold => {
                let anchor = pick_hotncold(self.hotncold.as_ref().unwrap(), &mut self.rng);
                complete_batch(spec, anchor)
            }
        };
        let batch: Vec<u64> = batch.into_iter().take(self.remaining() as usize).collect();
        self.issued += batch.len() as u64;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dist: Distribution, n: u64) -> WorkloadSpec {
        WorkloadSpec {
            distribution: dist,
            chunk_count: n,
            chunk_size: 64,
            update_factor: 2,
            batch: 10,
            skew: 1.0,
            seed: 7,
            chunks_per_zone: zone_layout(n, n / 4 + 1, 10),
        }
    }

    #[test]
    fn sequential_updates_cover_every_chunk_evenly() {
        let spec = spec(Distribution::Sequential, 100);
        let mut counts = vec![0u32; 100];
        for batch in UpdateStream::new(&spec) {
            for id in batch {
                counts[id as usize] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c == 2), "update factor 2 everywhere");
    }

    #[test]
    fn batches_stay_within_one_zone() {
        for dist in [Distribution::Random, Distribution::Zipf, Distribution::HotNCold] {
            let spec = spec(dist, 1000);
            for batch in UpdateStream::new(&spec).take(200) {
                let zones: std::collections::HashSet<u64> =
                    batch.iter().map(|&i| spec.zone_of(i)).collect();
                assert_eq!(zones.len(), 1, "{dist:?}: {batch:?}");
            }
        }
    }

    #[test]
    fn anchor_at_zone_end_takes_preceding_chunks() {
        let s = spec(Distribution::Random, 1000);
        let cpz = s.chunks_per_zone;
        // mid-zone anchor: the nine following
        assert_eq!(complete_batch(&s, 3), (3..13).collect::<Vec<_>>());
        // last chunk of a zone: the nine preceding
        let last = cpz - 1;
        assert_eq!(
            complete_batch(&s, last),
            ((last - 9)..=last).collect::<Vec<_>>()
        );
        // three from the end: run would cross, so preceding are used
        let near = cpz - 3;
        assert_eq!(
            complete_batch(&s, near),
            ((near - 9)..=near).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zipf_rank_ratios_are_harmonic() {
        assert_eq!(zipf_weight(1, 1.0) / zipf_weight(2, 1.0), 2.0);
        assert_eq!(zipf_weight(1, 1.0) / zipf_weight(3, 1.0), 3.0);
        let t = build_zipf_tables(1000, 1.0, 1);
        // the table aggregates exactly those weights
        let h: f64 = (1..=1000).map(|r| zipf_weight(r, 1.0)).sum();
        let p1 = t.cumulative[0];
        let p2 = t.cumulative[1] - t.cumulative[0];
        assert!((p1 - 1.0 / h).abs() < 1e-15);
        assert!((p1 / p2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zipf_single_chunk_always_picks_it() {
        let t = build_zipf_tables(1, 1.0, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(pick_zipf(&t, &mut rng), 0);
        }
    }

    #[test]
    fn update_stream_is_seed_deterministic() {
        let s = spec(Distribution::Zipf, 500);
        let a: Vec<Vec<u64>> = UpdateStream::new(&s).collect();
        let b: Vec<Vec<u64>> = UpdateStream::new(&s).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn zone_layout_keeps_last_zone_batch_sized() {
        for n in [100u64, 105, 1000, 99_999, 100_000] {
            for target in [10u64, 30, 1000, 250_000] {
                let per_zone = zone_layout(n, target, 10);
                let zones = n.div_ceil(per_zone);
                let last = n - (zones - 1) * per_zone;
                assert!(last >= 10 || zones == 1, "n={n} target={target}");
                assert!(per_zone >= 10);
            }
        }
    }
}
