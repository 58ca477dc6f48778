//! The benchmark driver: load phase, update phase, metrics sampling and
//! recovery verification against the shadow oracle.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use zonelog::{BackendKind, ChunkId, Config, Engine, SelectionStrategy, ZoneId};

use crate::metrics::{SampleRow, Summary};
use crate::oracle::{payload_bytes, ShadowOracle};
use crate::workload::{Distribution, UpdateStream, WorkloadSpec};

pub const MIB: usize = 1024 * 1024;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Buffered,
    Direct,
    Raw,
}

impl From<BackendArg> for BackendKind {
    fn from(arg: BackendArg) -> BackendKind {
        match arg {
            BackendArg::Buffered => BackendKind::Buffered,
            BackendArg::Direct => BackendKind::Direct,
            BackendArg::Raw => BackendKind::Raw,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Basic,
    Timestamp,
    Random,
}

impl From<StrategyArg> for SelectionStrategy {
    fn from(arg: StrategyArg) -> SelectionStrategy {
        match arg {
            StrategyArg::Basic => SelectionStrategy::Basic,
            StrategyArg::Timestamp => SelectionStrategy::TimestampAge,
            StrategyArg::Random => SelectionStrategy::Random,
        }
    }
}

/// Everything a run needs; persisted as bench.json alongside the logs so
/// `bench recover` can reopen the engine identically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    pub spec: WorkloadSpec,
    pub backend: BackendArg,
    pub strategy: StrategyArg,
    pub data_dir: PathBuf,
    pub zone_capacity: u64,
    pub segment_size: usize,
    pub write_buffer: usize,
    pub two_level_threshold: usize,
    pub two_level_enabled: bool,
    pub version_buffer: usize,
    pub primary_log: u64,
    pub overprovision: f64,
    pub activation_fraction: f64,
    pub prompt_fraction: f64,
    pub timestamps: bool,
    pub checksums: bool,
    pub htct_threshold_s: u32,
    pub threaded: bool,
    pub sample_every: u64,
}

impl BenchConfig {
    /// Desk-scale defaults: 1 MiB segments and 16 MiB zones, scaled from
    /// the production 8 MiB / 256 MiB shape.
    pub fn desk(spec: WorkloadSpec, data_dir: PathBuf) -> Self {
        BenchConfig {
            spec,
            backend: BackendArg::Buffered,
            strategy: StrategyArg::Basic,
            data_dir,
            zone_capacity: 16 * MIB as u64,
            segment_size: MIB,
            write_buffer: 4 * MIB,
            two_level_threshold: 128 * 1024,
            two_level_enabled: true,
            version_buffer: MIB,
            primary_log: 32 * MIB as u64,
            overprovision: 2.0,
            activation_fraction: 0.60,
            prompt_fraction: 0.75,
            timestamps: false,
            checksums: true,
            htct_threshold_s: 600,
            threaded: false,
            sample_every: 2000,
        }
    }

    pub fn engine_config(&self) -> Config {
        let mut cfg = Config::new(&self.data_dir);
        cfg.backend = self.backend.into();
        cfg.strategy = self.strategy.into();
        cfg.strategy_seed = self.spec.seed;
        cfg.zone_capacity_bytes = self.zone_capacity;
        cfg.segment_size_bytes = self.segment_size;
        cfg.write_buffer_bytes = self.write_buffer;
        cfg.flush_threshold_bytes = self.write_buffer / 2;
        cfg.two_level_threshold_bytes = self.two_level_threshold;
        cfg.two_level_enabled = self.two_level_enabled;
        cfg.version_buffer_bytes = self.version_buffer;
        cfg.primary_log_bytes = self.primary_log;
        cfg.overprovision_factor = self.overprovision;
        cfg.activation_fraction = self.activation_fraction;
        cfg.prompt_fraction = self.prompt_fraction;
        cfg.timestamps_enabled = self.timestamps || self.strategy == StrategyArg::Timestamp;
        cfg.checksums_enabled = self.checksums;
        cfg.htct_threshold_s = self.htct_threshold_s;
        // size the raw pseudo-partition for the zone count plus slack
        let zones = self.spec.zone_count();
        cfg.raw_partition_bytes = self.primary_log
            + zones * (cfg.secondary_log_bytes() + 2 * cfg.version_block_bytes)
            + 64 * MIB as u64;
        cfg.raw_index_entries = (3 * zones as usize + 64).next_multiple_of(64);
        cfg
    }

    pub fn save(&self, path: &std::path::Path) -> anyhow::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<BenchConfig> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

pub struct RunOutcome {
    pub oracle: ShadowOracle,
    pub samples: Vec<SampleRow>,
    pub summary: Summary,
}

fn zone_id_of(spec: &WorkloadSpec, chunk_index: u64) -> ZoneId {
    ZoneId::new(1, spec.zone_of(chunk_index) as u16)
}

/// Runs the load phase and the distribution-driven update phase. With
/// `crash_after` the run stops once that many operations were acked and
/// routed, without any final flush: a simulated power cut.
pub fn run_workload(
    bench: &BenchConfig,
    engine: &Engine,
    crash_after: Option<u64>,
) -> anyhow::Result<RunOutcome> {
    let spec = &bench.spec;
    spec.validate()?;
    anyhow::ensure!(spec.zone_count() <= u16::MAX as u64, "zone count exceeds range IDs");

    for z in 0..spec.zone_count() {
        engine.create_zone(ZoneId::new(1, z as u16))?;
    }
    if bench.threaded && crash_after.is_none() {
        engine.start_runner();
    }

    let mut oracle = ShadowOracle::default();
    let mut samples = Vec::new();
    let mut ops = 0u64;
    let start = Instant::now();
    let mut crashed = false;

    let sample = |engine: &Engine, samples: &mut Vec<SampleRow>, phase: u8, ops: u64, start: &Instant| {
        for (zone, used, file) in engine.zone_utilization() {
            samples.push(SampleRow {
                phase,
                ops,
                elapsed_ms: start.elapsed().as_millis() as u64,
                zone: zone.to_string(),
                used_bytes: used,
                file_bytes: file,
            });
        }
    };

    // Phase 1: sequential load of every chunk, in batches.
    'load: for batch_start in (0..spec.chunk_count).step_by(spec.batch as usize) {
        let end = (batch_start + spec.batch).min(spec.chunk_count);
        for i in batch_start..end {
            let chunk = ChunkId::new(1, i);
            let payload = payload_bytes(chunk, oracle.next_seq(chunk), spec.chunk_size);
            let stamp = engine.ingest(zone_id_of(spec, i), chunk, &payload)?;
            oracle.record_write(chunk, stamp, &payload);
            ops += 1;
            if ops % bench.sample_every == 0 {
                sample(engine, &mut samples, 1, ops, &start);
            }
            if Some(ops) == crash_after {
                crashed = true;
                break 'load;
            }
        }
    }

    // Phase 2: updates per the access distribution; tables are built up
    // front by the stream. Only this phase counts toward throughput.
    let phase2_start = Instant::now();
    let phase2_first_op = ops;
    if !crashed {
        'update: for batch in UpdateStream::new(spec) {
            for i in batch {
                let chunk = ChunkId::new(1, i);
                let payload = payload_bytes(chunk, oracle.next_seq(chunk), spec.chunk_size);
                let stamp = engine.ingest(zone_id_of(spec, i), chunk, &payload)?;
                oracle.record_write(chunk, stamp, &payload);
                ops += 1;
                if ops % bench.sample_every == 0 {
                    sample(engine, &mut samples, 2, ops, &start);
                }
                if Some(ops) == crash_after {
                    crashed = true;
                    break 'update;
                }
            }
        }
    }
    let phase2_elapsed = phase2_start.elapsed();

    if crashed {
        // route everything acked (the crash-point contract), nothing more:
        // no secondary log buffer or version buffer flushes
        while engine.pump()? {}
    } else if bench.threaded {
        engine.shutdown()?;
    } else {
        engine.priority_flush()?;
    }
    sample(engine, &mut samples, if crashed { 2 } else { 3 }, ops, &start);

    let stats = engine.stats();
    let phase2_ops = ops.saturating_sub(phase2_first_op);
    let below = samples
        .iter()
        .filter(|s| (s.used_bytes as f64) < 0.8 * s.file_bytes as f64)
        .count();
    let summary = Summary {
        distribution: spec.distribution.name().to_string(),
        backend: format!("{:?}", bench.backend).to_lowercase(),
        strategy: format!("{:?}", bench.strategy).to_lowercase(),
        chunk_count: spec.chunk_count,
        chunk_size: spec.chunk_size,
        zones: spec.zone_count(),
        seed: spec.seed,
        ops_total: ops,
        phase2_ops,
        phase2_seconds: phase2_elapsed.as_secs_f64(),
        phase2_entries_per_s: phase2_ops as f64 / phase2_elapsed.as_secs_f64().max(1e-9),
        phase2_bytes_per_s: (phase2_ops as usize * spec.chunk_size) as f64
            / phase2_elapsed.as_secs_f64().max(1e-9),
        avg_write_access_bytes: stats.avg_write_access_bytes(),
        max_write_access_bytes: stats.max_data_write_bytes,
        data_writes: stats.data_writes,
        primary_writes: stats.primary_writes,
        primary_wraps: stats.primary_wraps,
        reorg_passes: stats.reorg_passes,
        reorg_segments: stats.reorg_segments,
        freed_bytes: stats.freed_bytes,
        urgent_requests: stats.urgent_requests,
        prompt_requests: stats.prompt_requests,
        version_flushes: stats.version_flushes,
        checksum_drops: stats.checksum_drops,
        samples: samples.len() as u64,
        samples_below_080: below as u64,
        crashed,
        verification: None,
    };

    Ok(RunOutcome {
        oracle,
        samples,
        summary,
    })
}

/// Picks a deterministic crash point for a given trial: an operation index
/// strictly after the load of the first batch and at most the total ops.
pub fn crash_point(spec: &WorkloadSpec, trial_seed: u64) -> u64 {
    let total = spec.chunk_count + spec.updates();
    let mut state = trial_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    spec.batch + state % (total - spec.batch)
}

/// Distribution self-checks used by the verification path.
pub fn distribution_name(d: Distribution) -> &'static str {
    d.name()
}
