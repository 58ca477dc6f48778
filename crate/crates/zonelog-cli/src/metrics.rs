//! Metrics emission: a per-sample utilization CSV and one summary JSON
//! document.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One per-zone utilization sample. Phase 1 is the load, 2 the updates,
/// 3 the post-flush final state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleRow {
    pub phase: u8,
    pub ops: u64,
    pub elapsed_ms: u64,
    pub zone: String,
    pub used_bytes: u64,
    pub file_bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub distribution: String,
    pub backend: String,
    pub strategy: String,
    pub chunk_count: u64,
    pub chunk_size: usize,
    pub zones: u64,
    pub seed: u64,
    pub ops_total: u64,
    pub phase2_ops: u64,
    pub phase2_seconds: f64,
    pub phase2_entries_per_s: f64,
    pub phase2_bytes_per_s: f64,
    pub avg_write_access_bytes: f64,
    pub max_write_access_bytes: u64,
    pub data_writes: u64,
    pub primary_writes: u64,
    pub primary_wraps: u64,
    pub reorg_passes: u64,
    pub reorg_segments: u64,
    pub freed_bytes: u64,
    pub urgent_requests: u64,
    pub prompt_requests: u64,
    pub version_flushes: u64,
    pub checksum_drops: u64,
    pub samples: u64,
    pub samples_below_080: u64,
    pub crashed: bool,
    pub verification: Option<String>,
}

impl Summary {
    pub fn utilization_below_080_fraction(&self) -> f64 {
        if self.samples == 0 {
            1.0
        } else {
            self.samples_below_080 as f64 / self.samples as f64
        }
    }
}

pub fn write_samples_csv(path: &Path, samples: &[SampleRow]) -> anyhow::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "phase,ops,elapsed_ms,zone,used_bytes,file_bytes,utilization")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6}",
            s.phase,
            s.ops,
            s.elapsed_ms,
            s.zone,
            s.used_bytes,
            s.file_bytes,
            s.used_bytes as f64 / s.file_bytes as f64
        )?;
    }
    Ok(())
}

pub fn write_summary_json(path: &Path, summary: &Summary) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(summary)?)?;
    Ok(())
}
