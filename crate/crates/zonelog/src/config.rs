//! Engine configuration.

use std::path::PathBuf;

use crate::error::{Error, Result};

pub const KIB: usize = 1024;
pub const MIB: usize = 1024 * 1024;

/// Which disk access mode backs the logs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BackendKind {
    /// Plain files through the OS page cache.
    Buffered,
    /// Files opened with O_DIRECT + O_DSYNC; all physical I/O page-aligned.
    Direct,
    /// A raw-partition emulation: one backing file laid out as partition
    /// header, index block and data region.
    Raw,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Buffered => "buffered",
            BackendKind::Direct => "direct",
            BackendKind::Raw => "raw",
        }
    }
}

/// Segment selection strategy of the reorganizer.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SelectionStrategy {
    /// max((now - last reorganization) * utilization)
    Basic,
    /// max(utilization * adjusted average byte age); requires timestamps.
    TimestampAge,
    /// Seeded uniform choice among eligible segments.
    Random,
}

/// One free-list class of the sorting buffer pool.
#[derive(Clone, Copy, Debug)]
pub struct PoolClass {
    pub count: usize,
    pub buffer_bytes: usize,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub data_dir: PathBuf,
    pub backend: BackendKind,
    pub page_size: usize,

    /// Ring buffer capacity for ingest.
    pub write_buffer_bytes: usize,
    /// Occupancy that triggers a flush of the write buffer.
    pub flush_threshold_bytes: usize,
    /// Periodic flush interval of the threaded runner.
    pub flush_interval_ms: u64,

    /// Batches under this size go to the primary log + secondary log buffer,
    /// batches at or above it directly to the secondary log. Also the
    /// capacity of each secondary log buffer. 0 routes everything directly.
    pub two_level_threshold_bytes: usize,
    /// Disables the primary log entirely (secondary log buffers remain).
    pub two_level_enabled: bool,

    pub zone_capacity_bytes: u64,
    pub segment_size_bytes: usize,
    /// Secondary log file size = zone capacity * this factor.
    pub overprovision_factor: f64,
    pub primary_log_bytes: u64,

    pub version_buffer_bytes: usize,
    /// Fraction of the version buffer that triggers an epoch flush.
    pub version_flush_threshold: f64,

    /// Log utilization (fraction of zone capacity) making a log eligible for
    /// periodic reorganization.
    pub activation_fraction: f64,
    /// Utilization at which the writer registers a prompt request.
    pub prompt_fraction: f64,
    pub strategy: SelectionStrategy,
    pub strategy_seed: u64,
    /// Hot-to-cold transformation threshold in seconds: valid entries older
    /// than this are excluded from a segment's average age.
    pub htct_threshold_s: u32,
    /// Store 4-byte creation timestamps in entry headers.
    pub timestamps_enabled: bool,
    /// Weight the average segment age by entry size instead of entry count.
    pub byte_weighted_age: bool,

    pub checksums_enabled: bool,

    /// Buffer pool classes; `None` derives the defaults from the segment
    /// size (64 x 1/16, 32 x 1/8, 8 x 1 segment).
    pub pool_classes: Option<[PoolClass; 3]>,

    /// Backing file size of a raw pseudo-partition.
    pub raw_partition_bytes: u64,
    pub raw_index_entries: usize,
    /// Allocation granule for version logs in the raw partition.
    pub version_block_bytes: u64,
}

impl Config {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Config {
            data_dir: data_dir.into(),
            backend: BackendKind::Buffered,
            page_size: 4096,
            write_buffer_bytes: 32 * MIB,
            flush_threshold_bytes: 16 * MIB,
            flush_interval_ms: 100,
            two_level_threshold_bytes: 128 * KIB,
            two_level_enabled: true,
            zone_capacity_bytes: 256 * MIB as u64,
            segment_size_bytes: 8 * MIB,
            overprovision_factor: 2.0,
            primary_log_bytes: 256 * MIB as u64,
            version_buffer_bytes: MIB,
            version_flush_threshold: 0.65,
            activation_fraction: 0.60,
            prompt_fraction: 0.75,
            strategy: SelectionStrategy::Basic,
            strategy_seed: 0,
            htct_threshold_s: 600,
            timestamps_enabled: false,
            byte_weighted_age: true,
            checksums_enabled: true,
            pool_classes: None,
            raw_partition_bytes: 1024 * MIB as u64,
            raw_index_entries: 1024,
            version_block_bytes: 16 * MIB as u64,
        }
    }

    /// Maximum payload bytes of a single log entry: half a segment.
    pub fn max_entry_size(&self) -> usize {
        self.segment_size_bytes / 2
    }

    /// Secondary log file size: overprovisioned zone capacity, rounded up to
    /// whole segments.
    pub fn secondary_log_bytes(&self) -> u64 {
        let raw = (self.zone_capacity_bytes as f64 * self.overprovision_factor) as u64;
        let seg = self.segment_size_bytes as u64;
        raw.div_ceil(seg) * seg
    }

    pub fn segments_per_log(&self) -> usize {
        (self.secondary_log_bytes() / self.segment_size_bytes as u64) as usize
    }

    pub fn pool_classes(&self) -> [PoolClass; 3] {
        self.pool_classes.unwrap_or([
            PoolClass {
                count: 64,
                buffer_bytes: (self.segment_size_bytes / 16).max(self.page_size),
            },
            PoolClass {
                count: 32,
                buffer_bytes: (self.segment_size_bytes / 8).max(self.page_size),
            },
            PoolClass {
                count: 8,
                buffer_bytes: self.segment_size_bytes,
            },
        ])
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !self.page_size.is_power_of_two() {
            return err(format!("page size {} is not a power of two", self.page_size));
        }
        if self.segment_size_bytes % self.page_size != 0 {
            return err(format!(
                "segment size {} is not a multiple of the page size {}",
                self.segment_size_bytes, self.page_size
            ));
        }
        if self.max_entry_size() >= 1 << 23 {
            return err(format!(
                "segment size {} pushes the maximum entry size past 2^23 - 1",
                self.segment_size_bytes
            ));
        }
        if self.flush_threshold_bytes > self.write_buffer_bytes {
            return err("flush threshold exceeds the write buffer capacity".into());
        }
        if self.two_level_threshold_bytes > self.segment_size_bytes {
            return err("two-level threshold exceeds the segment size".into());
        }
        if self.two_level_enabled && self.primary_log_bytes <= self.write_buffer_bytes as u64 {
            return err("primary log must be larger than the write buffer".into());
        }
        if self.primary_log_bytes % self.page_size as u64 != 0 {
            return err("primary log size is not a multiple of the page size".into());
        }
        if self.strategy == SelectionStrategy::TimestampAge && !self.timestamps_enabled {
            return err("the timestamp strategy requires timestamps_enabled".into());
        }
        if !(0.0..=1.0).contains(&self.version_flush_threshold)
            || !(0.0..=1.0).contains(&self.activation_fraction)
            || !(0.0..=1.0).contains(&self.prompt_fraction)
        {
            return err("fractional thresholds must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::new("/tmp/x").validate().unwrap();
    }

    #[test]
    fn default_pool_classes_match_segment_size() {
        let cfg = Config::new("/tmp/x");
        let classes = cfg.pool_classes();
        assert_eq!(classes[0].buffer_bytes, MIB / 2);
        assert_eq!(classes[1].buffer_bytes, MIB);
        assert_eq!(classes[2].buffer_bytes, 8 * MIB);
        assert_eq!(
            (classes[0].count, classes[1].count, classes[2].count),
            (64, 32, 8)
        );
    }

    #[test]
    fn timestamp_strategy_requires_timestamps() {
        let mut cfg = Config::new("/tmp/x");
        cfg.strategy = SelectionStrategy::TimestampAge;
        assert!(cfg.validate().is_err());
        cfg.timestamps_enabled = true;
        cfg.validate().unwrap();
    }
}
