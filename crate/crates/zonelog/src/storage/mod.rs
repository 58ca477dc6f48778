//! Pluggable block storage backends.
//!
//! Three access modes back the logs: OS-buffered files, O_DIRECT files with
//! strictly page-aligned physical I/O, and a raw-partition emulation that
//! lays logs out inside one backing file behind an index block. All three
//! present the same positioned read/write/truncate surface, so any operation
//! sequence produces identical logical bytes on each.

mod aligned;
mod buffered;
mod direct;
mod raw;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub use aligned::AlignedBuf;

use crate::chunk::ZoneId;
use crate::config::{BackendKind, Config};
use crate::error::{Error, Result};

/// Positioned access to one log's bytes.
///
/// `write_at` may rearrange bytes inside the buffer to satisfy alignment
/// (the caller hands the buffer over for the duration of the write).
pub trait LogStore: Send {
    fn write_at(&mut self, pos: u64, buf: &mut AlignedBuf, off: usize, len: usize) -> Result<()>;

    /// Reads up to `len` bytes from `pos` into the start of the buffer's
    /// data region; short reads mean end of data.
    fn read_at(&mut self, pos: u64, buf: &mut AlignedBuf, len: usize) -> Result<usize>;

    fn truncate(&mut self, new_len: u64) -> Result<()>;

    /// Logical length.
    fn len(&mut self) -> Result<u64>;
}

/// The logs the engine owns, mapped to file or raw-index names.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LogName {
    Primary,
    Secondary(ZoneId),
    Version(ZoneId),
}

impl LogName {
    pub fn file_name(&self) -> String {
        match self {
            LogName::Primary => "primary.log".to_string(),
            LogName::Secondary(zone) => format!("{}_{}.sec", zone.creator, zone.range_id),
            LogName::Version(zone) => format!("{}_{}.ver", zone.creator, zone.range_id),
        }
    }

    fn parse(name: &str) -> Option<LogName> {
        if name == "primary.log" {
            return Some(LogName::Primary);
        }
        let (stem, kind) = name.rsplit_once('.')?;
        let (creator, range_id) = stem.split_once('_')?;
        let zone = ZoneId::new(creator.parse().ok()?, range_id.parse().ok()?);
        match kind {
            "sec" => Some(LogName::Secondary(zone)),
            "ver" => Some(LogName::Version(zone)),
            _ => None,
        }
    }
}

/// Physical I/O counters, shared across all handles of one engine.
///
/// The direct backend classifies every write by the alignment situation it
/// handled: (1) aligned start and end, (2) aligned start with an unaligned
/// end, (3) unaligned buffer offset, (4) unaligned file position. It also
/// counts any physical I/O that violates page alignment; that counter
/// staying zero is an invariant.
#[derive(Default)]
pub struct IoStats {
    pub phys_writes: AtomicU64,
    pub phys_write_bytes: AtomicU64,
    pub phys_reads: AtomicU64,
    pub phys_read_bytes: AtomicU64,
    pub unaligned_ios: AtomicU64,
    pub situations: [AtomicU64; 4],
    /// Opens where the filesystem refused O_DIRECT and page-cache I/O with
    /// the same alignment discipline was used instead.
    pub direct_fallbacks: AtomicU64,
}

impl IoStats {
    pub fn situation_counts(&self) -> [u64; 4] {
        [
            self.situations[0].load(Ordering::Relaxed),
            self.situations[1].load(Ordering::Relaxed),
            self.situations[2].load(Ordering::Relaxed),
            self.situations[3].load(Ordering::Relaxed),
        ]
    }

    pub fn unaligned(&self) -> u64 {
        self.unaligned_ios.load(Ordering::Relaxed)
    }

    fn record_write(&self, pos: u64, len: usize, ptr: *const u8, page: usize) {
        self.phys_writes.fetch_add(1, Ordering::Relaxed);
        self.phys_write_bytes.fetch_add(len as u64, Ordering::Relaxed);
        if pos % page as u64 != 0 || len % page != 0 || ptr as usize % page != 0 {
            self.unaligned_ios.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn record_read(&self, pos: u64, len: usize, ptr: *const u8, page: usize) {
        self.phys_reads.fetch_add(1, Ordering::Relaxed);
        self.phys_read_bytes.fetch_add(len as u64, Ordering::Relaxed);
        if pos % page as u64 != 0 || len % page != 0 || ptr as usize % page != 0 {
            self.unaligned_ios.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn record_situation(&self, situation: usize) {
        self.situations[situation - 1].fetch_add(1, Ordering::Relaxed);
    }
}

/// Opens per-log stores for one engine instance.
pub struct StorageProvider {
    kind: BackendKind,
    dir: PathBuf,
    page: usize,
    stats: Arc<IoStats>,
    raw: Mutex<Option<Arc<Mutex<raw::RawPartition>>>>,
    raw_partition_bytes: u64,
    raw_index_entries: usize,
    version_block_bytes: u64,
}

impl StorageProvider {
    pub fn new(cfg: &Config, stats: Arc<IoStats>) -> Self {
        StorageProvider {
            kind: cfg.backend,
            dir: cfg.data_dir.clone(),
            page: cfg.page_size,
            stats,
            raw: Mutex::new(None),
            raw_partition_bytes: cfg.raw_partition_bytes,
            raw_index_entries: cfg.raw_index_entries,
            version_block_bytes: cfg.version_block_bytes,
        }
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn stats(&self) -> &Arc<IoStats> {
        &self.stats
    }

    fn partition(&self) -> Result<Arc<Mutex<raw::RawPartition>>> {
        let mut guard = self.raw.lock().unwrap();
        if let Some(part) = guard.as_ref() {
            return Ok(Arc::clone(part));
        }
        let path = self.dir.join("partition.raw");
        let part = raw::RawPartition::open_or_create(
            &path,
            self.raw_partition_bytes,
            self.raw_index_entries,
            self.page,
            self.version_block_bytes,
            Arc::clone(&self.stats),
        )?;
        let part = Arc::new(Mutex::new(part));
        *guard = Some(Arc::clone(&part));
        Ok(part)
    }

    /// Opens (creating and zero-filling if absent) the named log.
    ///
    /// `size` is the fixed file size for primary and secondary logs and must
    /// be a page multiple in direct and raw modes; version logs pass 0 and
    /// grow by appending.
    pub fn open_log(&self, name: LogName, size: u64) -> Result<Box<dyn LogStore>> {
        if self.kind != BackendKind::Buffered && size % self.page as u64 != 0 {
            return Err(Error::Config(format!(
                "log size {size} is not a multiple of the page size under the {} backend",
                self.kind.name()
            )));
        }
        match self.kind {
            BackendKind::Buffered => {
                let path = self.dir.join(name.file_name());
                Ok(Box::new(buffered::BufferedFile::open(&path, size)?))
            }
            BackendKind::Direct => {
                let path = self.dir.join(name.file_name());
                Ok(Box::new(direct::DirectFile::open(
                    &path,
                    size,
                    self.page,
                    Arc::clone(&self.stats),
                )?))
            }
            BackendKind::Raw => {
                let part = self.partition()?;
                raw::RawLogStore::open(part, name, size)
            }
        }
    }

    /// Zones present on storage, from file names or the raw index.
    pub fn list_zones(&self) -> Result<Vec<ZoneId>> {
        let mut zones = Vec::new();
        match self.kind {
            BackendKind::Raw => {
                let part = self.partition()?;
                let part = part.lock().unwrap();
                for name in part.log_names() {
                    if let Some(LogName::Secondary(zone)) = LogName::parse(&name) {
                        zones.push(zone);
                    }
                }
            }
            _ => {
                if self.dir.exists() {
                    for dirent in std::fs::read_dir(&self.dir)? {
                        let dirent = dirent?;
                        if let Some(name) = dirent.file_name().to_str() {
                            if let Some(LogName::Secondary(zone)) = LogName::parse(name) {
                                zones.push(zone);
                            }
                        }
                    }
                }
            }
        }
        zones.sort();
        Ok(zones)
    }

    /// Whether a primary log already exists on storage.
    pub fn primary_exists(&self) -> Result<bool> {
        match self.kind {
            BackendKind::Raw => {
                let part = self.partition()?;
                let part = part.lock().unwrap();
                Ok(part.log_names().iter().any(|n| n == "primary.log"))
            }
            _ => Ok(self.dir.join("primary.log").exists()),
        }
    }
}

pub(crate) fn round_up(value: usize, page: usize) -> usize {
    value.div_ceil(page) * page
}
