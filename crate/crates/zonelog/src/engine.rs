//! The storage engine facade.
//!
//! Role model: any number of threads may *call into* the engine, but the
//! contract is one ingest producer, one pump executor (drain + sort + route
//! + disk writes, serialized by an internal lock) and one reorganizer. In
//! synchronous mode the producer drives the pump and the reorganizer
//! inline; [`Engine::start_runner`] spawns the paper's background threads
//! instead (periodic flushing and reorganization).

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::checksum::crc32c;
use crate::chunk::{ChunkId, ZoneId};
use crate::clock::{Clock, SystemClock};
use crate::config::Config;
use crate::entry::{self, EntryMeta, HeaderForm};
use crate::error::{Error, Result};
use crate::pool::BufferPool;
use crate::primary_log::PrimaryLog;
use crate::secondary_log::SecondaryLog;
use crate::storage::{IoStats, LogName, StorageProvider};
use crate::version::VersionStamp;
use crate::write_buffer::WriteBuffer;
use crate::zone::Zone;

#[derive(Default)]
pub(crate) struct Counters {
    pub ingested_entries: AtomicU64,
    pub ingested_bytes: AtomicU64,
    /// Bulk data writes to primary and secondary logs (for the average
    /// write-access size).
    pub data_writes: AtomicU64,
    pub data_write_bytes: AtomicU64,
    pub max_data_write_bytes: AtomicU64,
    pub primary_writes: AtomicU64,
    pub primary_bytes: AtomicU64,
    pub primary_wraps: AtomicU64,
    pub reorg_passes: AtomicU64,
    pub reorg_segments: AtomicU64,
    pub freed_bytes: AtomicU64,
    pub urgent_requests: AtomicU64,
    pub prompt_requests: AtomicU64,
    pub checksum_drops: AtomicU64,
    pub version_flushes: AtomicU64,
    pub pumps: AtomicU64,
}

/// A point-in-time snapshot of the engine's counters.
#[derive(Clone, Debug, Default)]
pub struct EngineStats {
    pub ingested_entries: u64,
    pub ingested_bytes: u64,
    pub data_writes: u64,
    pub data_write_bytes: u64,
    pub max_data_write_bytes: u64,
    pub primary_writes: u64,
    pub primary_bytes: u64,
    pub primary_wraps: u64,
    pub reorg_passes: u64,
    pub reorg_segments: u64,
    pub freed_bytes: u64,
    pub urgent_requests: u64,
    pub prompt_requests: u64,
    pub checksum_drops: u64,
    pub version_flushes: u64,
    pub pumps: u64,
}

impl EngineStats {
    pub fn avg_write_access_bytes(&self) -> f64 {
        if self.data_writes == 0 {
            0.0
        } else {
            self.data_write_bytes as f64 / self.data_writes as f64
        }
    }
}

pub(crate) struct ReorgShared {
    pub prompt: Mutex<VecDeque<ZoneId>>,
    pub rng: Mutex<u64>,
    /// Periodic passes that freed nothing park the log until it grows.
    pub skip_until: Mutex<HashMap<ZoneId, u64>>,
}

pub(crate) struct EngineShared {
    pub cfg: Config,
    pub clock: Arc<dyn Clock>,
    pub ring: WriteBuffer,
    pub zones: RwLock<BTreeMap<ZoneId, Arc<Zone>>>,
    pub primary: Mutex<Option<PrimaryLog>>,
    pub pool: BufferPool,
    pub storage: StorageProvider,
    pub pump_lock: Mutex<()>,
    pub reorg: ReorgShared,
    pub counters: Counters,
    pub auto_pump: AtomicBool,
    pub in_recovery: AtomicBool,
    pub shutdown: AtomicBool,
    pub wake: Mutex<bool>,
    pub wake_cv: Condvar,
}

pub struct Engine {
    pub(crate) shared: Arc<EngineShared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Engine {
    /// Opens an engine over `cfg.data_dir`, creating the directory and the
    /// primary log as needed and re-attaching any zones already on storage.
    pub fn open(cfg: Config) -> Result<Engine> {
        Self::open_with_clock(cfg, Arc::new(SystemClock::new()))
    }

    pub fn open_with_clock(cfg: Config, clock: Arc<dyn Clock>) -> Result<Engine> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.data_dir)?;
        let stats = Arc::new(IoStats::default());
        let storage = StorageProvider::new(&cfg, stats);
        let pool = BufferPool::new(cfg.pool_classes());
        let shared = Arc::new(EngineShared {
            ring: WriteBuffer::new(cfg.write_buffer_bytes),
            zones: RwLock::new(BTreeMap::new()),
            primary: Mutex::new(None),
            pool,
            storage,
            pump_lock: Mutex::new(()),
            reorg: ReorgShared {
                prompt: Mutex::new(VecDeque::new()),
                rng: Mutex::new(cfg.strategy_seed),
                skip_until: Mutex::new(HashMap::new()),
            },
            counters: Counters::default(),
            auto_pump: AtomicBool::new(true),
            in_recovery: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            wake: Mutex::new(false),
            wake_cv: Condvar::new(),
            clock,
            cfg,
        });

        if shared.cfg.two_level_enabled {
            let store = shared
                .storage
                .open_log(LogName::Primary, shared.cfg.primary_log_bytes)?;
            let mut primary = PrimaryLog::new(
                store,
                shared.cfg.primary_log_bytes,
                shared.cfg.page_size,
            );
            if shared.storage.primary_exists()? {
                // position after any existing content (reopen)
                let pos = crate::recovery::scan_primary_end(&shared, &mut primary)?;
                primary.set_position(pos);
            }
            *shared.primary.lock().unwrap() = Some(primary);
        }

        let engine = Engine {
            shared,
            threads: Mutex::new(Vec::new()),
        };
        for zone in engine.shared.storage.list_zones()? {
            engine.attach_zone(zone)?;
        }
        Ok(engine)
    }

    /// Registers a backup zone: secondary log, secondary log buffer,
    /// version buffer and version log.
    pub fn create_zone(&self, id: ZoneId) -> Result<()> {
        if self.shared.zones.read().unwrap().contains_key(&id) {
            return Err(Error::ZoneExists(id));
        }
        self.attach_zone(id)
    }

    fn attach_zone(&self, id: ZoneId) -> Result<()> {
        let shared = &self.shared;
        let mut zones = shared.zones.write().unwrap();
        if zones.contains_key(&id) {
            return Err(Error::ZoneExists(id));
        }
        let file_size = shared.cfg.secondary_log_bytes();
        let sec_store = shared.storage.open_log(LogName::Secondary(id), file_size)?;
        let mut ver_store = shared.storage.open_log(LogName::Version(id), 0)?;
        let ver_len = ver_store.len()?;
        // resume after the largest epoch any record on disk carries
        let initial_epoch = crate::recovery::version_log_max_epoch(ver_store.as_mut(), ver_len)?
            .map_or(0, |e| e.wrapping_add(1));
        let log = SecondaryLog::new(
            id,
            sec_store,
            shared.cfg.zone_capacity_bytes,
            file_size,
            shared.cfg.segment_size_bytes,
            shared.cfg.page_size,
            shared.cfg.timestamps_enabled,
            shared.cfg.byte_weighted_age,
            shared.clock.now_s(),
        );
        let zone = Zone::new(
            id,
            log,
            ver_store,
            ver_len,
            initial_epoch,
            shared.cfg.version_buffer_bytes,
            shared.cfg.version_flush_threshold,
            shared.cfg.two_level_threshold_bytes.max(1),
            shared.cfg.page_size,
        );
        zones.insert(id, Arc::new(zone));
        Ok(())
    }

    pub fn zone_ids(&self) -> Vec<ZoneId> {
        self.shared.zones.read().unwrap().keys().copied().collect()
    }

    /// Ingests one chunk write. Oversized payloads are chained; every
    /// fragment carries the same freshly assigned version stamp, which is
    /// returned as the ack.
    pub fn ingest(&self, zone_id: ZoneId, chunk: ChunkId, payload: &[u8]) -> Result<VersionStamp> {
        self.ingest_inner(zone_id, chunk, payload, false)
    }

    /// Ingests a deletion: a zero-payload entry with the deletion marker.
    pub fn delete(&self, zone_id: ZoneId, chunk: ChunkId) -> Result<VersionStamp> {
        self.ingest_inner(zone_id, chunk, &[], true)
    }

    fn ingest_inner(
        &self,
        zone_id: ZoneId,
        chunk: ChunkId,
        payload: &[u8],
        deleted: bool,
    ) -> Result<VersionStamp> {
        let shared = &self.shared;
        let zone = shared.zone(zone_id)?;
        let max_entry = shared.cfg.max_entry_size();
        let fragments = entry::chain_split(payload.len(), max_entry)?;
        let record = zone.next_version(chunk, deleted)?;
        let timestamp = shared
            .cfg
            .timestamps_enabled
            .then(|| shared.clock.now_s());

        let mut header = Vec::with_capacity(40);
        for fragment in &fragments {
            let slice = &payload[fragment.range.clone()];
            let meta = EntryMeta {
                chunk,
                range_id: zone_id.range_id,
                owner: zone_id.creator,
                payload_len: slice.len() as u32,
                timestamp,
                stamp: record.stamp,
                deleted,
                chain: fragment.chain,
                checksum: shared.cfg.checksums_enabled.then(|| crc32c(slice)),
            };
            header.clear();
            entry::encode_header_into(&meta, HeaderForm::Primary, max_entry, &mut header)?;
            shared.ring.push(zone_id, &[&header, slice])?;
            shared
                .counters
                .ingested_bytes
                .fetch_add((header.len() + slice.len()) as u64, Ordering::Relaxed);
        }
        shared
            .counters
            .ingested_entries
            .fetch_add(fragments.len() as u64, Ordering::Relaxed);

        let pressure = shared.ring.used() >= shared.cfg.flush_threshold_bytes
            || zone.version_buffer_full();
        if pressure {
            if shared.auto_pump.load(Ordering::Relaxed) {
                shared.pump()?;
                shared.reorg_tick()?;
            } else {
                shared.wake_runner();
            }
        }
        Ok(record.stamp)
    }

    /// Synchronously drains the write buffer, routes everything, flushes
    /// all secondary log buffers and every version buffer past its
    /// threshold, so recovery and reorganization observe all ingested data.
    pub fn priority_flush(&self) -> Result<()> {
        self.shared.priority_flush(true)
    }

    /// One drain/sort/route/write cycle (no-op on an empty ring).
    pub fn pump(&self) -> Result<bool> {
        self.shared.pump()
    }

    /// One reorganization scheduling step; returns whether work was done.
    pub fn reorg_step(&self) -> Result<bool> {
        self.shared.reorg_step()
    }

    pub fn stats(&self) -> EngineStats {
        let c = &self.shared.counters;
        EngineStats {
            ingested_entries: c.ingested_entries.load(Ordering::Relaxed),
            ingested_bytes: c.ingested_bytes.load(Ordering::Relaxed),
            data_writes: c.data_writes.load(Ordering::Relaxed),
            data_write_bytes: c.data_write_bytes.load(Ordering::Relaxed),
            max_data_write_bytes: c.max_data_write_bytes.load(Ordering::Relaxed),
            primary_writes: c.primary_writes.load(Ordering::Relaxed),
            primary_bytes: c.primary_bytes.load(Ordering::Relaxed),
            primary_wraps: c.primary_wraps.load(Ordering::Relaxed),
            reorg_passes: c.reorg_passes.load(Ordering::Relaxed),
            reorg_segments: c.reorg_segments.load(Ordering::Relaxed),
            freed_bytes: c.freed_bytes.load(Ordering::Relaxed),
            urgent_requests: c.urgent_requests.load(Ordering::Relaxed),
            prompt_requests: c.prompt_requests.load(Ordering::Relaxed),
            checksum_drops: c.checksum_drops.load(Ordering::Relaxed),
            version_flushes: c.version_flushes.load(Ordering::Relaxed),
            pumps: c.pumps.load(Ordering::Relaxed),
        }
    }

    pub fn io_stats(&self) -> &Arc<IoStats> {
        self.shared.storage.stats()
    }

    /// (zone, used bytes, log file size) per zone, for utilization
    /// sampling.
    pub fn zone_utilization(&self) -> Vec<(ZoneId, u64, u64)> {
        let zones = self.shared.zones.read().unwrap();
        zones
            .values()
            .map(|z| (z.id, z.log.used_total(), z.log.file_size()))
            .collect()
    }

    pub fn primary_position(&self) -> u64 {
        self.shared
            .primary
            .lock()
            .unwrap()
            .as_ref()
            .map_or(0, |p| p.position())
    }

    pub fn sec_buffer_len(&self, zone: ZoneId) -> Result<usize> {
        Ok(self.shared.zone(zone)?.sec_buffer_len())
    }

    pub fn zone_epoch(&self, zone: ZoneId) -> Result<u16> {
        Ok(self.shared.zone(zone)?.epoch())
    }

    pub fn segment_infos(&self, zone: ZoneId) -> Result<Vec<crate::secondary_log::SegmentInfo>> {
        Ok(self.shared.zone(zone)?.log.segment_infos())
    }

    /// Registers a low-priority (prompt) reorganization request for a zone,
    /// handled before periodic selection.
    pub fn request_reorganization(&self, zone: ZoneId) -> Result<()> {
        self.shared.zone(zone)?;
        self.shared.register_prompt(zone);
        Ok(())
    }

    /// Spawns the background flusher and reorganizer threads.
    pub fn start_runner(&self) {
        let mut threads = self.threads.lock().unwrap();
        if !threads.is_empty() {
            return;
        }
        self.shared.auto_pump.store(false, Ordering::SeqCst);
        let flush_interval = Duration::from_millis(self.shared.cfg.flush_interval_ms);

        let shared = Arc::clone(&self.shared);
        threads.push(std::thread::spawn(move || {
            while !shared.shutdown.load(Ordering::SeqCst) {
                {
                    let wake = shared.wake.lock().unwrap();
                    let _ = shared
                        .wake_cv
                        .wait_timeout_while(wake, flush_interval, |w| !*w)
                        .map(|(mut w, _)| *w = false);
                }
                if shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                if let Err(e) = shared.pump() {
                    eprintln!("pump failed: {e}");
                }
            }
        }));

        let shared = Arc::clone(&self.shared);
        threads.push(std::thread::spawn(move || {
            while !shared.shutdown.load(Ordering::SeqCst) {
                match shared.reorg_step() {
                    Ok(true) => {}
                    Ok(false) => std::thread::sleep(Duration::from_millis(2)),
                    Err(e) => eprintln!("reorganization failed: {e}"),
                }
            }
        }));
    }

    /// Stops the runner threads (if any) after a final flush.
    pub fn shutdown(&self) -> Result<()> {
        let _ = self.priority_flush();
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.wake_runner();
        self.shared.ring.close();
        let mut threads = self.threads.lock().unwrap();
        for t in threads.drain(..) {
            let _ = t.join();
        }
        self.shared.auto_pump.store(true, Ordering::SeqCst);
        Ok(())
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        self.shared.wake_runner();
        self.shared.ring.close();
        let mut threads = self.threads.lock().unwrap();
        for t in threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl EngineShared {
    pub(crate) fn zone(&self, id: ZoneId) -> Result<Arc<Zone>> {
        self.zones
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(Error::UnknownZone(id))
    }

    pub(crate) fn wake_runner(&self) {
        let mut wake = self.wake.lock().unwrap();
        *wake = true;
        self.wake_cv.notify_all();
    }

    /// Pump plus one reorganization tick, the synchronous-mode maintenance
    /// pattern.
    pub(crate) fn reorg_tick(&self) -> Result<()> {
        for _ in 0..4 {
            if !self.reorg_step()? {
                break;
            }
        }
        Ok(())
    }
}
