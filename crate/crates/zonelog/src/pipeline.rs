//! The flush pipeline: drain the write buffer, sort entries by backup zone,
//! route each zone's batch and execute the disk writes.
//!
//! Zones with at least the two-level threshold of data in a drain are
//! written directly to their secondary log (after flushing, or merging
//! with, their secondary log buffer). Smaller batches are merged into one
//! primary log append and copied, with truncated headers, into their
//! zone's secondary log buffer; a full buffer flushes itself.

use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::chunk::ZoneId;
use crate::engine::EngineShared;
use crate::entry::{self, DecodeContext, FormContext, HeaderForm};
use crate::error::{Error, Result};
use crate::pool::PooledBuf;
use crate::secondary_log::WriteOutcome;
use crate::zone::Zone;

struct DirectGroup {
    zone: Arc<Zone>,
    buffers: Vec<(PooledBuf, Vec<usize>)>,
    remaining_estimate: usize,
}

impl EngineShared {
    pub(crate) fn pump(&self) -> Result<bool> {
        let _guard = self.pump_lock.lock().unwrap();
        self.pump_locked()
    }

    pub(crate) fn priority_flush(&self, include_versions: bool) -> Result<()> {
        let _guard = self.pump_lock.lock().unwrap();
        while self.pump_locked()? {}
        let zones: Vec<Arc<Zone>> = self.zones.read().unwrap().values().cloned().collect();
        for zone in zones {
            let staged = zone.take_sec_buffer();
            self.write_zone_batch(&zone, &staged.data, &staged.entry_offsets)?;
            if include_versions && zone.version_buffer_len() > 0 {
                if zone.log.reorg_in_progress() {
                    self.register_prompt(zone.id);
                } else {
                    zone.flush_version_buffer()?;
                    self.counters.version_flushes.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(())
    }

    fn pump_locked(&self) -> Result<bool> {
        let Some(batch) = self.ring.drain() else {
            return Ok(false);
        };
        self.counters.pumps.fetch_add(1, Ordering::Relaxed);

        let ctx = DecodeContext {
            form: FormContext::Primary,
            timestamps: self.cfg.timestamps_enabled,
            checksums: self.cfg.checksums_enabled,
        };
        let threshold = self.cfg.two_level_threshold_bytes as u64;
        let max_entry = self.cfg.max_entry_size();

        let mut primary_batch: Vec<u8> = Vec::new();
        let mut groups: Vec<DirectGroup> = Vec::new();
        let mut group_of: HashMap<ZoneId, usize> = HashMap::new();
        let mut touched: Vec<Arc<Zone>> = Vec::new();
        let mut converted: Vec<u8> = Vec::with_capacity(256);

        let mut offset = 0usize;
        while offset < batch.data.len() {
            let Some(decoded) = entry::decode_entry(&batch.data, offset, &ctx)? else {
                break;
            };
            let meta = decoded.meta;
            let zone_id = meta.zone();
            let zone = self.zone(zone_id)?;
            let span = offset..decoded.next_offset;
            offset = decoded.next_offset;

            if !touched.iter().any(|z| z.id == zone_id) {
                touched.push(Arc::clone(&zone));
            }

            // truncated secondary-form copy of the entry
            let form = if meta.chunk.creator() == zone_id.creator {
                HeaderForm::DefaultSecondary
            } else {
                HeaderForm::MigrationSecondary
            };
            converted.clear();
            entry::encode_header_into(&meta, form, max_entry, &mut converted)?;
            converted.extend_from_slice(&batch.data[decoded.payload.clone()]);

            let direct = batch.zone_lengths[&zone_id] >= threshold;
            if direct {
                let group_idx = match group_of.get(&zone_id) {
                    Some(&idx) => idx,
                    None => {
                        groups.push(DirectGroup {
                            zone: Arc::clone(&zone),
                            buffers: Vec::new(),
                            remaining_estimate: batch.zone_lengths[&zone_id] as usize,
                        });
                        group_of.insert(zone_id, groups.len() - 1);
                        groups.len() - 1
                    }
                };
                let group = &mut groups[group_idx];
                let need_new = match group.buffers.last() {
                    Some((buf, _)) => buf.remaining() < converted.len(),
                    None => true,
                };
                if need_new {
                    // never exceeding a segment, never back-filling
                    let preferred = group
                        .remaining_estimate
                        .clamp(converted.len(), self.cfg.segment_size_bytes);
                    let buf = self.pool.acquire(preferred, converted.len());
                    group.buffers.push((buf, Vec::new()));
                }
                let (buf, offsets) = group.buffers.last_mut().unwrap();
                offsets.push(buf.len());
                buf.data.extend_from_slice(&converted);
                group.remaining_estimate = group.remaining_estimate.saturating_sub(span.len());
            } else {
                if self.cfg.two_level_enabled {
                    primary_batch.extend_from_slice(&batch.data[span]);
                }
                if !zone.sec_buffer_room(converted.len()) {
                    let staged = zone.take_sec_buffer();
                    self.write_zone_batch(&zone, &staged.data, &staged.entry_offsets)?;
                }
                zone.sec_buffer_append(&converted);
            }
        }

        // one large primary log access for all small batches
        self.primary_append(&primary_batch)?;

        // direct writes, oldest staged bytes first
        for group in groups {
            let staged = group.zone.take_sec_buffer();
            let mut buffers = group.buffers.into_iter();
            if !staged.data.is_empty() {
                match buffers.next() {
                    Some((first, first_offsets))
                        if staged.data.len() + first.len() <= self.cfg.segment_size_bytes =>
                    {
                        // merge buffer and first batch into one write
                        let mut merged = staged.data;
                        let mut offsets = staged.entry_offsets;
                        let base = merged.len();
                        merged.extend_from_slice(&first.data);
                        offsets.extend(first_offsets.iter().map(|&o| o + base));
                        self.write_zone_batch(&group.zone, &merged, &offsets)?;
                    }
                    Some((first, first_offsets)) => {
                        self.write_zone_batch(&group.zone, &staged.data, &staged.entry_offsets)?;
                        self.write_zone_batch(&group.zone, &first.data, &first_offsets)?;
                    }
                    None => {
                        self.write_zone_batch(&group.zone, &staged.data, &staged.entry_offsets)?;
                    }
                }
            }
            for (buf, offsets) in buffers {
                self.write_zone_batch(&group.zone, &buf.data, &offsets)?;
            }
        }

        // writer-side version maintenance for every zone seen in this drain
        for zone in touched {
            if zone.version_buffer_full() || zone.version_buffer_needs_flush() {
                if zone.log.reorg_in_progress() {
                    self.register_prompt(zone.id);
                } else if zone.version_buffer_len() > 0 {
                    zone.flush_version_buffer()?;
                    self.counters.version_flushes.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(true)
    }

    /// Writes one sorted batch to a zone's secondary log, registering an
    /// urgent reorganization and retrying when the log has no room.
    pub(crate) fn write_zone_batch(
        &self,
        zone: &Zone,
        data: &[u8],
        entry_offsets: &[usize],
    ) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let mut attempts = 0;
        loop {
            match zone.log.write_batch(data, entry_offsets, self.clock.now_s())? {
                WriteOutcome::Placed(_) => break,
                WriteOutcome::NeedsReorg => {
                    attempts += 1;
                    self.counters.urgent_requests.fetch_add(1, Ordering::Relaxed);
                    let freed = self.run_urgent(zone)?;
                    if freed == 0 && attempts >= 3 {
                        return Err(Error::Config(format!(
                            "zone {} cannot place a {}-byte batch even after urgent reorganization",
                            zone.id,
                            data.len()
                        )));
                    }
                }
            }
        }
        self.counters.data_writes.fetch_add(1, Ordering::Relaxed);
        self.counters
            .data_write_bytes
            .fetch_add(data.len() as u64, Ordering::Relaxed);
        self.counters
            .max_data_write_bytes
            .fetch_max(data.len() as u64, Ordering::Relaxed);

        // writer-side reorganization prompt
        let used = zone.log.used_total();
        if used as f64 > self.cfg.prompt_fraction * zone.log.capacity() as f64 {
            self.register_prompt(zone.id);
        }
        Ok(())
    }

    /// One large access to the primary log; wraps after flushing every
    /// secondary log buffer when full.
    fn primary_append(&self, data: &[u8]) -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        let mut guard = self.primary.lock().unwrap();
        let Some(primary) = guard.as_mut() else {
            return Ok(());
        };
        if !primary.fits(data.len()) {
            self.counters.primary_wraps.fetch_add(1, Ordering::Relaxed);
            let zones: Vec<Arc<Zone>> = self.zones.read().unwrap().values().cloned().collect();
            for zone in zones {
                let staged = zone.take_sec_buffer();
                self.write_zone_batch(&zone, &staged.data, &staged.entry_offsets)?;
            }
            primary.reset()?;
            if !primary.fits(data.len()) {
                return Err(Error::Config(format!(
                    "primary log of {} bytes cannot hold a {}-byte batch",
                    primary.capacity(),
                    data.len()
                )));
            }
        }
        primary.append(data)?;
        self.counters.primary_writes.fetch_add(1, Ordering::Relaxed);
        self.counters
            .primary_bytes
            .fetch_add(data.len() as u64, Ordering::Relaxed);
        self.counters.data_writes.fetch_add(1, Ordering::Relaxed);
        self.counters
            .data_write_bytes
            .fetch_add(data.len() as u64, Ordering::Relaxed);
        self.counters
            .max_data_write_bytes
            .fetch_max(data.len() as u64, Ordering::Relaxed);
        Ok(())
    }
}
