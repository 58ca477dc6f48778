//! The ingest ring buffer.
//!
//! A single producer appends primary-form entries; a single consumer drains
//! them in bulk for sorting. Ring positions and the per-zone length table
//! move together under one short-critical-section guard; the producer parks
//! in bounded waits while the ring is full.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use crate::chunk::ZoneId;
use crate::error::{Error, Result};

struct RingState {
    storage: Vec<u8>,
    /// Absolute byte positions; `front - back` is the occupancy.
    front: u64,
    back: u64,
    zone_lengths: HashMap<ZoneId, u64>,
    closed: bool,
}

/// A drained snapshot: the ring content linearized into scan order plus the
/// per-zone byte totals it contained.
pub struct DrainBatch {
    pub data: Vec<u8>,
    pub zone_lengths: HashMap<ZoneId, u64>,
}

pub struct WriteBuffer {
    cap: usize,
    state: Mutex<RingState>,
    space_freed: Condvar,
}

impl WriteBuffer {
    pub fn new(cap: usize) -> Self {
        WriteBuffer {
            cap,
            state: Mutex::new(RingState {
                storage: vec![0; cap],
                front: 0,
                back: 0,
                zone_lengths: HashMap::new(),
                closed: false,
            }),
            space_freed: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn used(&self) -> usize {
        let state = self.state.lock().unwrap();
        (state.front - state.back) as usize
    }

    /// Appends one entry (header + payload parts) for `zone`, wrapping at
    /// the ring end. Blocks in bounded parks while the ring is full.
    pub fn push(&self, zone: ZoneId, parts: &[&[u8]]) -> Result<()> {
        let total: usize = parts.iter().map(|p| p.len()).sum();
        if total > self.cap {
            return Err(Error::Config(format!(
                "entry of {total} bytes exceeds the write buffer capacity {}",
                self.cap
            )));
        }
        let mut state = self.state.lock().unwrap();
        loop {
            if state.closed {
                return Err(Error::ShutDown);
            }
            if (state.front - state.back) as usize + total <= self.cap {
                break;
            }
            let (next, _) = self
                .space_freed
                .wait_timeout(state, Duration::from_micros(100))
                .unwrap();
            state = next;
        }
        let mut pos = state.front;
        for part in parts {
            let mut part = *part;
            while !part.is_empty() {
                let idx = (pos % self.cap as u64) as usize;
                let n = part.len().min(self.cap - idx);
                state.storage[idx..idx + n].copy_from_slice(&part[..n]);
                pos += n as u64;
                part = &part[n..];
            }
        }
        state.front = pos;
        *state.zone_lengths.entry(zone).or_insert(0) += total as u64;
        Ok(())
    }

    /// Takes everything between back and front: the snapshot is copied out
    /// under the guard, the length table cleared and the back pointer set
    /// to the previous front, so filling continues concurrently with the
    /// processing of the snapshot.
    pub fn drain(&self) -> Option<DrainBatch> {
        let mut state = self.state.lock().unwrap();
        let used = (state.front - state.back) as usize;
        if used == 0 {
            return None;
        }
        let mut data = vec![0u8; used];
        let start = (state.back % self.cap as u64) as usize;
        let first = used.min(self.cap - start);
        data[..first].copy_from_slice(&state.storage[start..start + first]);
        data[first..].copy_from_slice(&state.storage[..used - first]);
        let zone_lengths = std::mem::take(&mut state.zone_lengths);
        state.back = state.front;
        drop(state);
        self.space_freed.notify_all();
        Some(DrainBatch { data, zone_lengths })
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.space_freed.notify_all();
    }

    #[cfg(test)]
    fn invariant_zone_lengths_match_occupancy(&self) {
        let state = self.state.lock().unwrap();
        let sum: u64 = state.zone_lengths.values().sum();
        assert_eq!(sum, state.front - state.back);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zone(r: u16) -> ZoneId {
        ZoneId::new(1, r)
    }

    #[test]
    fn accounting_tracks_pushed_bytes() {
        let ring = WriteBuffer::new(1024);
        for i in 0..10 {
            ring.push(zone(i % 2), &[&[i as u8; 7], &[0xFF; 13]]).unwrap();
        }
        ring.invariant_zone_lengths_match_occupancy();
        assert_eq!(ring.used(), 200);
        let batch = ring.drain().unwrap();
        assert_eq!(batch.data.len(), 200);
        assert_eq!(batch.zone_lengths[&zone(0)], 100);
        assert_eq!(batch.zone_lengths[&zone(1)], 100);
        assert_eq!(ring.used(), 0);
        ring.invariant_zone_lengths_match_occupancy();
    }

    #[test]
    fn wrapping_push_drains_linearized() {
        let ring = WriteBuffer::new(64);
        // Walk the ring so pushes straddle the wrap point at every offset.
        let mut expect_round = 0u8;
        for _ in 0..40 {
            let payload: Vec<u8> = (0..24).map(|i| expect_round.wrapping_add(i)).collect();
            ring.push(zone(0), &[&payload]).unwrap();
            let batch = ring.drain().unwrap();
            assert_eq!(batch.data, payload, "wrap at round {expect_round}");
            expect_round = expect_round.wrapping_add(1);
        }
    }

    #[test]
    fn producer_blocks_until_consumer_frees_space() {
        use std::sync::Arc;
        let ring = Arc::new(WriteBuffer::new(128));
        ring.push(zone(0), &[&[1u8; 100]]).unwrap();
        let r2 = Arc::clone(&ring);
        let producer = std::thread::spawn(move || {
            r2.push(zone(0), &[&[2u8; 100]]).unwrap();
        });
        std::thread::sleep(Duration::from_millis(30));
        assert!(!producer.is_finished(), "producer should be parked");
        let batch = ring.drain().unwrap();
        assert_eq!(batch.data, vec![1u8; 100]);
        producer.join().unwrap();
        assert_eq!(ring.used(), 100);
    }

    #[test]
    fn oversized_entry_rejected() {
        let ring = WriteBuffer::new(64);
        assert!(ring.push(zone(0), &[&[0u8; 65]]).is_err());
    }

    #[test]
    fn close_unblocks_producer() {
        use std::sync::Arc;
        let ring = Arc::new(WriteBuffer::new(32));
        ring.push(zone(0), &[&[1u8; 30]]).unwrap();
        let r2 = Arc::clone(&ring);
        let producer = std::thread::spawn(move || r2.push(zone(0), &[&[2u8; 30]]));
        std::thread::sleep(Duration::from_millis(20));
        ring.close();
        assert!(matches!(producer.join().unwrap(), Err(Error::ShutDown)));
    }
}
