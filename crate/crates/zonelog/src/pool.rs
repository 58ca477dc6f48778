//! Reusable buffer pool for sorting the write buffer into per-zone batches.
//!
//! Three free-lists of fixed-size buffers (by default 64 x 1/16, 32 x 1/8
//! and 8 x 1 segment). Acquisition is best-fit: the smallest class that
//! covers the request, falling back to smaller classes when a list runs
//! dry, then to larger ones, and finally blocking until a buffer returns
//! from its disk write.

use std::sync::{Arc, Condvar, Mutex};

use crate::config::PoolClass;

pub struct PooledBuf {
    pub data: Vec<u8>,
    class: usize,
    pool: Arc<PoolShared>,
}

impl PooledBuf {
    pub fn capacity(&self) -> usize {
        self.data.capacity()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.capacity() - self.data.len()
    }
}

impl Drop for PooledBuf {
    fn drop(&mut self) {
        let mut data = std::mem::take(&mut self.data);
        data.clear();
        let mut free = self.pool.free.lock().unwrap();
        free[self.class].push(data);
        drop(free);
        self.pool.returned.notify_all();
    }
}

struct PoolShared {
    classes: [PoolClass; 3],
    free: Mutex<[Vec<Vec<u8>>; 3]>,
    returned: Condvar,
}

#[derive(Clone)]
pub struct BufferPool {
    shared: Arc<PoolShared>,
}

impl BufferPool {
    pub fn new(classes: [PoolClass; 3]) -> Self {
        let free = [
            (0..classes[0].count)
                .map(|_| Vec::with_capacity(classes[0].buffer_bytes))
                .collect(),
            (0..classes[1].count)
                .map(|_| Vec::with_capacity(classes[1].buffer_bytes))
                .collect(),
            (0..classes[2].count)
                .map(|_| Vec::with_capacity(classes[2].buffer_bytes))
                .collect(),
        ];
        BufferPool {
            shared: Arc::new(PoolShared {
                classes,
                free: Mutex::new(free),
                returned: Condvar::new(),
            }),
        }
    }

    /// Blocks until a buffer is available. `requested` drives the best-fit
    /// choice; `floor` is a hard lower bound on the returned capacity (an
    /// entry that must fit in one buffer).
    pub fn acquire(&self, requested: usize, floor: usize) -> PooledBuf {
        let preferred = self
            .shared
            .classes
            .iter()
            .position(|c| c.buffer_bytes >= requested)
            .unwrap_or(2);
        // best fit first, then smaller classes, then larger
        let order: Vec<usize> = (0..=preferred)
            .rev()
            .chain(preferred + 1..3)
            .filter(|&c| self.shared.classes[c].buffer_bytes >= floor)
            .collect();
        assert!(!order.is_empty(), "no pool class holds {floor} bytes");
        let mut free = self.shared.free.lock().unwrap();
        loop {
            for &class in &order {
                if let Some(data) = free[class].pop() {
                    return PooledBuf {
                        data,
                        class,
                        pool: Arc::clone(&self.shared),
                    };
                }
            }
            free = self.shared.returned.wait(free).unwrap();
        }
    }

    /// Buffers currently out of the pool.
    pub fn outstanding(&self) -> usize {
        let free = self.shared.free.lock().unwrap();
        self.shared
            .classes
            .iter()
            .zip(free.iter())
            .map(|(c, list)| c.count - list.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> [PoolClass; 3] {
        [
            PoolClass { count: 2, buffer_bytes: 512 },
            PoolClass { count: 2, buffer_bytes: 1024 },
            PoolClass { count: 1, buffer_bytes: 8192 },
        ]
    }

    #[test]
    fn best_fit_picks_smallest_covering_class() {
        let pool = BufferPool::new(classes());
        assert_eq!(pool.acquire(100, 0).capacity(), 512);
        assert_eq!(pool.acquire(512, 0).capacity(), 512);
        assert_eq!(pool.acquire(513, 0).capacity(), 1024);
        assert_eq!(pool.acquire(5000, 0).capacity(), 8192);
    }

    #[test]
    fn falls_back_when_class_exhausted() {
        let pool = BufferPool::new(classes());
        let _a = pool.acquire(600, 0);
        let _b = pool.acquire(600, 0);
        // 1024-class dry: falls back down to 512
        let c = pool.acquire(600, 0);
        assert_eq!(c.capacity(), 512);
        let d = pool.acquire(400, 0);
        assert_eq!(d.capacity(), 512);
        // everything below dry: falls back up to 8192
        let e = pool.acquire(600, 0);
        assert_eq!(e.capacity(), 8192);
        assert_eq!(pool.outstanding(), 5);
    }

    #[test]
    fn floor_skips_too_small_classes() {
        let pool = BufferPool::new(classes());
        let _hold_a = pool.acquire(600, 0);
        let _hold_b = pool.acquire(600, 0);
        // 1024s gone; a 700-byte entry must not land in a 512 buffer
        let buf = pool.acquire(700, 700);
        assert_eq!(buf.capacity(), 8192);
    }

    #[test]
    fn drop_returns_and_unblocks() {
        let pool = BufferPool::new(classes());
        let held: Vec<_> = (0..5).map(|_| pool.acquire(4000, 0)).collect();
        assert_eq!(pool.outstanding(), 5);
        let pool2 = pool.clone();
        let waiter = std::thread::spawn(move || pool2.acquire(100, 0).capacity());
        std::thread::sleep(std::time::Duration::from_millis(50));
        drop(held);
        waiter.join().unwrap();
        assert_eq!(pool.outstanding(), 0);
    }
}
