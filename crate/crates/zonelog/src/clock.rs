//! Engine time source.
//!
//! Header timestamps and segment ages are whole seconds since the engine was
//! created. The clock is injectable so tests can drive age arithmetic
//! deterministically.

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Instant;

pub trait Clock: Send + Sync {
    /// Seconds elapsed since the engine (log component) was created.
    fn now_s(&self) -> u32;
}

/// Wall clock relative to engine creation.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            start: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_s(&self) -> u32 {
        self.start.elapsed().as_secs() as u32
    }
}

/// Manually advanced clock for tests.
#[derive(Default)]
pub struct ManualClock {
    now: AtomicU32,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, seconds: u32) {
        self.now.store(seconds, Ordering::SeqCst);
    }

    pub fn advance(&self, seconds: u32) {
        self.now.fetch_add(seconds, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_s(&self) -> u32 {
        self.now.load(Ordering::SeqCst)
    }
}
