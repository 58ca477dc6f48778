//! A single-node, embeddable log-structured backup storage engine.
//!
//! The engine persists fixed-identity data objects (*chunks*) into per-zone
//! logs on disk, the way a backup server of a distributed in-memory store
//! would. The moving parts:
//!
//! * **Two-level logging** — every ingested chunk lands in a ring buffer,
//!   is sorted by backup zone, and is either written directly to the zone's
//!   *secondary log* (large batches) or to a shared *primary log* plus an
//!   in-memory secondary log buffer (small batches). The primary log exists
//!   only to survive power failures; secondary logs are the real replica
//!   location.
//! * **Epoch-based version control** — backup-side version numbers are kept
//!   in a per-zone version buffer and flushed as fixed 13-byte records to a
//!   per-zone version log. `(epoch, version)` pairs are unique per chunk.
//! * **Segment reorganization** — secondary logs are split into segments
//!   that a background cleaner compacts against the version map, with
//!   selectable segment-selection strategies (utilization x age, timestamp
//!   average age with hot-to-cold exclusion, random).
//! * **Pluggable storage backends** — OS-buffered files, O_DIRECT files
//!   with fully page-aligned I/O, and a raw-partition emulation with an
//!   index-block layout.
//! * **Copyset placement** — deterministic, decentralized copyset
//!   generation for choosing backup servers per zone.

pub mod checksum;
pub mod chunk;
pub mod clock;
pub mod config;
pub mod copysets;
pub mod engine;
pub mod entry;
mod pipeline;
pub mod pool;
pub mod primary_log;
pub mod recovery;
pub mod reorg;
pub mod secondary_log;
pub mod storage;
pub mod version;
pub mod write_buffer;
pub mod zone;

mod error;

pub use chunk::{ChunkId, ZoneId};
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{BackendKind, Config, SelectionStrategy};
pub use engine::{Engine, EngineStats};
pub use error::{Error, Result};
pub use recovery::{RecoveredChunk, RecoveredSet, RecoveryReport};
pub use version::VersionStamp;
