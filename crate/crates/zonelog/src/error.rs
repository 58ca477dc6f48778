use std::io;

use thiserror::Error;

use crate::chunk::ZoneId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("i/o error after {done} of {total} bytes: {source}")]
    PartialIo {
        done: usize,
        total: usize,
        source: io::Error,
    },

    #[error("zone {0} already exists")]
    ZoneExists(ZoneId),

    #[error("zone {0} does not exist")]
    UnknownZone(ZoneId),

    #[error("corrupt data at offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: &'static str },

    #[error("payload of {len} bytes exceeds maximum entry size {max}")]
    EntryTooLarge { len: usize, max: usize },

    #[error("payload of {len} bytes cannot be chained ({max_fragments} fragments of {max} max)")]
    ChainTooLong {
        len: usize,
        max_fragments: usize,
        max: usize,
    },

    #[error("{0} is not supported by this backend")]
    Unsupported(&'static str),

    #[error("raw partition is full (requested {requested} bytes)")]
    PartitionFull { requested: u64 },

    #[error("no log named {0:?} in raw partition")]
    UnknownLog(String),

    #[error("version counter exhausted for a chunk within one epoch")]
    VersionExhausted,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("engine is shut down")]
    ShutDown,
}
