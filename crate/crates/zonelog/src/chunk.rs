//! Chunk and zone identities.

use std::fmt;

/// Number of bits of a [`ChunkId`] holding the locally unique sequence number.
pub const LOCAL_ID_BITS: u32 = 48;

/// Largest representable local ID (48 bits).
pub const MAX_LOCAL_ID: u64 = (1 << LOCAL_ID_BITS) - 1;

/// 64-bit globally unique chunk identity: the 16-bit node ID of the chunk's
/// creator in the upper bits, a 48-bit locally unique sequence number below.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkId(u64);

impl ChunkId {
    pub fn new(creator: u16, local_id: u64) -> Self {
        assert!(local_id <= MAX_LOCAL_ID, "local id exceeds 48 bits");
        ChunkId(((creator as u64) << LOCAL_ID_BITS) | local_id)
    }

    pub fn from_raw(raw: u64) -> Self {
        ChunkId(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn creator(self) -> u16 {
        (self.0 >> LOCAL_ID_BITS) as u16
    }

    pub fn local_id(self) -> u64 {
        self.0 & MAX_LOCAL_ID
    }

    /// Minimal number of bytes (1, 2, 4 or 6) that hold this local ID.
    pub fn local_id_width(self) -> usize {
        min_local_id_width(self.local_id())
    }
}

/// Minimal width in bytes for a local ID value, among the encodable 1/2/4/6.
pub fn min_local_id_width(local_id: u64) -> usize {
    if local_id < 1 << 8 {
        1
    } else if local_id < 1 << 16 {
        2
    } else if local_id < 1 << 32 {
        4
    } else {
        6
    }
}

impl fmt::Debug for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChunkId({:#06x}:{})", self.creator(), self.local_id())
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}:{}", self.creator(), self.local_id())
    }
}

/// Identity of a backup zone: the node that created it plus a 16-bit range ID
/// that is unique within that creator.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ZoneId {
    pub creator: u16,
    pub range_id: u16,
}

impl ZoneId {
    pub fn new(creator: u16, range_id: u16) -> Self {
        ZoneId { creator, range_id }
    }
}

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.creator, self.range_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_id_round_trips_through_raw() {
        let id = ChunkId::new(0xBEEF, 0x1234_5678_9ABC);
        assert_eq!(id.creator(), 0xBEEF);
        assert_eq!(id.local_id(), 0x1234_5678_9ABC);
        assert_eq!(ChunkId::from_raw(id.raw()), id);
    }

    #[test]
    fn local_id_width_is_minimal() {
        assert_eq!(min_local_id_width(0), 1);
        assert_eq!(min_local_id_width(200), 1);
        assert_eq!(min_local_id_width(255), 1);
        assert_eq!(min_local_id_width(256), 2);
        assert_eq!(min_local_id_width(65_535), 2);
        assert_eq!(min_local_id_width(65_536), 4);
        assert_eq!(min_local_id_width(70_000), 4);
        assert_eq!(min_local_id_width((1 << 32) - 1), 4);
        assert_eq!(min_local_id_width(1 << 32), 6);
        assert_eq!(min_local_id_width(MAX_LOCAL_ID), 6);
    }
}
