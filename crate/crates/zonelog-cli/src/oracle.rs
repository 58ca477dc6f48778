//! The shadow oracle: ground truth for recovery verification.
//!
//! Updated synchronously with every acked ingest; stores per chunk the
//! latest stamp, the deletion flag and a fingerprint of the payload (the
//! payload itself is regenerable from its (chunk, sequence) key, so the
//! oracle stays small at desk scale).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use zonelog::{ChunkId, RecoveredSet, VersionStamp};

/// Deterministic payload bytes for the `seq`-th write of a chunk.
pub fn payload_bytes(chunk: ChunkId, seq: u32, size: usize) -> Vec<u8> {
    let mut state = chunk
        .raw()
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((seq as u64) << 1 | 1);
    (0..size)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 32) as u8
        })
        .collect()
}

pub fn fingerprint(payload: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in payload {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct OracleEntry {
    pub stamp: VersionStamp,
    pub deleted: bool,
    pub len: u32,
    pub fingerprint: u64,
    /// How many times this chunk has been written (payload sequence).
    pub writes: u32,
}

#[derive(Default)]
pub struct ShadowOracle {
    entries: BTreeMap<ChunkId, OracleEntry>,
    /// Every stamp ever acked, for the uniqueness/monotonicity audit.
    pub assignments: Vec<(ChunkId, VersionStamp)>,
}

impl ShadowOracle {
    pub fn next_seq(&self, chunk: ChunkId) -> u32 {
        self.entries.get(&chunk).map_or(0, |e| e.writes)
    }

    pub fn record_write(&mut self, chunk: ChunkId, stamp: VersionStamp, payload: &[u8]) {
        let writes = self.next_seq(chunk) + 1;
        self.entries.insert(
            chunk,
            OracleEntry {
                stamp,
                deleted: false,
                len: payload.len() as u32,
                fingerprint: fingerprint(payload),
                writes,
            },
        );
        self.assignments.push((chunk, stamp));
    }

    pub fn record_delete(&mut self, chunk: ChunkId, stamp: VersionStamp) {
        let writes = self.next_seq(chunk) + 1;
        self.entries.insert(
            chunk,
            OracleEntry {
                stamp,
                deleted: true,
                len: 0,
                fingerprint: fingerprint(&[]),
                writes,
            },
        );
        self.assignments.push((chunk, stamp));
    }

    pub fn live_count(&self) -> usize {
        self.entries.values().filter(|e| !e.deleted).count()
    }

    pub fn entries(&self) -> &BTreeMap<ChunkId, OracleEntry> {
        &self.entries
    }

    /// Exact comparison against a recovered set: same live chunks, same
    /// stamps, same payload bytes.
    pub fn verify(&self, recovered: &RecoveredSet) -> Result<(), String> {
        let live: Vec<(&ChunkId, &OracleEntry)> =
            self.entries.iter().filter(|(_, e)| !e.deleted).collect();
        if recovered.chunks.len() != live.len() {
            return Err(format!(
                "recovered {} chunks, expected {}",
                recovered.chunks.len(),
                live.len()
            ));
        }
        for (chunk, expect) in live {
            let Some(got) = recovered.chunks.get(chunk) else {
                return Err(format!("chunk {chunk} missing from recovery"));
            };
            if got.stamp != expect.stamp {
                return Err(format!(
                    "chunk {chunk}: stamp {:?}, expected {:?}",
                    got.stamp, expect.stamp
                ));
            }
            if got.payload.len() != expect.len as usize
                || fingerprint(&got.payload) != expect.fingerprint
            {
                return Err(format!("chunk {chunk}: payload mismatch"));
            }
        }
        Ok(())
    }

    /// No (chunk, stamp) pair acked twice; per-chunk stamps strictly
    /// increasing.
    pub fn audit_stamps(&self) -> Result<(), String> {
        let mut last: BTreeMap<ChunkId, VersionStamp> = BTreeMap::new();
        let mut seen = std::collections::HashSet::with_capacity(self.assignments.len());
        for &(chunk, stamp) in &self.assignments {
            if !seen.insert((chunk, stamp)) {
                return Err(format!("stamp {stamp:?} assigned twice for {chunk}"));
            }
            if let Some(prev) = last.insert(chunk, stamp) {
                if stamp <= prev {
                    return Err(format!(
                        "chunk {chunk}: stamp {stamp:?} not above {prev:?}"
                    ));
                }
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"ZLORCL1\n";

    /// Binary snapshot: 31-byte little-endian rows after a magic header.
    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(Self::MAGIC)?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (chunk, e) in &self.entries {
            out.write_all(&chunk.raw().to_le_bytes())?;
            out.write_all(&e.stamp.epoch.to_le_bytes())?;
            out.write_all(&e.stamp.number.to_le_bytes())?;
            out.write_all(&[e.deleted as u8])?;
            out.write_all(&e.len.to_le_bytes())?;
            out.write_all(&e.fingerprint.to_le_bytes())?;
            out.write_all(&e.writes.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<ShadowOracle> {
        let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        anyhow::ensure!(&magic == Self::MAGIC, "not an oracle snapshot");
        let mut count = [0u8; 8];
        input.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count);
        let mut oracle = ShadowOracle::default();
        let mut row = [0u8; 31];
        for _ in 0..count {
            input.read_exact(&mut row)?;
            let chunk = ChunkId::from_raw(u64::from_le_bytes(row[0..8].try_into()?));
            let stamp = VersionStamp::new(
                u16::from_le_bytes(row[8..10].try_into()?),
                u32::from_le_bytes(row[10..14].try_into()?),
            );
            oracle.entries.insert(
                chunk,
                OracleEntry {
                    stamp,
                    deleted: row[14] != 0,
                    len: u32::from_le_bytes(row[15..19].try_into()?),
                    fingerprint: u64::from_le_bytes(row[19..27].try_into()?),
                    writes: u32::from_le_bytes(row[27..31].try_into()?),
                },
            );
        }
        Ok(oracle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_is_deterministic_and_keyed() {
        let c = ChunkId::new(1, 5);
        assert_eq!(payload_bytes(c, 0, 64), payload_bytes(c, 0, 64));
        assert_ne!(payload_bytes(c, 0, 64), payload_bytes(c, 1, 64));
        assert_ne!(
            payload_bytes(c, 0, 64),
            payload_bytes(ChunkId::new(1, 6), 0, 64)
        );
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut oracle = ShadowOracle::default();
        for i in 0..50u64 {
            let c = ChunkId::new(1, i);
            oracle.record_write(c, VersionStamp::new(0, 0), &payload_bytes(c, 0, 64));
        }
        oracle.record_delete(ChunkId::new(1, 3), VersionStamp::new(0, 1));
        let path = dir.path().join("oracle.bin");
        oracle.save(&path).unwrap();
        let loaded = ShadowOracle::load(&path).unwrap();
        assert_eq!(loaded.entries.len(), 50);
        assert_eq!(loaded.entries(), oracle.entries());
        assert!(loaded.entries[&ChunkId::new(1, 3)].deleted);
    }

    #[test]
    fn audit_catches_reuse() {
        let mut oracle = ShadowOracle::default();
        let c = ChunkId::new(1, 1);
        oracle.record_write(c, VersionStamp::new(0, 0), b"x");
        oracle.record_write(c, VersionStamp::new(0, 1), b"y");
        assert!(oracle.audit_stamps().is_ok());
        oracle.assignments.push((c, VersionStamp::new(0, 1)));
        assert!(oracle.audit_stamps().is_err());
    }
}
