//! Raw-partition emulation.
//!
//! One backing file stands in for a raw partition, laid out as:
//!
//! ```text
//! page 0            partition header (magic, layout version, page size,
//!                   index capacity), little-endian
//! pages 1..=k       index: 64-byte entries
//! data region       page-aligned log extents
//! ```
//!
//! Primary and secondary logs occupy one fixed-size extent. Version logs
//! grow and shrink in fixed blocks (16 MiB by default); every block is one
//! index entry linked from the previous one. The index is cached in memory
//! and dirty entries are written back page-wise. Free space is managed by a
//! first-fit scan over the extents; regions reused after a free are zeroed
//! so logs keep their zero-initialized reading discipline.

use std::path::Path;
use std::sync::{Arc, Mutex};

use super::direct::DirectFile;
use super::{AlignedBuf, IoStats, LogName, LogStore};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"ZLP1";
const LAYOUT_VERSION: u32 = 1;
const INDEX_ENTRY_LEN: usize = 64;
const MAX_NAME_LEN: usize = 36;
const NO_NEXT: u32 = u32::MAX;

const FLAG_USED: u8 = 1;
const FLAG_CONTINUATION: u8 = 2;

const TYPE_PRIMARY: u8 = 1;
const TYPE_SECONDARY: u8 = 2;
const TYPE_VERSION: u8 = 3;

#[derive(Clone, Debug, Default)]
struct IndexEntry {
    flags: u8,
    log_type: u8,
    name: String,
    address: u64,
    /// Head entries: logical length of the whole log (fixed logs keep it at
    /// their extent size). Continuation entries: extent capacity.
    size: u64,
    next: u32,
}

impl IndexEntry {
    fn used(&self) -> bool {
        self.flags & FLAG_USED != 0
    }

    fn is_head(&self) -> bool {
        self.used() && self.flags & FLAG_CONTINUATION == 0
    }

    fn encode(&self) -> [u8; INDEX_ENTRY_LEN] {
        let mut out = [0u8; INDEX_ENTRY_LEN];
        out[0] = self.flags;
        out[1] = self.log_type;
        let name = self.name.as_bytes();
        debug_assert!(name.len() <= MAX_NAME_LEN);
        out[2] = name.len() as u8;
        out[4..4 + name.len()].copy_from_slice(name);
        out[40..48].copy_from_slice(&self.address.to_le_bytes());
        out[48..56].copy_from_slice(&self.size.to_le_bytes());
        out[56..60].copy_from_slice(&self.next.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Self {
        let name_len = (bytes[2] as usize).min(MAX_NAME_LEN);
        IndexEntry {
            flags: bytes[0],
            log_type: bytes[1],
            name: String::from_utf8_lossy(&bytes[4..4 + name_len]).into_owned(),
            address: u64::from_le_bytes(bytes[40..48].try_into().unwrap()),
            size: u64::from_le_bytes(bytes[48..56].try_into().unwrap()),
            next: u32::from_le_bytes(bytes[56..60].try_into().unwrap()),
        }
    }
}

pub struct RawPartition {
    file: DirectFile,
    page: usize,
    partition_bytes: u64,
    data_start: u64,
    version_block: u64,
    entries: Vec<IndexEntry>,
    /// Data region below this offset may hold stale bytes from freed
    /// extents; allocations under it are zeroed before use.
    high_water: u64,
    scratch: AlignedBuf,
}

impl RawPartition {
    pub fn open_or_create(
        path: &Path,
        partition_bytes: u64,
        index_entries: usize,
        page: usize,
        version_block: u64,
        stats: Arc<IoStats>,
    ) -> Result<Self> {
        if version_block % page as u64 != 0 {
            return Err(Error::Config(
                "version block size is not a multiple of the page size".into(),
            ));
        }
        let existed = path.exists();
        let mut file = DirectFile::open(path, partition_bytes, page, stats)?;
        let per_page = page / INDEX_ENTRY_LEN;
        let index_pages = index_entries.div_ceil(per_page);
        let data_start = ((1 + index_pages) * page) as u64;
        let capacity = index_pages * per_page;

        let mut scratch = AlignedBuf::new(page.max(1 << 20), page);
        let mut entries = vec![IndexEntry::default(); capacity];

        if existed {
            let got = file.read_at(0, &mut scratch, page)?;
            if got < 16 || scratch.data()[0..4] != MAGIC {
                return Err(Error::Corrupt {
                    offset: 0,
                    reason: "raw partition header magic mismatch",
                });
            }
            let stored_page =
                u32::from_le_bytes(scratch.data()[8..12].try_into().unwrap()) as usize;
            if stored_page != page {
                return Err(Error::Config(format!(
                    "raw partition was created with page size {stored_page}, opened with {page}"
                )));
            }
            for page_idx in 0..index_pages {
                let pos = ((1 + page_idx) * page) as u64;
                file.read_at(pos, &mut scratch, page)?;
                for i in 0..per_page {
                    let slot = page_idx * per_page + i;
                    if slot < capacity {
                        entries[slot] =
                            IndexEntry::decode(&scratch.data()[i * INDEX_ENTRY_LEN..]);
                    }
                }
            }
        } else {
            let header = scratch.data_mut();
            header[..page].fill(0);
            header[0..4].copy_from_slice(&MAGIC);
            header[4..8].copy_from_slice(&LAYOUT_VERSION.to_le_bytes());
            header[8..12].copy_from_slice(&(page as u32).to_le_bytes());
            header[12..16].copy_from_slice(&(capacity as u32).to_le_bytes());
            file.write_at(0, &mut scratch, 0, page)?;
        }

        let mut part = RawPartition {
            file,
            page,
            partition_bytes,
            data_start,
            version_block,
            entries,
            high_water: data_start,
            scratch,
        };
        part.high_water = part
            .used_extents()
            .iter()
            .map(|&(addr, cap)| addr + cap)
            .max()
            .unwrap_or(part.data_start);
        Ok(part)
    }

    fn extent_capacity(&self, entry: &IndexEntry) -> u64 {
        if entry.log_type == TYPE_VERSION {
            self.version_block
        } else {
            entry.size
        }
    }

    fn used_extents(&self) -> Vec<(u64, u64)> {
        let mut extents: Vec<(u64, u64)> = self
            .entries
            .iter()
            .filter(|e| e.used())
            .map(|e| (e.address, self.extent_capacity(e)))
            .collect();
        extents.sort_unstable();
        extents
    }

    pub fn log_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.is_head())
            .map(|e| e.name.clone())
            .collect()
    }

    fn find_head(&self, name: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.is_head() && e.name == name)
    }

    fn free_slot(&self) -> Result<usize> {
        self.entries
            .iter()
            .position(|e| !e.used())
            .ok_or(Error::PartitionFull { requested: 0 })
    }

    fn write_index_slot(&mut self, slot: usize) -> Result<()> {
        let per_page = self.page / INDEX_ENTRY_LEN;
        let page_idx = slot / per_page;
        let base = page_idx * per_page;
        for i in 0..per_page {
            let bytes = self.entries[base + i].encode();
            self.scratch.data_mut()[i * INDEX_ENTRY_LEN..(i + 1) * INDEX_ENTRY_LEN]
                .copy_from_slice(&bytes);
        }
        let pos = ((1 + page_idx) * self.page) as u64;
        let page = self.page;
        self.file.write_at(pos, &mut self.scratch, 0, page)
    }

    /// First-fit allocation of a page-multiple extent.
    fn allocate_extent(&mut self, bytes: u64) -> Result<u64> {
        debug_assert_eq!(bytes % self.page as u64, 0);
        let extents = self.used_extents();
        let mut candidate = self.data_start;
        for (addr, cap) in extents {
            if candidate + bytes <= addr {
                break;
            }
            candidate = candidate.max(addr + cap);
        }
        if candidate + bytes > self.partition_bytes {
            return Err(Error::PartitionFull { requested: bytes });
        }
        if candidate < self.high_water {
            self.zero_region(candidate, bytes.min(self.high_water - candidate))?;
        }
        self.high_water = self.high_water.max(candidate + bytes);
        Ok(candidate)
    }

    fn zero_region(&mut self, mut pos: u64, mut len: u64) -> Result<()> {
        self.scratch.data_mut().fill(0);
        let chunk = self.scratch.capacity() as u64;
        while len > 0 {
            let n = len.min(chunk) as usize;
            self.file.write_at(pos, &mut self.scratch, 0, n)?;
            self.scratch.data_mut()[..n].fill(0);
            pos += n as u64;
            len -= n as u64;
        }
        Ok(())
    }

    fn create_log(&mut self, name: &str, log_type: u8, fixed_size: u64) -> Result<usize> {
        if name.len() > MAX_NAME_LEN {
            return Err(Error::Config(format!("log name {name:?} too long")));
        }
        let slot = self.free_slot()?;
        let (extent, size) = match log_type {
            TYPE_VERSION => (self.allocate_extent(self.version_block)?, 0),
            _ => (self.allocate_extent(fixed_size)?, fixed_size),
        };
        self.entries[slot] = IndexEntry {
            flags: FLAG_USED,
            log_type,
            name: name.to_string(),
            address: extent,
            size,
            next: NO_NEXT,
        };
        self.write_index_slot(slot)?;
        Ok(slot)
    }

    /// The logical-offset-to-extent map of a log: (logical start, address,
    /// capacity) per extent in chain order.
    fn extent_map(&self, head: usize) -> Vec<(u64, u64, u64)> {
        let mut map = Vec::new();
        let mut logical = 0;
        let mut slot = head;
        loop {
            let entry = &self.entries[slot];
            let cap = self.extent_capacity(entry);
            map.push((logical, entry.address, cap));
            logical += cap;
            if entry.next == NO_NEXT {
                break;
            }
            slot = entry.next as usize;
        }
        map
    }

    fn chain_tail(&self, head: usize) -> usize {
        let mut slot = head;
        while self.entries[slot].next != NO_NEXT {
            slot = self.entries[slot].next as usize;
        }
        slot
    }

    fn grow_version_log(&mut self, head: usize) -> Result<()> {
        let addr = self.allocate_extent(self.version_block)?;
        let slot = self.free_slot()?;
        self.entries[slot] = IndexEntry {
            flags: FLAG_USED | FLAG_CONTINUATION,
            log_type: TYPE_VERSION,
            name: String::new(),
            address: addr,
            size: self.version_block,
            next: NO_NEXT,
        };
        let tail = self.chain_tail(head);
        self.entries[tail].next = slot as u32;
        self.write_index_slot(slot)?;
        self.write_index_slot(tail)?;
        Ok(())
    }

    fn log_write(
        &mut self,
        head: usize,
        pos: u64,
        buf: &mut AlignedBuf,
        off: usize,
        len: usize,
    ) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        if self.entries[head].log_type == TYPE_VERSION {
            while pos + len as u64 > self.extent_map(head).iter().map(|e| e.2).sum::<u64>() {
                self.grow_version_log(head)?;
            }
        }
        let map = self.extent_map(head);
        let total: u64 = map.iter().map(|e| e.2).sum();
        if pos + len as u64 > total {
            return Err(Error::Corrupt {
                offset: pos,
                reason: "write beyond fixed log extent",
            });
        }

        let pieces = split_pieces(&map, pos, len);
        if pieces.len() == 1 {
            let (phys, delta, n) = pieces[0];
            self.file.write_at(phys, buf, off + delta, n)?;
        } else {
            // Crossing extents: the aligned write path may shuffle bytes
            // inside the buffer, so each piece gets its own staging buffer.
            for (phys, delta, n) in pieces {
                let mut staging = AlignedBuf::new(n, self.page);
                staging
                    .data_mut()
                    .copy_from_slice(&buf.data()[off + delta..off + delta + n]);
                self.file.write_at(phys, &mut staging, 0, n)?;
            }
        }

        if self.entries[head].log_type == TYPE_VERSION && pos + len as u64 > self.entries[head].size
        {
            self.entries[head].size = pos + len as u64;
            self.write_index_slot(head)?;
        }
        Ok(())
    }

    fn log_read(&mut self, head: usize, pos: u64, buf: &mut AlignedBuf, len: usize) -> Result<usize> {
        let logical_len = self.entries[head].size;
        if pos >= logical_len {
            return Ok(0);
        }
        let len = len.min((logical_len - pos) as usize);
        let map = self.extent_map(head);
        let pieces = split_pieces(&map, pos, len);
        if let [(phys, 0, n)] = pieces[..] {
            return self.file.read_at(phys, buf, n);
        }
        let mut got = 0;
        for (phys, delta, n) in pieces {
            let mut staging = AlignedBuf::new(n, self.page);
            let read = self.file.read_at(phys, &mut staging, n)?;
            buf.data_mut()[delta..delta + read].copy_from_slice(&staging.data()[..read]);
            got += read;
            if read < n {
                break;
            }
        }
        Ok(got)
    }

    fn log_truncate(&mut self, head: usize, new_len: u64) -> Result<()> {
        if self.entries[head].log_type == TYPE_VERSION {
            let keep_blocks = (new_len.div_ceil(self.version_block)).max(1) as usize;
            let mut slot = head;
            let mut kept = 1;
            while kept < keep_blocks && self.entries[slot].next != NO_NEXT {
                slot = self.entries[slot].next as usize;
                kept += 1;
            }
            let mut drop_slot = self.entries[slot].next;
            if drop_slot != NO_NEXT {
                self.entries[slot].next = NO_NEXT;
                self.write_index_slot(slot)?;
            }
            while drop_slot != NO_NEXT {
                let s = drop_slot as usize;
                drop_slot = self.entries[s].next;
                self.entries[s] = IndexEntry::default();
                self.write_index_slot(s)?;
            }
        }
        self.entries[head].size = new_len;
        self.write_index_slot(head)
    }

    fn log_len(&self, head: usize) -> u64 {
        self.entries[head].size
    }

    /// Extent chain of a log as (address, capacity) pairs, for inspection.
    #[cfg(test)]
    pub fn chain_of(&self, name: &str) -> Option<Vec<(u64, u64)>> {
        let head = self.find_head(name)?;
        Some(
            self.extent_map(head)
                .into_iter()
                .map(|(_, addr, cap)| (addr, cap))
                .collect(),
        )
    }
}

/// Splits a logical range into per-extent (physical position, buffer delta,
/// length) pieces.
fn split_pieces(map: &[(u64, u64, u64)], pos: u64, len: usize) -> Vec<(u64, usize, usize)> {
    let mut pieces = Vec::new();
    let end = pos + len as u64;
    for &(logical, addr, cap) in map {
        let ext_end = logical + cap;
        if end <= logical || pos >= ext_end {
            continue;
        }
        let start = pos.max(logical);
        let stop = end.min(ext_end);
        pieces.push((
            addr + (start - logical),
            (start - pos) as usize,
            (stop - start) as usize,
        ));
    }
    pieces
}

pub struct RawLogStore {
    part: Arc<Mutex<RawPartition>>,
    head: usize,
}

impl RawLogStore {
    pub fn open(
        part: Arc<Mutex<RawPartition>>,
        name: LogName,
        size: u64,
    ) -> Result<Box<dyn LogStore>> {
        let file_name = name.file_name();
        let log_type = match name {
            LogName::Primary => TYPE_PRIMARY,
            LogName::Secondary(_) => TYPE_SECONDARY,
            LogName::Version(_) => TYPE_VERSION,
        };
        let mut guard = part.lock().unwrap();
        let head = match guard.find_head(&file_name) {
            Some(slot) => slot,
            None => guard.create_log(&file_name, log_type, size)?,
        };
        drop(guard);
        Ok(Box::new(RawLogStore { part, head }))
    }
}

impl LogStore for RawLogStore {
    fn write_at(&mut self, pos: u64, buf: &mut AlignedBuf, off: usize, len: usize) -> Result<()> {
        self.part.lock().unwrap().log_write(self.head, pos, buf, off, len)
    }

    fn read_at(&mut self, pos: u64, buf: &mut AlignedBuf, len: usize) -> Result<usize> {
        self.part.lock().unwrap().log_read(self.head, pos, buf, len)
    }

    fn truncate(&mut self, new_len: u64) -> Result<()> {
        self.part.lock().unwrap().log_truncate(self.head, new_len)
    }

    fn len(&mut self) -> Result<u64> {
        Ok(self.part.lock().unwrap().log_len(self.head))
    }
}
