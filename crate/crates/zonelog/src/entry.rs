//! Log entry headers: bit-exact encoding and decoding of the three header
//! forms, payload chaining for oversized chunks, and the scan protocol.
//!
//! Every log entry is a header followed by its payload. On-disk layout,
//! little-endian throughout:
//!
//! ```text
//! type      1 B   form(2) | local_id width(2) | length width(2) | version width(2)
//! range_id  2 B   primary form only
//! owner     2 B   primary form only
//! creator   2 B   primary and migration forms
//! local_id  1/2/4/6 B
//! length    0/1/2/3 B    payload length, bit 23 set when the entry is chained
//! timestamp 4 B          only when timestamps are configured
//! epoch     2 B
//! version   0/1/2/4 B    width 0 encodes the value 1
//! chain     2 B          position, total-1; only when chained
//! checksum  4 B          CRC32C of the payload; only when configured
//! ```
//!
//! Width selectors are minimal for the stored value. The form codes start
//! at 1, so a type byte of 0 never occurs in a valid header and marks the
//! end of written data in a segment or log.
//!
//! The primary form is used in the write buffer and the primary log and is
//! self-contained: it names the backup zone (range_id + owner) and always
//! carries the chunk's creator. Converting to a secondary form strips
//! range_id and owner, and also the creator when it equals the zone's
//! creator (default form); migrated entries keep it (migration form).

use std::ops::Range;

use crate::chunk::{min_local_id_width, ChunkId, ZoneId};
use crate::error::{Error, Result};
use crate::version::{VersionStamp, MAX_VERSION_NUMBER};

/// A type byte of 0 marks the end of valid data.
pub const END_OF_DATA: u8 = 0;

/// Chains are limited to 256 fragments (position and total are one byte).
pub const MAX_CHAIN_FRAGMENTS: usize = 256;

const LEN_CHAIN_BIT: u32 = 1 << 23;
const VERSION_DELETED_BIT: u32 = 1 << 23;

const LID_WIDTHS: [usize; 4] = [1, 2, 4, 6];
const LEN_WIDTHS: [usize; 4] = [0, 1, 2, 3];
const VER_WIDTHS: [usize; 4] = [0, 1, 2, 4];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HeaderForm {
    Primary,
    DefaultSecondary,
    MigrationSecondary,
}

impl HeaderForm {
    fn code(self) -> u8 {
        match self {
            HeaderForm::Primary => 1,
            HeaderForm::DefaultSecondary => 2,
            HeaderForm::MigrationSecondary => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(HeaderForm::Primary),
            2 => Some(HeaderForm::DefaultSecondary),
            3 => Some(HeaderForm::MigrationSecondary),
            _ => None,
        }
    }
}

/// Chain position of one fragment of an oversized chunk.
///
/// `total` is the fragment count, 1..=256; on disk it is stored as
/// `total - 1` so the byte covers the full range.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ChainInfo {
    pub position: u8,
    pub total: u16,
}

impl ChainInfo {
    pub fn new(position: u8, total: u16) -> Self {
        debug_assert!(total >= 1 && total as usize <= MAX_CHAIN_FRAGMENTS);
        debug_assert!((position as u16) < total);
        ChainInfo { position, total }
    }
}

/// Everything a log entry header describes about its payload.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct EntryMeta {
    pub chunk: ChunkId,
    pub range_id: u16,
    pub owner: u16,
    pub payload_len: u32,
    pub timestamp: Option<u32>,
    pub stamp: VersionStamp,
    pub deleted: bool,
    pub chain: Option<ChainInfo>,
    pub checksum: Option<u32>,
}

impl EntryMeta {
    pub fn zone(&self) -> ZoneId {
        ZoneId::new(self.owner, self.range_id)
    }

    fn packed_length(&self) -> u32 {
        self.payload_len | if self.chain.is_some() { LEN_CHAIN_BIT } else { 0 }
    }

    fn packed_version(&self) -> u32 {
        self.stamp.number | if self.deleted { VERSION_DELETED_BIT } else { 0 }
    }
}

fn min_len_width(value: u32) -> usize {
    if value == 0 {
        0
    } else if value < 1 << 8 {
        1
    } else if value < 1 << 16 {
        2
    } else {
        3
    }
}

fn min_version_width(packed: u32) -> usize {
    if packed == 1 {
        0
    } else if packed < 1 << 8 {
        1
    } else if packed < 1 << 16 {
        2
    } else {
        4
    }
}

fn width_code(widths: &[usize; 4], width: usize) -> u8 {
    widths.iter().position(|&w| w == width).unwrap() as u8
}

/// Encoded header length for a meta in a given form.
pub fn header_len(meta: &EntryMeta, form: HeaderForm) -> usize {
    let mut len = 1;
    match form {
        HeaderForm::Primary => len += 6,
        HeaderForm::MigrationSecondary => len += 2,
        HeaderForm::DefaultSecondary => {}
    }
    len += min_local_id_width(meta.chunk.local_id());
    len += min_len_width(meta.packed_length());
    if meta.timestamp.is_some() {
        len += 4;
    }
    len += 2;
    len += min_version_width(meta.packed_version());
    if meta.chain.is_some() {
        len += 2;
    }
    if meta.checksum.is_some() {
        len += 4;
    }
    len
}

fn put_uint(out: &mut Vec<u8>, value: u64, width: usize) {
    out.extend_from_slice(&value.to_le_bytes()[..width]);
}

/// Appends the encoded header to `out`.
///
/// Rejects payloads larger than `max_entry_size`; oversized chunks must be
/// chained first.
pub fn encode_header_into(
    meta: &EntryMeta,
    form: HeaderForm,
    max_entry_size: usize,
    out: &mut Vec<u8>,
) -> Result<()> {
    if meta.payload_len as usize > max_entry_size {
        return Err(Error::EntryTooLarge {
            len: meta.payload_len as usize,
            max: max_entry_size,
        });
    }
    debug_assert!(meta.stamp.number <= MAX_VERSION_NUMBER);

    let lid_width = min_local_id_width(meta.chunk.local_id());
    let packed_len = meta.packed_length();
    let len_width = min_len_width(packed_len);
    let packed_ver = meta.packed_version();
    let ver_width = min_version_width(packed_ver);

    let type_byte = (form.code() << 6)
        | (width_code(&LID_WIDTHS, lid_width) << 4)
        | (width_code(&LEN_WIDTHS, len_width) << 2)
        | width_code(&VER_WIDTHS, ver_width);
    out.push(type_byte);

    match form {
        HeaderForm::Primary => {
            out.extend_from_slice(&meta.range_id.to_le_bytes());
            out.extend_from_slice(&meta.owner.to_le_bytes());
            out.extend_from_slice(&meta.chunk.creator().to_le_bytes());
        }
        HeaderForm::MigrationSecondary => {
            out.extend_from_slice(&meta.chunk.creator().to_le_bytes());
        }
        HeaderForm::DefaultSecondary => {}
    }

    put_uint(out, meta.chunk.local_id(), lid_width);
    put_uint(out, packed_len as u64, len_width);
    if let Some(ts) = meta.timestamp {
        out.extend_from_slice(&ts.to_le_bytes());
    }
    out.extend_from_slice(&meta.stamp.epoch.to_le_bytes());
    put_uint(out, packed_ver as u64, ver_width);
    if let Some(chain) = meta.chain {
        out.push(chain.position);
        out.push((chain.total - 1) as u8);
    }
    if let Some(crc) = meta.checksum {
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(())
}

pub fn encode_header(meta: &EntryMeta, form: HeaderForm, max_entry_size: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(header_len(meta, form));
    encode_header_into(meta, form, max_entry_size, &mut out)?;
    Ok(out)
}

/// Which form a decoder expects and how implied fields are filled in.
#[derive(Clone, Copy, Debug)]
pub enum FormContext {
    /// Write buffer or primary log: self-contained primary headers.
    Primary,
    /// A zone's secondary log (or secondary log buffer): default or
    /// migration headers; range, owner and the default-form creator come
    /// from the zone.
    Secondary(ZoneId),
}

#[derive(Clone, Copy, Debug)]
pub struct DecodeContext {
    pub form: FormContext,
    pub timestamps: bool,
    pub checksums: bool,
}

/// A decoded entry: its meta, the form it was stored in, the payload span
/// within the source buffer and the offset of the next entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedEntry {
    pub meta: EntryMeta,
    pub form: HeaderForm,
    pub payload: Range<usize>,
    pub next_offset: usize,
}

fn get_uint(buf: &[u8], at: &mut usize, width: usize, offset: u64) -> Result<u64> {
    if *at + width > buf.len() {
        return Err(Error::Corrupt {
            offset,
            reason: "truncated header",
        });
    }
    let mut bytes = [0u8; 8];
    bytes[..width].copy_from_slice(&buf[*at..*at + width]);
    *at += width;
    Ok(u64::from_le_bytes(bytes))
}

/// Decodes the entry starting at `offset`. Returns `None` when the type
/// byte is 0: the end of the written data, not an error.
pub fn decode_entry(buf: &[u8], offset: usize, ctx: &DecodeContext) -> Result<Option<DecodedEntry>> {
    let off64 = offset as u64;
    if offset >= buf.len() {
        return Err(Error::Corrupt {
            offset: off64,
            reason: "offset beyond buffer",
        });
    }
    let type_byte = buf[offset];
    if type_byte == END_OF_DATA {
        return Ok(None);
    }
    let form = HeaderForm::from_code(type_byte >> 6).ok_or(Error::Corrupt {
        offset: off64,
        reason: "invalid form code",
    })?;
    match (&ctx.form, form) {
        (FormContext::Primary, HeaderForm::Primary) => {}
        (FormContext::Secondary(_), HeaderForm::DefaultSecondary)
        | (FormContext::Secondary(_), HeaderForm::MigrationSecondary) => {}
        _ => {
            return Err(Error::Corrupt {
                offset: off64,
                reason: "header form does not match the log it was read from",
            })
        }
    }

    let lid_width = LID_WIDTHS[((type_byte >> 4) & 0x3) as usize];
    let len_width = LEN_WIDTHS[((type_byte >> 2) & 0x3) as usize];
    let ver_width = VER_WIDTHS[(type_byte & 0x3) as usize];

    let mut at = offset + 1;
    let (range_id, owner, creator) = match (form, &ctx.form) {
        (HeaderForm::Primary, _) => {
            let range_id = get_uint(buf, &mut at, 2, off64)? as u16;
            let owner = get_uint(buf, &mut at, 2, off64)? as u16;
            let creator = get_uint(buf, &mut at, 2, off64)? as u16;
            (range_id, owner, creator)
        }
        (HeaderForm::MigrationSecondary, FormContext::Secondary(zone)) => {
            let creator = get_uint(buf, &mut at, 2, off64)? as u16;
            (zone.range_id, zone.creator, creator)
        }
        (HeaderForm::DefaultSecondary, FormContext::Secondary(zone)) => {
            (zone.range_id, zone.creator, zone.creator)
        }
        _ => unreachable!(),
    };

    let local_id = get_uint(buf, &mut at, lid_width, off64)?;
    let packed_len = get_uint(buf, &mut at, len_width, off64)? as u32;
    let chained = packed_len & LEN_CHAIN_BIT != 0;
    let payload_len = packed_len & !LEN_CHAIN_BIT;
    let timestamp = if ctx.timestamps {
        Some(get_uint(buf, &mut at, 4, off64)? as u32)
    } else {
        None
    };
    let epoch = get_uint(buf, &mut at, 2, off64)? as u16;
    let packed_ver = if ver_width == 0 {
        1
    } else {
        get_uint(buf, &mut at, ver_width, off64)? as u32
    };
    let chain = if chained {
        let position = get_uint(buf, &mut at, 1, off64)? as u8;
        let total = get_uint(buf, &mut at, 1, off64)? as u16 + 1;
        Some(ChainInfo { position, total })
    } else {
        None
    };
    let checksum = if ctx.checksums {
        Some(get_uint(buf, &mut at, 4, off64)? as u32)
    } else {
        None
    };

    if at + payload_len as usize > buf.len() {
        return Err(Error::Corrupt {
            offset: off64,
            reason: "truncated payload",
        });
    }
    let payload = at..at + payload_len as usize;

    Ok(Some(DecodedEntry {
        meta: EntryMeta {
            chunk: ChunkId::new(creator, local_id),
            range_id,
            owner,
            payload_len,
            timestamp,
            stamp: VersionStamp::new(epoch, packed_ver & !VERSION_DELETED_BIT),
            deleted: packed_ver & VERSION_DELETED_BIT != 0,
            chain,
            checksum,
        },
        form,
        payload: payload.clone(),
        next_offset: payload.end,
    }))
}

/// Converts one primary-form entry header to its secondary form for the
/// given zone: default when the entry's creator is the zone's creator,
/// migration otherwise. Returns the secondary header bytes plus the length
/// of the primary header consumed (the payload follows unchanged).
pub fn convert_header(
    primary: &[u8],
    offset: usize,
    zone: ZoneId,
    ctx: &DecodeContext,
) -> Result<(Vec<u8>, usize)> {
    let decoded = decode_entry(primary, offset, ctx)?.ok_or(Error::Corrupt {
        offset: offset as u64,
        reason: "end marker where a primary header was expected",
    })?;
    if decoded.form != HeaderForm::Primary {
        return Err(Error::Corrupt {
            offset: offset as u64,
            reason: "not a primary-form header",
        });
    }
    let form = if decoded.meta.chunk.creator() == zone.creator {
        HeaderForm::DefaultSecondary
    } else {
        HeaderForm::MigrationSecondary
    };
    let header = encode_header(&decoded.meta, form, decoded.meta.payload_len as usize)?;
    Ok((header, decoded.payload.start - offset))
}

/// One fragment of a chained payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub chain: Option<ChainInfo>,
    pub range: Range<usize>,
}

/// Splits a payload into `ceil(len / max_entry_size)` fragments. Payloads
/// that fit in a single entry come back as one fragment without chain info.
pub fn chain_split(payload_len: usize, max_entry_size: usize) -> Result<Vec<Fragment>> {
    if payload_len <= max_entry_size {
        return Ok(vec![Fragment {
            chain: None,
            range: 0..payload_len,
        }]);
    }
    let total = payload_len.div_ceil(max_entry_size);
    if total > MAX_CHAIN_FRAGMENTS {
        return Err(Error::ChainTooLong {
            len: payload_len,
            max_fragments: MAX_CHAIN_FRAGMENTS,
            max: max_entry_size,
        });
    }
    Ok((0..total)
        .map(|i| {
            let start = i * max_entry_size;
            let end = (start + max_entry_size).min(payload_len);
            Fragment {
                chain: Some(ChainInfo::new(i as u8, total as u16)),
                range: start..end,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checksum::crc32c;

    fn meta(payload: &[u8]) -> EntryMeta {
        EntryMeta {
            chunk: ChunkId::new(5, 200),
            range_id: 3,
            owner: 5,
            payload_len: payload.len() as u32,
            timestamp: None,
            stamp: VersionStamp::new(0, 0),
            deleted: false,
            chain: None,
            checksum: Some(crc32c(payload)),
        }
    }

    fn ctx(form: FormContext) -> DecodeContext {
        DecodeContext {
            form,
            timestamps: false,
            checksums: true,
        }
    }

    #[test]
    fn primary_round_trip() {
        let payload = b"hello zone";
        let m = meta(payload);
        let mut bytes = encode_header(&m, HeaderForm::Primary, 4096).unwrap();
        bytes.extend_from_slice(payload);
        let decoded = decode_entry(&bytes, 0, &ctx(FormContext::Primary))
            .unwrap()
            .unwrap();
        assert_eq!(decoded.meta, m);
        assert_eq!(&bytes[decoded.payload.clone()], payload);
        assert_eq!(decoded.next_offset, bytes.len());
    }

    #[test]
    fn version_one_takes_no_space() {
        let mut m = meta(b"x");
        m.stamp = VersionStamp::new(7, 1);
        let with_v1 = encode_header(&m, HeaderForm::DefaultSecondary, 4096).unwrap();
        m.stamp = VersionStamp::new(7, 2);
        let with_v2 = encode_header(&m, HeaderForm::DefaultSecondary, 4096).unwrap();
        assert_eq!(with_v1.len() + 1, with_v2.len());
        // and version 0 needs a byte
        m.stamp = VersionStamp::new(7, 0);
        let with_v0 = encode_header(&m, HeaderForm::DefaultSecondary, 4096).unwrap();
        assert_eq!(with_v0.len(), with_v2.len());
    }

    #[test]
    fn local_id_width_is_minimal() {
        let mut m = meta(b"x");
        m.chunk = ChunkId::new(5, 200);
        let small = encode_header(&m, HeaderForm::DefaultSecondary, 4096).unwrap();
        m.chunk = ChunkId::new(5, 70_000);
        let large = encode_header(&m, HeaderForm::DefaultSecondary, 4096).unwrap();
        assert_eq!(small.len() + 3, large.len()); // 1 byte vs 4 bytes
    }

    #[test]
    fn oversized_payload_rejected() {
        let mut m = meta(b"");
        m.payload_len = 4097;
        assert!(matches!(
            encode_header(&m, HeaderForm::Primary, 4096),
            Err(Error::EntryTooLarge { .. })
        ));
    }

    #[test]
    fn conversion_drops_zone_fields() {
        let payload = b"payload";
        let m = meta(payload); // creator 5 == owner 5
        let mut primary = encode_header(&m, HeaderForm::Primary, 4096).unwrap();
        let primary_header_len = primary.len();
        primary.extend_from_slice(payload);

        let zone = ZoneId::new(5, 3);
        let (sec, consumed) =
            convert_header(&primary, 0, zone, &ctx(FormContext::Primary)).unwrap();
        assert_eq!(consumed, primary_header_len);
        // range_id + owner + creator are gone
        assert_eq!(sec.len() + 6, primary_header_len);

        let mut sec_entry = sec.clone();
        sec_entry.extend_from_slice(payload);
        let decoded = decode_entry(&sec_entry, 0, &ctx(FormContext::Secondary(zone)))
            .unwrap()
            .unwrap();
        assert_eq!(decoded.form, HeaderForm::DefaultSecondary);
        assert_eq!(decoded.meta, m);
    }

    #[test]
    fn conversion_keeps_creator_when_migrated() {
        let payload = b"migrated";
        let mut m = meta(payload);
        m.chunk = ChunkId::new(9, 77); // creator 9 != zone creator 5
        let mut primary = encode_header(&m, HeaderForm::Primary, 4096).unwrap();
        let primary_header_len = primary.len();
        primary.extend_from_slice(payload);

        let zone = ZoneId::new(5, 3);
        let (sec, _) = convert_header(&primary, 0, zone, &ctx(FormContext::Primary)).unwrap();
        // only range_id + owner are gone
        assert_eq!(sec.len() + 4, primary_header_len);

        let mut sec_entry = sec;
        sec_entry.extend_from_slice(payload);
        let decoded = decode_entry(&sec_entry, 0, &ctx(FormContext::Secondary(zone)))
            .unwrap()
            .unwrap();
        assert_eq!(decoded.form, HeaderForm::MigrationSecondary);
        assert_eq!(decoded.meta.chunk, m.chunk);
        assert_eq!(decoded.meta.stamp, m.stamp);
        assert_eq!(decoded.meta.payload_len, m.payload_len);
    }

    #[test]
    fn zero_type_byte_is_end_of_data() {
        let buf = [0u8; 16];
        assert!(decode_entry(&buf, 0, &ctx(FormContext::Primary))
            .unwrap()
            .is_none());
    }

    #[test]
    fn truncated_header_is_corruption() {
        let payload = b"hello";
        let m = meta(payload);
        let mut bytes = encode_header(&m, HeaderForm::Primary, 4096).unwrap();
        bytes.extend_from_slice(payload);
        for cut in 1..bytes.len() - payload.len() {
            let err = decode_entry(&bytes[..cut], 0, &ctx(FormContext::Primary));
            assert!(err.is_err(), "cut at {cut} should fail");
        }
    }

    #[test]
    fn chain_split_examples() {
        const MIB: usize = 1024 * 1024;
        // 3 MiB under a 4 MiB maximum: single unchained entry
        let single = chain_split(3 * MIB, 4 * MIB).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single[0].chain.is_none());

        // 10 MiB: fragments of 4, 4, 2 MiB with positions (0..3)
        let frags = chain_split(10 * MIB, 4 * MIB).unwrap();
        assert_eq!(frags.len(), 3);
        let sizes: Vec<usize> = frags.iter().map(|f| f.range.len()).collect();
        assert_eq!(sizes, vec![4 * MIB, 4 * MIB, 2 * MIB]);
        for (i, f) in frags.iter().enumerate() {
            assert_eq!(f.chain.unwrap(), ChainInfo::new(i as u8, 3));
        }

        // 1 GiB at the default 4 MiB maximum: exactly 256 fragments
        let frags = chain_split(1024 * MIB, 4 * MIB).unwrap();
        assert_eq!(frags.len(), 256);
        assert!(chain_split(1024 * MIB + 1, 4 * MIB).is_err());
    }

    #[test]
    fn chain_reassembly_is_identity() {
        let payload: Vec<u8> = (0..10_000u32).map(|i| (i % 251) as u8).collect();
        let frags = chain_split(payload.len(), 700).unwrap();
        let mut rebuilt = Vec::new();
        for f in &frags {
            rebuilt.extend_from_slice(&payload[f.range.clone()]);
        }
        assert_eq!(rebuilt, payload);
    }

    #[test]
    fn chained_header_round_trips() {
        let mut m = meta(b"frag");
        m.chain = Some(ChainInfo::new(2, 256));
        let mut bytes = encode_header(&m, HeaderForm::Primary, 4096).unwrap();
        bytes.extend_from_slice(b"frag");
        let decoded = decode_entry(&bytes, 0, &ctx(FormContext::Primary))
            .unwrap()
            .unwrap();
        assert_eq!(decoded.meta.chain, Some(ChainInfo::new(2, 256)));
        assert_eq!(decoded.meta, m);
    }

    #[test]
    fn deleted_marker_round_trips() {
        let mut m = meta(b"");
        m.payload_len = 0;
        m.checksum = Some(crc32c(b""));
        m.deleted = true;
        m.stamp = VersionStamp::new(4, 17);
        let bytes = encode_header(&m, HeaderForm::DefaultSecondary, 4096).unwrap();
        let decoded = decode_entry(
            &bytes,
            0,
            &ctx(FormContext::Secondary(ZoneId::new(5, 3))),
        )
        .unwrap()
        .unwrap();
        assert!(decoded.meta.deleted);
        assert_eq!(decoded.meta.stamp, VersionStamp::new(4, 17));
        assert_eq!(decoded.meta.payload_len, 0);
    }
}
