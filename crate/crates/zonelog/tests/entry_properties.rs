//! Property tests for the entry header format: round-trip identity over
//! randomized widths and forms, width minimality, and chain reassembly.

use proptest::prelude::*;

use zonelog::chunk::ChunkId;
use zonelog::entry::{
    chain_split, decode_entry, encode_header, ChainInfo, DecodeContext, EntryMeta, FormContext,
    HeaderForm,
};
use zonelog::version::VersionStamp;
use zonelog::ZoneId;

const MAX_ENTRY: usize = 4 * 1024 * 1024;

fn arb_local_id() -> impl Strategy<Value = u64> {
    prop_oneof![
        0u64..256,
        256u64..65_536,
        65_536u64..(1 << 32),
        (1u64 << 32)..(1 << 48),
    ]
}

fn arb_payload_len() -> impl Strategy<Value = u32> {
    prop_oneof![
        Just(0u32),
        1u32..256,
        256u32..65_536,
        65_536u32..=MAX_ENTRY as u32,
    ]
}

fn arb_version() -> impl Strategy<Value = u32> {
    prop_oneof![Just(1u32), Just(0u32), 2u32..256, 256u32..65_536, 65_536u32..(1 << 23)]
}

#[derive(Debug, Clone)]
struct Case {
    meta: EntryMeta,
    form: HeaderForm,
    timestamps: bool,
    checksums: bool,
    zone_creator: u16,
}

fn arb_case() -> impl Strategy<Value = Case> {
    (
        (any::<u16>(), arb_local_id()),     // creator, local id
        (any::<u16>(), any::<u16>()),       // range_id, zone creator
        arb_payload_len(),
        (any::<u16>(), arb_version(), any::<bool>()), // epoch, version, deleted
        proptest::option::of((any::<u8>(), 1u16..=256)),
        (any::<bool>(), any::<bool>()),     // timestamps, checksums
        proptest::option::of(any::<u32>()), // timestamp value
        0usize..3,                          // form selector
    )
        .prop_map(
            |(
                (creator, local_id),
                (range_id, zone_creator),
                payload_len,
                (epoch, version, deleted),
                chain_raw,
                (timestamps, checksums),
                ts_value,
                form_sel,
            )| {
                let form = match form_sel {
                    0 => HeaderForm::Primary,
                    1 => HeaderForm::DefaultSecondary,
                    _ => HeaderForm::MigrationSecondary,
                };
                // the default secondary form implies creator == zone creator
                let (creator, zone_creator) = if form == HeaderForm::DefaultSecondary {
                    (zone_creator, zone_creator)
                } else {
                    (creator, zone_creator)
                };
                let chain = chain_raw.map(|(pos, total)| {
                    let total = total.max(1);
                    ChainInfo::new((pos as u16 % total) as u8, total)
                });
                Case {
                    meta: EntryMeta {
                        chunk: ChunkId::new(creator, local_id),
                        range_id,
                        owner: zone_creator,
                        payload_len,
                        timestamp: timestamps.then(|| ts_value.unwrap_or(0)),
                        stamp: VersionStamp::new(epoch, version),
                        deleted,
                        chain,
                        checksum: checksums.then_some(0xDEAD_BEEF),
                    },
                    form,
                    timestamps,
                    checksums,
                    zone_creator,
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip_identity(case in arb_case()) {
        let header = encode_header(&case.meta, case.form, MAX_ENTRY).unwrap();
        // decode needs the payload bytes present; zero-fill suffices since
        // only the span is read
        let mut buf = header.clone();
        buf.resize(header.len() + case.meta.payload_len as usize, 0xAA);
        let ctx = DecodeContext {
            form: match case.form {
                HeaderForm::Primary => FormContext::Primary,
                _ => FormContext::Secondary(ZoneId::new(case.zone_creator, case.meta.range_id)),
            },
            timestamps: case.timestamps,
            checksums: case.checksums,
        };
        let decoded = decode_entry(&buf, 0, &ctx).unwrap().unwrap();
        prop_assert_eq!(decoded.form, case.form);
        prop_assert_eq!(decoded.meta.chunk, case.meta.chunk);
        prop_assert_eq!(decoded.meta.payload_len, case.meta.payload_len);
        prop_assert_eq!(decoded.meta.stamp, case.meta.stamp);
        prop_assert_eq!(decoded.meta.deleted, case.meta.deleted);
        prop_assert_eq!(decoded.meta.chain, case.meta.chain);
        prop_assert_eq!(decoded.meta.timestamp, case.meta.timestamp);
        prop_assert_eq!(decoded.meta.checksum, case.meta.checksum);
        if case.form == HeaderForm::Primary {
            prop_assert_eq!(decoded.meta.range_id, case.meta.range_id);
            prop_assert_eq!(decoded.meta.owner, case.meta.owner);
        }
        prop_assert_eq!(decoded.payload.len(), case.meta.payload_len as usize);
        prop_assert_eq!(decoded.next_offset, buf.len());
    }

    /// No encoded field width can shrink without losing the value: nudging
    /// any variable-width value just below its width boundary shortens the
    /// encoding, and crossing it grows the encoding.
    #[test]
    fn widths_are_minimal(case in arb_case()) {
        let base = encode_header(&case.meta, case.form, MAX_ENTRY).unwrap().len();

        // local id at width boundaries
        for (value, width) in [(0u64, 1), (255, 1), (256, 2), (65_535, 2), (65_536, 4), ((1 << 32) - 1, 4), (1 << 32, 6)] {
            let mut m = case.meta;
            m.chunk = ChunkId::new(case.meta.chunk.creator(), value);
            let len = encode_header(&m, case.form, MAX_ENTRY).unwrap().len();
            let baseline_width = match case.meta.chunk.local_id() {
                0..=255 => 1,
                256..=65_535 => 2,
                65_536..=0xFFFF_FFFF => 4,
                _ => 6,
            };
            prop_assert_eq!(len as i64 - base as i64, width as i64 - baseline_width as i64);
        }

        // version width 0 iff the packed value is 1
        let mut m = case.meta;
        m.deleted = false;
        m.stamp = VersionStamp::new(m.stamp.epoch, 1);
        let v1 = encode_header(&m, case.form, MAX_ENTRY).unwrap().len();
        m.stamp = VersionStamp::new(m.stamp.epoch, 2);
        let v2 = encode_header(&m, case.form, MAX_ENTRY).unwrap().len();
        prop_assert_eq!(v2 - v1, 1);
    }

    #[test]
    fn chain_reassembly_identity(len in 0usize..100_000, max in 1usize..5_000) {
        let payload: Vec<u8> = (0..len).map(|i| (i * 31 % 251) as u8).collect();
        prop_assume!(len.div_ceil(max.max(1)) <= 256);
        let frags = chain_split(payload.len(), max).unwrap();
        let mut rebuilt = Vec::new();
        for (i, f) in frags.iter().enumerate() {
            if frags.len() > 1 {
                let chain = f.chain.unwrap();
                prop_assert_eq!(chain.position as usize, i);
                prop_assert_eq!(chain.total as usize, frags.len());
                prop_assert!(f.range.len() <= max);
            } else {
                prop_assert!(f.chain.is_none());
            }
            rebuilt.extend_from_slice(&payload[f.range.clone()]);
        }
        prop_assert_eq!(rebuilt, payload);
    }
}
