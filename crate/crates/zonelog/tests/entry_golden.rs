//! Golden on-disk fixtures for each header form. The hex dumps under
//! tests/golden/ were derived by hand from the layout (checksums via an
//! independent bit-level CRC32C); the encoder must reproduce them exactly
//! and the decoder must accept them.

use zonelog::checksum::crc32c;
use zonelog::chunk::ChunkId;
use zonelog::entry::{
    decode_entry, encode_header, ChainInfo, DecodeContext, EntryMeta, FormContext, HeaderForm,
};
use zonelog::version::VersionStamp;
use zonelog::ZoneId;

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    let hex = std::fs::read_to_string(path).unwrap();
    let hex = hex.trim();
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
        .collect()
}

#[test]
fn primary_form_matches_golden_bytes() {
    let payload = b"hello world";
    let meta = EntryMeta {
        chunk: ChunkId::new(5, 200),
        range_id: 3,
        owner: 5,
        payload_len: payload.len() as u32,
        timestamp: None,
        stamp: VersionStamp::new(2, 7),
        deleted: false,
        chain: None,
        checksum: Some(crc32c(payload)),
    };
    let mut encoded = encode_header(&meta, HeaderForm::Primary, 4 << 20).unwrap();
    encoded.extend_from_slice(payload);
    assert_eq!(encoded, fixture("primary.hex"));

    let ctx = DecodeContext {
        form: FormContext::Primary,
        timestamps: false,
        checksums: true,
    };
    let decoded = decode_entry(&encoded, 0, &ctx).unwrap().unwrap();
    assert_eq!(decoded.meta, meta);
}

#[test]
fn default_secondary_form_matches_golden_bytes() {
    let payload = b"hello world";
    let meta = EntryMeta {
        chunk: ChunkId::new(5, 200),
        range_id: 3,
        owner: 5,
        payload_len: payload.len() as u32,
        timestamp: None,
        stamp: VersionStamp::new(2, 1), // the width-0 version value
        deleted: false,
        chain: None,
        checksum: Some(crc32c(payload)),
    };
    let mut encoded = encode_header(&meta, HeaderForm::DefaultSecondary, 4 << 20).unwrap();
    encoded.extend_from_slice(payload);
    assert_eq!(encoded, fixture("default_secondary.hex"));

    let ctx = DecodeContext {
        form: FormContext::Secondary(ZoneId::new(5, 3)),
        timestamps: false,
        checksums: true,
    };
    let decoded = decode_entry(&encoded, 0, &ctx).unwrap().unwrap();
    assert_eq!(decoded.meta, meta);
}

#[test]
fn migration_secondary_form_matches_golden_bytes() {
    let payload = vec![0xAB; 1000];
    let meta = EntryMeta {
        chunk: ChunkId::new(9, 70_000),
        range_id: 3,
        owner: 5,
        payload_len: payload.len() as u32,
        timestamp: Some(3600),
        stamp: VersionStamp::new(1, 0),
        deleted: false,
        chain: Some(ChainInfo::new(2, 3)),
        checksum: Some(crc32c(&payload)),
    };
    let encoded = encode_header(&meta, HeaderForm::MigrationSecondary, 4 << 20).unwrap();
    assert_eq!(encoded, fixture("migration_secondary.hex"));

    let mut full = encoded;
    full.extend_from_slice(&payload);
    let ctx = DecodeContext {
        form: FormContext::Secondary(ZoneId::new(5, 3)),
        timestamps: true,
        checksums: true,
    };
    let decoded = decode_entry(&full, 0, &ctx).unwrap().unwrap();
    assert_eq!(decoded.meta, meta);
    assert_eq!(decoded.form, HeaderForm::MigrationSecondary);
}
