//! Secondary log placement policy and the active-segment protocol.

use std::sync::Arc;

use zonelog::chunk::ZoneId;
use zonelog::config::{BackendKind, Config};
use zonelog::secondary_log::{Placement, SecondaryLog, WriteOutcome};
use zonelog::storage::{IoStats, LogName, StorageProvider};

const SEG: usize = 16 * 4096; // 64 KiB segments

fn test_log(dir: &std::path::Path, segments: usize) -> SecondaryLog {
    let mut cfg = Config::new(dir);
    cfg.backend = BackendKind::Buffered;
    let provider = StorageProvider::new(&cfg, Arc::new(IoStats::default()));
    let id = ZoneId::new(1, 0);
    let file_size = (segments * SEG) as u64;
    let store = provider.open_log(LogName::Secondary(id), file_size).unwrap();
    SecondaryLog::new(id, store, file_size / 2, file_size, SEG, 4096, false, true, 0)
}

/// A synthetic batch of `n` entries of `size` bytes each.
fn batch(n: usize, size: usize, fill: u8) -> (Vec<u8>, Vec<usize>) {
    let data = vec![fill; n * size];
    let offsets = (0..n).map(|i| i * size).collect();
    (data, offsets)
}

fn place(log: &SecondaryLog, data: &[u8], offsets: &[usize]) -> Vec<Placement> {
    match log.write_batch(data, offsets, 0).unwrap() {
        WriteOutcome::Placed(p) => p,
        WriteOutcome::NeedsReorg => panic!("unexpected NeedsReorg"),
    }
}

#[test]
fn seventy_five_percent_batches_open_a_fresh_segment() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 4);
    let (data, offsets) = batch(3, SEG / 4, 0xAA); // exactly 75%
    let placed = place(&log, &data, &offsets);
    assert_eq!(placed, vec![Placement { segment: 0, segment_offset: 0, batch_start: 0, batch_end: data.len() }]);
    // the next 75% batch opens segment 1 even though segment 0 has room
    let placed = place(&log, &data, &offsets);
    assert_eq!(placed[0].segment, 1);
    assert_eq!(placed[0].segment_offset, 0);
}

#[test]
fn small_batches_best_fit_into_used_segments() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 4);
    // seg 0: 75% full, seg 1: 75% full, then a bit more into seg 1
    let (big, big_off) = batch(3, SEG / 4, 0x01);
    place(&log, &big, &big_off);
    place(&log, &big, &big_off);
    let (mid, mid_off) = batch(1, SEG / 8, 0x02);
    let placed = place(&log, &mid, &mid_off);
    // best fit: seg 0 and seg 1 both have SEG/4 free; tie goes to seg 0
    assert_eq!(placed[0].segment, 0);
    assert_eq!(placed[0].segment_offset, 3 * SEG / 4);

    // now seg 0 has SEG/8 free, seg 1 SEG/4: a SEG/8 batch best-fits seg 0
    let placed = place(&log, &mid, &mid_off);
    assert_eq!(placed[0].segment, 0, "smallest sufficient gap wins");
    // seg 0 full; same batch now lands in seg 1
    let placed = place(&log, &mid, &mid_off);
    assert_eq!(placed[0].segment, 1);
}

#[test]
fn small_batch_without_fit_opens_fresh_segment() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 4);
    let (big, big_off) = batch(7, SEG / 8, 0x01); // 7/8 of a segment
    place(&log, &big, &big_off);
    let (quarter, quarter_off) = batch(1, SEG / 4, 0x02);
    // no used segment has SEG/4 free: fresh segment
    let placed = place(&log, &quarter, &quarter_off);
    assert_eq!(placed[0].segment, 1);
    assert_eq!(placed[0].segment_offset, 0);
}

#[test]
fn split_fills_most_free_segments_at_entry_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 3);
    // fill: seg0 7/8, seg1 3/4, seg2 13/16
    let (b0, o0) = batch(7, SEG / 8, 0x01);
    place(&log, &b0, &o0);
    let (b1, o1) = batch(6, SEG / 8, 0x02);
    place(&log, &b1, &o1);
    let (b2, o2) = batch(13, SEG / 16, 0x03);
    place(&log, &b2, &o2);

    // free: seg0 SEG/8, seg1 SEG/4, seg2 3*SEG/16. A half-segment batch of
    // 8 entries cannot fit anywhere whole: split over most-free first.
    let (b, o) = batch(8, SEG / 16, 0x04);
    let placed = place(&log, &b, &o);
    assert_eq!(placed.len(), 3);
    assert_eq!(placed[0].segment, 1, "most free space first");
    assert_eq!(placed[0].batch_end - placed[0].batch_start, SEG / 4);
    assert_eq!(placed[1].segment, 2);
    assert_eq!(placed[1].batch_end - placed[1].batch_start, 3 * SEG / 16);
    assert_eq!(placed[2].segment, 0);
    // every piece ends on an entry boundary
    for p in &placed {
        assert_eq!(p.batch_start % (SEG / 16), 0);
        assert_eq!(p.batch_end % (SEG / 16), 0);
        assert!(p.segment_offset + (p.batch_end - p.batch_start) <= SEG);
    }
}

#[test]
fn full_log_reports_needs_reorg() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 2);
    let (b, o) = batch(4, SEG / 4, 0x01);
    place(&log, &b, &o);
    place(&log, &b, &o);
    let (b2, o2) = batch(1, SEG / 2, 0x02);
    assert!(matches!(
        log.write_batch(&b2, &o2, 0).unwrap(),
        WriteOutcome::NeedsReorg
    ));
}

#[test]
fn active_segment_takes_writes_during_reorganization() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 4);
    // segment 0 half full, segment 1 nearly full
    let (half, half_off) = batch(2, SEG / 4, 0x01);
    place(&log, &half, &half_off);
    let (big, big_off) = batch(3, SEG / 4, 0x02);
    let placed = place(&log, &big, &big_off);
    assert_eq!(placed[0].segment, 1);

    // reorganization holds segment 0; even though it has the most free
    // space among used segments, writes go to a different, active segment
    log.begin_reorg();
    log.begin_reorg_segment(0);
    let (small, small_off) = batch(1, SEG / 8, 0x03);
    let placed = place(&log, &small, &small_off);
    let active = placed[0].segment;
    assert_ne!(active, 0, "the reorganized segment is never active");
    assert_eq!(log.active_segment(), Some(active));

    // the active segment is kept until it fills
    let placed = place(&log, &small, &small_off);
    assert_eq!(placed[0].segment, active);

    // filling it forces an exchange, still avoiding segment 0
    let (filler, filler_off) = batch(7, SEG / 8, 0x04);
    let placed = place(&log, &filler, &filler_off);
    let last = placed.last().unwrap().segment;
    assert_ne!(last, 0);
    log.end_reorg();
    assert_eq!(log.active_segment(), None);
}

#[test]
fn free_segment_resets_and_becomes_placeable() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 2);
    let (b, o) = batch(3, SEG / 4, 0x01);
    place(&log, &b, &o);
    assert!(log.used_total() > 0);
    log.free_segment(0, 5).unwrap();
    assert_eq!(log.used_total(), 0);
    // freed segment reads as end-of-data immediately
    let image = log.read_segment(0).unwrap();
    assert_eq!(image[0], 0);
    // and is eligible as a fresh segment again
    let placed = place(&log, &b, &o);
    assert_eq!(placed[0].segment, 0);
    let infos = log.segment_infos();
    assert_eq!(infos[0].last_reorg, 5);
}

#[test]
fn used_bytes_sum_matches_total() {
    let dir = tempfile::tempdir().unwrap();
    let log = test_log(dir.path(), 4);
    let (b, o) = batch(5, 1000, 0x01);
    place(&log, &b, &o);
    place(&log, &b, &o);
    let infos = log.segment_infos();
    let sum: u64 = infos.iter().map(|s| s.used as u64).sum();
    assert_eq!(sum, log.used_total());
    assert_eq!(sum, 10_000);
}
