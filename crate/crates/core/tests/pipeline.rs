//! Edge nodes talking to a real central server over loopback TCP.

use std::net::TcpListener;

use zsdc_core::audio::{load_wav, resample, wav_file_size, CANONICAL_RATE};
use zsdc_core::central::{serve, Archive, CorpusFilter};
use zsdc_core::codec::{compression_ratio, train_codec, CodecSpec};
use zsdc_core::datagen::{synth_dataset, synth_generic_corpus};
use zsdc_core::edge::{persist, restore, StoragePolicy, StorageState};
use zsdc_core::transport::{deliver, send_with_retry, CostCounter, RetryPolicy, TcpLink};

const SMALL: CodecSpec = CodecSpec {
    frame_size: 256,
    hop: 128,
    n_subvectors: 8,
    n_stages: 2,
    codebook_size: 16,
    byte_budget_per_second: 5120,
};

#[test]
fn two_edges_restart_and_resend() {
    let codec = train_codec(SMALL, &synth_generic_corpus(7, 5).unwrap(), 5).unwrap().codec;
    let events = synth_dataset(0.001, 5).unwrap().events;
    assert_eq!(events.len(), 12);
    let dir = tempfile::tempdir().unwrap();
    let server = serve(TcpListener::bind("127.0.0.1:0").unwrap(), Archive::open(dir.path(), codec.clone()).unwrap()).unwrap();
    let addr = server.local_addr();

    let policy = StoragePolicy::new(1 << 20, 0.8, 3600).unwrap();
    let retry = RetryPolicy::default();
    let (first, second) = events.split_at(6);
    let mut counter = CostCounter::default();

    // Edge "a" records at 22.05 kHz, stops halfway and restarts from its log.
    let log = dir.path().join("a.zsdl");
    let mut a = StorageState::new("a", 0);
    let mut at = 1_000;
    for (i, e) in first.iter().enumerate() {
        let mut clip = resample(&e.clip, 22_050).unwrap();
        (clip.post_id, clip.captured_at) = (None, None);
        a.ingest_with_uuid(&policy, &codec, &clip, at + i as i64, e.uuid).unwrap();
    }
    persist(&a, &log).unwrap();
    let mut link = TcpLink::connect(addr).unwrap();
    assert!(deliver(&mut a, &mut link, 40_000, &retry, &mut counter, 2_000).unwrap() >= 1);
    assert!(a.is_empty());
    persist(&a, &log).unwrap();
    drop(link);
    let (mut a, report) = restore(&log).unwrap();
    assert!(a.is_empty() && report.discarded_bytes == 0 && report.corrupt_entries == 0);

    // Edge "b" records at 11.025 kHz with one batch sent twice.
    at = 5_000;
    let mut b = StorageState::new("b", 0);
    for (i, e) in second.iter().enumerate() {
        let mut clip = resample(&e.clip, 11_025).unwrap();
        (clip.post_id, clip.captured_at) = (None, None);
        b.ingest_with_uuid(&policy, &codec, &clip, at + i as i64, e.uuid).unwrap();
    }
    let mut link = TcpLink::connect(addr).unwrap();
    let batch = b.take_flush_batch(u64::MAX).unwrap();
    assert_eq!(batch.records.len(), 6);
    send_with_retry(&mut link, &batch, &retry, &mut counter).unwrap();
    send_with_retry(&mut link, &batch, &retry, &mut counter).unwrap();
    b.acknowledge(&batch, 6_000);
    assert!(b.is_empty());
    assert_eq!(deliver(&mut a, &mut link, 40_000, &retry, &mut counter, 6_000).unwrap(), 0);
    drop(link);

    let archive = server.shutdown();
    let manifest = archive.manifest();
    assert_eq!(manifest.len(), 12);
    for (e, (post, rate, base)) in events.iter().zip(
        std::iter::repeat(("a", 22_050, 1_000)).take(6).chain(std::iter::repeat(("b", 11_025, 5_000)).take(6)),
    ) {
        let m = manifest.entries().iter().find(|m| m.uuid == e.uuid).expect("archived");
        assert_eq!((m.post_id.as_str(), m.source_rate), (post, rate));
        assert!(m.captured_at >= base && m.captured_at < base + 6);
        let wav = load_wav(archive.root().join(&m.wav_path)).unwrap();
        assert_eq!((wav.sample_rate(), wav.len()), (CANONICAL_RATE, e.clip.len()));
        // Ten seconds of float-32 against a few tens of KiB of latent.
        let r = compression_ratio(wav_file_size(wav.len()), m.latent_bytes).unwrap();
        assert!(r < 0.05, "ratio {r}");
    }

    let only_b = CorpusFilter { post_ids: vec!["b".into()], time_range: None };
    let corpus = archive.build_corpus(&only_b).unwrap();
    assert_eq!(corpus.len(), 6);
    assert!(corpus.windows(2).all(|w| w[0].captured_at <= w[1].captured_at));
    let window = CorpusFilter { post_ids: vec![], time_range: Some((1_002, 5_001)) };
    assert_eq!(archive.build_corpus(&window).unwrap().len(), 4 + 1);

    // Reopening the directory sees the same manifest.
    let reopened = Archive::open(dir.path(), codec).unwrap();
    assert_eq!(reopened.manifest(), manifest);
}

/// Storage sizes quoted for one second of audio, in KiB rounded up:
/// 173, 87 and 44 at 44.1, 22.05 and 11.025 kHz. The ratios quoted next
/// to them (0.503, 0.254, 0.029 with a 5 KiB budget) follow from those
/// rounded figures.
#[test]
fn one_second_reference_sizes() {
    let kib = |rate: usize| wav_file_size(rate).div_ceil(1024);
    assert_eq!([kib(44_100), kib(22_050), kib(11_025)], [173, 87, 44]);
    let quoted = [(87.0_f64, 0.503), (44.0, 0.254), (5.0, 0.029)];
    for (k, r) in quoted {
        assert!((k / 173.0 - r).abs() < 5e-4, "{k}/173");
    }
    assert!((173.0_f64 / 5.0 - 34.6).abs() < 1e-9);
    // Exact byte ratios stay within half a percent of the rounded ones.
    let exact = [wav_file_size(22_050), wav_file_size(11_025)].map(|b| b as f64 / wav_file_size(44_100) as f64);
    assert!((exact[0] - 0.503).abs() < 5e-3 && (exact[1] - 0.254).abs() < 5e-3);
    // The default codec streams within its budget.
    let spec = CodecSpec::default();
    assert!(spec.predicted_bytes_per_second() <= spec.byte_budget_per_second as f64);
}
