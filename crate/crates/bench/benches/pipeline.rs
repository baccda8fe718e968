use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use uuid::Uuid;

use zsdc_core::audio::{mel_spectrogram, resample, AudioClip};
use zsdc_core::codec::mdct::{analyze, Mdct};
use zsdc_core::codec::{Codec, CodecSpec, LatentCode};
use zsdc_core::datagen::{synth_event, Condition, Post, SiteProfile, WeatherProfile};
use zsdc_core::detect::auroc;
use zsdc_core::edge::{StoragePolicy, StorageState};
use zsdc_core::transport::{BatchRecord, TransferBatch, WireFrame};

fn one_second() -> AudioClip {
    let e = synth_event(&SiteProfile::for_post(Post::City), &WeatherProfile::for_condition(Condition::Wet), 1);
    AudioClip::new(e.clip.samples()[..44_100].to_vec(), 44_100).unwrap()
}

fn codec(c: &mut Criterion) {
    // Search cost does not depend on codebook contents.
    let codec = Codec::untrained(CodecSpec::default(), 1).unwrap();
    let clip = one_second();
    let z = codec.encode(&clip).unwrap();
    let bytes = z.serialize();
    let mut g = c.benchmark_group("codec");
    g.throughput(Throughput::Elements(1));
    g.bench_function("encode_1s", |b| b.iter(|| codec.encode(black_box(&clip)).unwrap()));
    g.bench_function("decode_1s", |b| b.iter(|| codec.decode(black_box(&z)).unwrap()));
    g.bench_function("serialize", |b| b.iter(|| black_box(&z).serialize()));
    g.bench_function("deserialize", |b| b.iter(|| LatentCode::deserialize(black_box(&bytes)).unwrap()));
    let lo = resample(&clip, 11_025).unwrap();
    g.bench_function("encode_1s_from_11025", |b| b.iter(|| codec.encode(black_box(&lo)).unwrap()));
    g.finish();
}

fn dsp(c: &mut Criterion) {
    let clip = one_second();
    let mut g = c.benchmark_group("dsp");
    g.throughput(Throughput::Elements(clip.len() as u64));
    g.bench_function("resample_44100_to_11025", |b| b.iter(|| resample(black_box(&clip), 11_025).unwrap()));
    g.bench_function("resample_11025_to_44100", |b| {
        let lo = resample(&clip, 11_025).unwrap();
        b.iter(|| resample(black_box(&lo), 44_100).unwrap())
    });
    g.bench_function("mel_1024_512_64", |b| b.iter(|| mel_spectrogram(black_box(&clip), 1024, 512, 64).unwrap()));
    let mdct = Mdct::new(1024);
    g.bench_function("mdct_analyze", |b| b.iter(|| analyze(&mdct, black_box(clip.samples()))));
    g.finish();
}

fn transport(c: &mut Criterion) {
    let batch = TransferBatch {
        batch_id: 9,
        post_id: "outer".into(),
        records: (0..64u128)
            .map(|i| BatchRecord {
                uuid: Uuid::from_u128(i + 1),
                payload: vec![i as u8; 3700],
            })
            .collect(),
    };
    let wire = WireFrame::batch(&batch).emit();
    let mut g = c.benchmark_group("transport");
    g.throughput(Throughput::Bytes(wire.len() as u64));
    g.bench_function("frame_emit", |b| b.iter(|| WireFrame::batch(black_box(&batch)).emit()));
    g.bench_function("frame_parse", |b| {
        b.iter(|| {
            let (f, _) = WireFrame::parse(black_box(&wire)).unwrap();
            TransferBatch::decode_body(&f.body).unwrap()
        })
    });
    g.finish();
}

fn edge(c: &mut Criterion) {
    let codec = Codec::untrained(CodecSpec::default(), 1).unwrap();
    let clip = one_second();
    let policy = StoragePolicy::with_capacity(40_000).unwrap();
    c.bench_function("edge/ingest_1s_with_eviction", |b| {
        b.iter_batched(
            || {
                let mut s = StorageState::new("city", 0);
                for t in 0..10 {
                    s.ingest(&policy, &codec, &clip, t).unwrap();
                }
                s
            },
            |mut s| s.ingest(&policy, &codec, &clip, 10).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn detect(c: &mut Criterion) {
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64).collect();
    let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    c.bench_function("detect/auroc_10000", |b| b.iter(|| auroc(black_box(&scores), black_box(&labels)).unwrap()));
}

criterion_group!(benches, codec, dsp, transport, edge, detect);
criterion_main!(benches);
