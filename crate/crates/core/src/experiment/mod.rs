//! End-to-end experiment: synthetic data, codec training, the edge to
//! central pipeline and the size, detection, reconstruction and
//! transmission tables.

mod flat;
pub mod plot;

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::net::TcpListener;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, mse, resample, wav_file_size, AudioClip, CANONICAL_RATE};
use crate::central::{serve, Archive};
use crate::codec::{compression_ratio, train_codec, Codec, CodecSpec, TrainingReport};
use crate::datagen::{synth_dataset, synth_generic_corpus, Dataset, LabeledEvent, Post};
use crate::detect::{evaluate_with, variant_clip, AurocTable, DetectError, Variant};
use crate::edge::{StoragePolicy, StorageState};
use crate::transport::{cost_report, deliver, CostCounter, Link, LossyLink, RetryPolicy, TcpLink};

pub use flat::{from_flat_csv, to_flat_csv};

/// Source rates of the reconstruction table.
pub const MSE_RATES: [u32; 3] = [44_100, 22_050, 11_025];

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct ExperimentError {
    pub stage: &'static str,
    pub message: String,
}

fn stage<E: fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> ExperimentError {
    move |e| ExperimentError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Fraction of the full dataset's event counts.
    pub scale: f64,
    pub codec: CodecSpec,
    /// Clips in the generic training corpus.
    pub corpus_clips: usize,
    /// Events in the reconstruction table.
    pub mse_events: usize,
    pub capacity_bytes: u64,
    pub fill_threshold: f64,
    pub flush_interval_seconds: i64,
    pub max_batch_bytes: u64,
    /// Frame loss probability on the simulated link.
    pub link_loss: f64,
    /// Run the pipeline over loopback TCP instead of in process.
    #[serde(default)]
    pub net: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 0.02,
            codec: CodecSpec::default(),
            corpus_clips: 60,
            mse_events: 20,
            capacity_bytes: 64 << 20,
            fill_threshold: 0.8,
            flush_interval_seconds: 3600,
            max_batch_bytes: 1 << 20,
            link_loss: 0.0,
            net: false,
        }
    }
}

impl ExperimentConfig {
    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "scale" => self.scale = num(key, value)?,
            "corpus_clips" => self.corpus_clips = num(key, value)?,
            "mse_events" => self.mse_events = num(key, value)?,
            "capacity_bytes" => self.capacity_bytes = num(key, value)?,
            "fill_threshold" => self.fill_threshold = num(key, value)?,
            "flush_interval_s" | "flush_interval_seconds" => self.flush_interval_seconds = num(key, value)?,
            "max_batch_bytes" => self.max_batch_bytes = num(key, value)?,
            "link_loss" => self.link_loss = num(key, value)?,
            "net" => self.net = num(key, value)?,
            "frame_size" => self.codec.frame_size = num(key, value)?,
            "hop" => self.codec.hop = num(key, value)?,
            "n_subvectors" => self.codec.n_subvectors = num(key, value)?,
            "n_stages" => self.codec.n_stages = num(key, value)?,
            "codebook_size" => self.codec.codebook_size = num(key, value)?,
            "byte_budget_per_second" => self.codec.byte_budget_per_second = num(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies a `key=value` file: one pair per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
            self.set(k.trim(), v.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.codec.validate().map_err(|e| e.to_string())?;
        StoragePolicy::new(self.capacity_bytes, self.fill_threshold, self.flush_interval_seconds)
            .map_err(|e| e.to_string())?;
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(format!("scale must be in (0, 1], got {}", self.scale));
        }
        if !(0.0..1.0).contains(&self.link_loss) {
            return Err(format!("link_loss must be in [0, 1), got {}", self.link_loss));
        }
        if self.corpus_clips == 0 || self.mse_events == 0 {
            return Err("corpus_clips and mse_events must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub variant: Variant,
    pub sample_rate: u32,
    /// Stored bytes for one second of audio.
    pub bytes: u64,
    pub ratio_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub source_rate: u32,
    /// Pooled over every sample of every event.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub records: u64,
    pub batches: u64,
    pub frames_sent: u64,
    pub bytes_sent: u64,
    pub raw_equivalent_bytes: u64,
    pub ratio: Option<f64>,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub frames: usize,
    pub stage_residual_energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub codec_version: u16,
    /// Absent when a ready-made codec was supplied.
    pub training: Option<TrainingSummary>,
    pub events: usize,
    pub size_table: Vec<SizeRow>,
    pub auroc_table: AurocTable,
    pub mse_table: Vec<MseRow>,
    pub transmission: Transmission,
}

impl ExperimentReport {
    pub fn size_row(&self, v: Variant) -> &SizeRow {
        self.size_table.iter().find(|r| r.variant == v).expect("every variant has a size row")
    }

    pub fn capacity_gain(&self) -> f64 {
        1.0 / self.size_row(Variant::Asr).ratio_size
    }

    /// Largest pairwise MSE difference relative to the 44.1 kHz source.
    pub fn mse_spread(&self) -> f64 {
        mse_spread(&self.mse_table.iter().map(|r| r.mse).collect::<Vec<_>>())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Every leaf as a `path,value` row.
    pub fn to_csv(&self) -> String {
        to_flat_csv(&serde_json::to_value(self).expect("report serializes"))
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        serde_json::from_value(from_flat_csv(text)?).map_err(|e| e.to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}  scale {}  events {}  codec {:04x}", self.config.seed, self.config.scale, self.events, self.codec_version);
        out.push_str("\nsize of one second\n");
        for r in &self.size_table {
            let _ = writeln!(out, "  {:<9} {:>6} Hz {:>8} B  ratio {:.4}", r.variant.label(), r.sample_rate, r.bytes, r.ratio_size);
        }
        let _ = writeln!(out, "  capacity gain {:.1}x", self.capacity_gain());
        out.push_str("\nAUROC\n");
        for line in self.auroc_table.to_text().lines() {
            let _ = writeln!(out, "  {line}");
        }
        out.push_str("\nreconstruction MSE by source rate\n");
        for r in &self.mse_table {
            let _ = writeln!(out, "  {:>6} Hz {:.6e}", r.source_rate, r.mse);
        }
        let _ = writeln!(out, "  max relative spread {:.4}", self.mse_spread());
        let t = &self.transmission;
        out.push_str("\ntransmission\n");
        let _ = writeln!(
            out,
            "  {} records in {} batches, {} frames, {} B sent for {} B of WAV, ratio {}, dropped {}",
            t.records,
            t.batches,
            t.frames_sent,
            t.bytes_sent,
            t.raw_equivalent_bytes,
            t.ratio.map_or("n/a".into(), |r| format!("{r:.4}")),
            t.dropped
        );
        out
    }
}

pub fn mse_spread(values: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            worst = worst.max((a - b).abs());
        }
    }
    worst / values[0]
}

/// Size rows for one second of audio: WAV at each rate, and the latent
/// of the first second of `clip`.
pub fn size_table(codec: &Codec, clip: &AudioClip) -> Result<Vec<SizeRow>, ExperimentError> {
    let canonical = clip.canonical();
    if canonical.len() < CANONICAL_RATE as usize {
        return Err(stage("size")("size rows need at least one second of audio"));
    }
    let mut one_second = AudioClip::new(canonical.samples()[..CANONICAL_RATE as usize].to_vec(), CANONICAL_RATE)
        .map_err(stage("size"))?;
    one_second.post_id = clip.post_id.clone();
    one_second.captured_at = clip.captured_at;
    let latent = codec.encode(&one_second).map_err(stage("size"))?.serialized_len() as u64;
    let hifi = wav_file_size(CANONICAL_RATE as usize);
    let rows = [
        (Variant::Hifi, CANONICAL_RATE, hifi),
        (Variant::Lofi22, 22_050, wav_file_size(22_050)),
        (Variant::Lofi11, 11_025, wav_file_size(11_025)),
        (Variant::Asr, CANONICAL_RATE, latent),
    ];
    Ok(rows
        .into_iter()
        .map(|(variant, sample_rate, bytes)| SizeRow {
            variant,
            sample_rate,
            bytes,
            ratio_size: compression_ratio(hifi, bytes).expect("sizes are positive"),
        })
        .collect())
}

/// Evenly spaced indices into `n` items.
pub fn spread_indices(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|i| i * n / k).collect()
}

/// Pooled MSE between each original and the decoded version of it
/// presented at every rate in [`MSE_RATES`].
pub fn mse_table(codec: &Codec, clips: &[&AudioClip]) -> Result<Vec<MseRow>, ExperimentError> {
    MSE_RATES
        .into_iter()
        .map(|rate| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for &x in clips {
                let x = x.canonical();
                let source = if rate == CANONICAL_RATE { x.clone() } else { resample(&x, rate).map_err(stage("mse"))? };
                let d = codec
                    .decode(&codec.encode(&source).map_err(stage("mse"))?)
                    .map_err(stage("mse"))?;
                sum += mse(&x, &d).map_err(stage("mse"))? * x.len() as f64;
                n += x.len();
            }
            Ok(MseRow {
                source_rate: rate,
                mse: sum / n as f64,
            })
        })
        .collect()
}

struct Delivered {
    counter: CostCounter,
    batches: u64,
    dropped: u64,
}

/// Feeds events in capture order to one edge per post; `link_of` picks the
/// link an edge sends through.
fn drive_edges<L: Link>(
    config: &ExperimentConfig,
    codec: &Codec,
    events: &[LabeledEvent],
    links: &mut [L],
    link_of: impl Fn(Post) -> usize,
) -> Result<Delivered, ExperimentError> {
    let policy = StoragePolicy::new(config.capacity_bytes, config.fill_threshold, config.flush_interval_seconds)
        .map_err(stage("pipeline"))?;
    let retry = RetryPolicy::default();
    let mut counter = CostCounter::default();
    let mut order: Vec<&LabeledEvent> = events.iter().collect();
    order.sort_by_key(|e| e.clip.captured_at.unwrap_or(0));
    let start = order.first().and_then(|e| e.clip.captured_at).unwrap_or(0);
    let mut edges: Vec<(Post, StorageState)> = Post::ALL.into_iter().map(|p| (p, StorageState::new(p.as_str(), start))).collect();
    let mut batches = 0;
    for e in &order {
        let now = e.clip.captured_at.unwrap_or(0);
        let state = &mut edges.iter_mut().find(|(p, _)| *p == e.post).expect("edge per post").1;
        state
            .ingest_with_uuid(&policy, codec, &e.clip, now, e.uuid)
            .map_err(stage("pipeline"))?;
        counter.add_raw_clip(e.clip.len());
        if state.should_flush(&policy, now) {
            let link = &mut links[link_of(e.post)];
            batches += deliver(state, link, config.max_batch_bytes, &retry, &mut counter, now).map_err(stage("pipeline"))?;
        }
    }
    let end = order.last().and_then(|e| e.clip.captured_at).unwrap_or(0);
    let mut dropped = 0;
    for (post, state) in &mut edges {
        let link = &mut links[link_of(*post)];
        batches += deliver(state, link, config.max_batch_bytes, &retry, &mut counter, end).map_err(stage("pipeline"))?;
        dropped += state.dropped_count;
    }
    Ok(Delivered { counter, batches, dropped })
}

fn finish_pipeline(archive: Archive, events: &[LabeledEvent], d: Delivered) -> Result<(Archive, Transmission), ExperimentError> {
    if archive.manifest().len() as u64 + d.dropped != events.len() as u64 {
        return Err(stage("pipeline")(format!(
            "archive holds {} of {} events with {} dropped",
            archive.manifest().len(),
            events.len(),
            d.dropped
        )));
    }
    let report = cost_report(&d.counter);
    Ok((
        archive,
        Transmission {
            records: events.len() as u64 - d.dropped,
            batches: d.batches,
            frames_sent: d.counter.frames_sent,
            bytes_sent: report.bytes_sent,
            raw_equivalent_bytes: report.raw_equivalent_bytes,
            ratio: report.ratio,
            dropped: d.dropped,
        },
    ))
}

/// Runs every event through per-post edges and a simulated link into an
/// archive under `archive_dir`.
pub fn run_pipeline(
    config: &ExperimentConfig,
    codec: &Codec,
    events: &[LabeledEvent],
    archive_dir: &Path,
) -> Result<(Archive, Transmission), ExperimentError> {
    let archive = Archive::open(archive_dir, codec.clone()).map_err(stage("pipeline"))?;
    let mut links = [LossyLink::new(archive, config.link_loss, 0.0, config.seed ^ 0x6c69_6e6b)];
    let delivered = drive_edges(config, codec, events, &mut links, |_| 0)?;
    let [link] = links;
    finish_pipeline(link.handler, events, delivered)
}

/// As [`run_pipeline`] over TCP: a central server on an ephemeral loopback
/// port and one connection per edge. `link_loss` does not apply.
pub fn run_pipeline_net(
    config: &ExperimentConfig,
    codec: &Codec,
    events: &[LabeledEvent],
    archive_dir: &Path,
) -> Result<(Archive, Transmission), ExperimentError> {
    let archive = Archive::open(archive_dir, codec.clone()).map_err(stage("pipeline"))?;
    let listener = TcpListener::bind(("127.0.0.1", 0)).map_err(stage("pipeline"))?;
    let server = serve(listener, archive).map_err(stage("pipeline"))?;
    let addr = server.local_addr();
    let delivered = {
        let mut links = Vec::new();
        for _ in Post::ALL {
            links.push(TcpLink::connect(addr).map_err(stage("pipeline"))?);
        }
        drive_edges(config, codec, events, &mut links, |p| Post::ALL.iter().position(|&q| q == p).expect("known post"))
    };
    // The links are closed here, so shutdown does not wait on them.
    let archive = server.shutdown();
    finish_pipeline(archive, events, delivered?)
}

/// Trains the codec on the generic corpus and runs the whole experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate().map_err(stage("config"))?;
    let corpus = synth_generic_corpus(config.corpus_clips, config.seed).map_err(stage("train"))?;
    let trained = train_codec(config.codec, &corpus, config.seed).map_err(stage("train"))?;
    run_experiment_with(config, &trained.codec, Some(&trained.report))
}

/// As [`run_experiment`] with a ready codec.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    codec: &Codec,
    training: Option<&TrainingReport>,
) -> Result<ExperimentReport, ExperimentError> {
    config.validate().map_err(stage("config"))?;
    if codec.spec() != &config.codec {
        return Err(stage("config")("codec spec differs from the configured spec"));
    }
    let Dataset { events, .. } = synth_dataset(config.scale, config.seed).map_err(stage("generate"))?;
    let first = events.first().ok_or_else(|| stage("generate")("dataset is empty"))?;
    let size_table = size_table(codec, &first.clip)?;

    let dir = tempfile::tempdir().map_err(stage("pipeline"))?;
    let (archive, transmission) = if config.net {
        run_pipeline_net(config, codec, &events, dir.path())?
    } else {
        run_pipeline(config, codec, &events, dir.path())?
    };
    let paths: HashMap<_, _> = archive
        .manifest()
        .entries()
        .iter()
        .map(|e| (e.uuid, archive.root().join(&e.wav_path)))
        .collect();
    let auroc_table = evaluate_with(&events, |variant, _, e| match variant {
        // The codec column is whatever the central server archived.
        Variant::Asr => match paths.get(&e.uuid) {
            Some(p) => Ok(load_wav(p)?),
            None => variant_clip(variant, &e.clip, codec),
        },
        _ => variant_clip(variant, &e.clip, codec),
    })
    .map_err(|e: DetectError| stage("evaluate")(e))?;

    let picked: Vec<&AudioClip> = spread_indices(events.len(), config.mse_events)
        .into_iter()
        .map(|i| &events[i].clip)
        .collect();
    let mse_table = mse_table(codec, &picked)?;

    Ok(ExperimentReport {
        config: config.clone(),
        codec_version: codec.version(),
        training: training.map(|t| TrainingSummary {
            frames: t.frames,
            stage_residual_energy: t.stage_residual_energy.clone(),
        }),
        events: events.len(),
        size_table,
        auroc_table,
        mse_table,
        transmission,
    })
}
