//! MDCT + gain-normalized residual vector quantization codec.
//!
//! The encoder runs on the edge node and the decoder on the central server;
//! both share the trained [`Codec`]. Every input is resampled to 44.1 kHz
//! before encoding, so one set of codebooks serves microphones of any rate and
//! the decoder always emits 44.1 kHz audio.

mod bits;
mod kmeans;
mod latent;
pub mod mdct;
mod model;
mod vq;

pub use kmeans::{kmeans, KMeans};
pub use latent::{
    LatentCode, LatentHeader, LatentParseError, LATENT_FORMAT_VERSION, LATENT_MAGIC,
    MAX_POST_ID_BYTES,
};
pub use model::{MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use vq::Codebook;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioClip, AudioError, CANONICAL_RATE};
use mdct::Mdct;

/// Lloyd iterations per codebook.
pub const KMEANS_ITERATIONS: usize = 25;
/// Serialized latents never exceed the budget by more than this.
pub const MAX_LATENT_HEADER_BYTES: usize = 64;
const LOG_GAIN_MIN: f64 = -30.0;
const LOG_GAIN_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid codec spec: {0}")]
    InvalidSpec(String),
    #[error("training corpus yields {frames} frames, need at least {needed}")]
    InsufficientTrainingData { frames: usize, needed: usize },
    #[error("latent incompatible with codec: {0}")]
    IncompatibleLatent(String),
    #[error("post id exceeds {MAX_POST_ID_BYTES} bytes")]
    PostIdTooLong,
    #[error("clip is longer than the latent format can describe")]
    ClipTooLong,
    #[error("malformed codec model: {0}")]
    Model(String),
    #[error(transparent)]
    Latent(#[from] LatentParseError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSpec {
    /// MDCT window length in samples (two hops).
    pub frame_size: usize,
    pub hop: usize,
    pub n_subvectors: usize,
    pub n_stages: usize,
    pub codebook_size: usize,
    pub byte_budget_per_second: usize,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self {
            frame_size: 2048,
            hop: 1024,
            n_subvectors: 32,
            n_stages: 2,
            codebook_size: 1024,
            byte_budget_per_second: 5120,
        }
    }
}

impl CodecSpec {
    pub fn validate(&self) -> Result<(), CodecError> {
        let fail = |m: &str| Err(CodecError::InvalidSpec(m.to_string()));
        if self.hop == 0 || self.frame_size != 2 * self.hop {
            return fail("frame_size must be twice the hop");
        }
        if self.n_subvectors == 0 || self.n_subvectors > u8::MAX as usize {
            return fail("n_subvectors must be in 1..=255");
        }
        if self.frame_size % self.n_subvectors != 0 || self.hop % self.n_subvectors != 0 {
            return fail("frame coefficients must split evenly into subvectors");
        }
        if self.n_stages == 0 || self.n_stages > u8::MAX as usize {
            return fail("n_stages must be in 1..=255");
        }
        if !self.codebook_size.is_power_of_two() || !(2..=1 << 16).contains(&self.codebook_size) {
            return fail("codebook_size must be a power of two in 2..=65536");
        }
        if self.predicted_bytes_per_second() > self.byte_budget_per_second as f64 {
            return Err(CodecError::InvalidSpec(format!(
                "predicted rate {:.1} B/s exceeds budget {} B/s",
                self.predicted_bytes_per_second(),
                self.byte_budget_per_second
            )));
        }
        Ok(())
    }

    pub fn index_bits(&self) -> u32 {
        self.codebook_size.trailing_zeros()
    }

    /// Each frame yields `hop` MDCT coefficients, split evenly.
    pub fn subvector_dim(&self) -> usize {
        self.hop / self.n_subvectors
    }

    pub fn frames_per_second(&self) -> f64 {
        CANONICAL_RATE as f64 / self.hop as f64
    }

    /// 16-bit gain plus one index per subvector and stage.
    pub fn bits_per_frame(&self) -> usize {
        self.n_subvectors * self.n_stages * self.index_bits() as usize + 16
    }

    pub fn predicted_bytes_per_second(&self) -> f64 {
        self.frames_per_second() * self.bits_per_frame() as f64 / 8.0
    }
}

fn quantize_gain(gain: f64) -> u16 {
    let log = if gain > 0.0 { gain.log2() } else { LOG_GAIN_MIN };
    let t = ((log - LOG_GAIN_MIN) / (LOG_GAIN_MAX - LOG_GAIN_MIN)).clamp(0.0, 1.0);
    (t * u16::MAX as f64).round() as u16
}

fn dequantize_gain(q: u16) -> f64 {
    let log = LOG_GAIN_MIN + (LOG_GAIN_MAX - LOG_GAIN_MIN) * q as f64 / u16::MAX as f64;
    log.exp2()
}

/// Frame-wise MDCT of a canonical clip with each frame scaled to unit RMS by
/// its quantized gain.
struct NormalizedFrames {
    gains: Vec<u16>,
    /// `[frame x hop]`
    coeffs: Vec<f32>,
}

fn normalized_frames(mdct: &Mdct, samples: &[f32]) -> NormalizedFrames {
    let m = mdct.coefficients();
    let mut coeffs = mdct::analyze(mdct, samples);
    let gains = coeffs
        .chunks_exact_mut(m)
        .map(|row| {
            let rms = (row.iter().map(|&c| (c as f64).powi(2)).sum::<f64>() / m as f64).sqrt();
            let q = quantize_gain(rms);
            let inv = 1.0 / dequantize_gain(q);
            row.iter_mut().for_each(|c| *c = (*c as f64 * inv) as f32);
            q
        })
        .collect();
    NormalizedFrames { gains, coeffs }
}

/// Copies subvector `s` of every frame into a contiguous `[frame x dim]` block.
fn gather_subvector(coeffs: &[f32], hop: usize, dim: usize, s: usize) -> Vec<f32> {
    coeffs
        .chunks_exact(hop)
        .flat_map(|row| &row[s * dim..(s + 1) * dim])
        .copied()
        .collect()
}

/// Trained encoder/decoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct Codec {
    spec: CodecSpec,
    /// Indexed `subvector * n_stages + stage`.
    codebooks: Vec<Codebook>,
    version: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub frames: usize,
    /// Mean squared residual per coefficient after each stage.
    pub stage_residual_energy: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainedCodec {
    pub codec: Codec,
    pub report: TrainingReport,
}

/// Trains per-subvector residual codebooks on gain-normalized MDCT frames.
/// Deterministic in `seed`.
pub fn train_codec(spec: CodecSpec, corpus: &[AudioClip], seed: u64) -> Result<TrainedCodec, CodecError> {
    spec.validate()?;
    let mdct = Mdct::new(spec.hop);
    let mut coeffs = Vec::new();
    for clip in corpus {
        if clip.is_empty() {
            continue;
        }
        coeffs.extend(normalized_frames(&mdct, clip.canonical().samples()).coeffs);
    }
    let frames = coeffs.len() / spec.hop;
    let needed = 10 * spec.codebook_size;
    if frames < needed {
        return Err(CodecError::InsufficientTrainingData { frames, needed });
    }
    let dim = spec.subvector_dim();
    let mut codebooks = Vec::with_capacity(spec.n_subvectors * spec.n_stages);
    let mut stage_error = vec![0.0f64; spec.n_stages];
    for s in 0..spec.n_subvectors {
        let mut residual = gather_subvector(&coeffs, spec.hop, dim, s);
        for stage in 0..spec.n_stages {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Stream depends only on (subvector, stage) so shallower specs share
            // their leading stages with deeper ones.
            rng.set_stream(((s as u64) << 8) | stage as u64);
            let km = kmeans(&residual, dim, spec.codebook_size, KMEANS_ITERATIONS, &mut rng);
            let cb = Codebook::new(dim, km.centroids);
            let nearest = cb.nearest(&residual);
            for (x, (idx, _)) in residual.chunks_exact_mut(dim).zip(nearest) {
                for (v, c) in x.iter_mut().zip(cb.centroid(idx as usize)) {
                    *v -= c;
                }
            }
            stage_error[stage] += residual.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
            codebooks.push(cb);
        }
    }
    let stage_residual_energy: Vec<f64> = stage_error
        .into_iter()
        .map(|e| e / (frames * spec.hop) as f64)
        .collect();
    let mut warnings = Vec::new();
    let degenerate = codebooks
        .iter()
        .filter(|cb| cb.entries().iter().all(|&v| v == 0.0))
        .count();
    if degenerate > 0 {
        let msg = format!(
            "{degenerate} of {} codebooks are all-zero; the training corpus carries no signal",
            codebooks.len()
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let codec = Codec::from_parts(spec, codebooks)?;
    Ok(TrainedCodec {
        codec,
        report: TrainingReport {
            frames,
            stage_residual_energy,
            warnings,
        },
    })
}

impl Codec {
    /// Assembles a codec from trained codebooks; the version is a checksum
    /// of the codec spec and every centroid.
    pub fn from_parts(spec: CodecSpec, codebooks: Vec<Codebook>) -> Result<Self, CodecError> {
        spec.validate()?;
        if codebooks.len() != spec.n_subvectors * spec.n_stages {
            return Err(CodecError::Model("wrong number of codebooks".into()));
        }
        for cb in &codebooks {
            if cb.dim() != spec.subvector_dim() || cb.len() != spec.codebook_size {
                return Err(CodecError::Model("codebook shape does not match spec".into()));
            }
            if cb.entries().iter().any(|v| !v.is_finite()) {
                return Err(CodecError::Model("non-finite centroid".into()));
            }
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&model::spec_bytes(&spec));
        for cb in &codebooks {
            for v in cb.entries() {
                hasher.update(&v.to_le_bytes());
            }
        }
        let crc = hasher.finalize();
        let version = match (crc ^ (crc >> 16)) as u16 {
            0 => 1,
            v => v,
        };
        Ok(Self {
            spec,
            codebooks,
            version,
        })
    }

    /// Random Gaussian codebooks, each stage at a third of the previous
    /// scale. Produces latents of the right shape and size without any
    /// training; useful for storage and transport plumbing.
    pub fn untrained(spec: CodecSpec, seed: u64) -> Result<Self, CodecError> {
        use rand_distr::{Distribution, StandardNormal};
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = spec.subvector_dim();
        let codebooks = (0..spec.n_subvectors * spec.n_stages)
            .map(|i| {
                let scale = 3f32.powi(-((i % spec.n_stages) as i32));
                let entries = (0..dim * spec.codebook_size)
                    .map(|_| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        scale * z / (dim as f32).sqrt()
                    })
                    .collect::<Vec<f32>>();
                Codebook::new(dim, entries)
            })
            .collect();
        Self::from_parts(spec, codebooks)
    }

    pub fn spec(&self) -> &CodecSpec {
        &self.spec
    }

    pub fn version(&self) -> u16 {
        self.version
    }

    pub fn codebook(&self, subvector: usize, stage: usize) -> &Codebook {
        &self.codebooks[subvector * self.spec.n_stages + stage]
    }

    pub(crate) fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    /// Canonicalizes `clip` to 44.1 kHz and quantizes it. The header keeps
    /// the clip's original rate and metadata.
    pub fn encode(&self, clip: &AudioClip) -> Result<LatentCode, CodecError> {
        if clip.is_empty() {
            return Err(AudioError::Empty.into());
        }
        let post_id = clip.post_id.clone().unwrap_or_default();
        if post_id.len() > MAX_POST_ID_BYTES {
            return Err(CodecError::PostIdTooLong);
        }
        let canonical = clip.canonical();
        let n_samples = u32::try_from(canonical.len()).map_err(|_| CodecError::ClipTooLong)?;
        let spec = &self.spec;
        let mdct = Mdct::new(spec.hop);
        let frames = normalized_frames(&mdct, canonical.samples());
        let n_frames = frames.gains.len();
        let dim = spec.subvector_dim();
        let per_frame = spec.n_subvectors * spec.n_stages;
        let mut indices = vec![0u16; n_frames * per_frame];
        for s in 0..spec.n_subvectors {
            let mut residual = gather_subvector(&frames.coeffs, spec.hop, dim, s);
            for stage in 0..spec.n_stages {
                let cb = self.codebook(s, stage);
                let nearest = cb.nearest(&residual);
                for (f, (x, (idx, _))) in residual.chunks_exact_mut(dim).zip(nearest).enumerate() {
                    indices[f * per_frame + s * spec.n_stages + stage] = idx as u16;
                    for (v, c) in x.iter_mut().zip(cb.centroid(idx as usize)) {
                        *v -= c;
                    }
                }
            }
        }
        Ok(LatentCode {
            header: LatentHeader {
                codec_version: self.version,
                index_bits: spec.index_bits() as u8,
                n_stages: spec.n_stages as u8,
                n_subvectors: spec.n_subvectors as u8,
                post_id,
                captured_at: clip.captured_at.unwrap_or(0),
                source_rate: clip.sample_rate(),
                n_samples,
                n_frames: u32::try_from(n_frames).map_err(|_| CodecError::ClipTooLong)?,
            },
            gains: frames.gains,
            indices,
        })
    }

    pub fn check_compatible(&self, z: &LatentCode) -> Result<(), CodecError> {
        let h = &z.header;
        let spec = &self.spec;
        if h.codec_version != self.version {
            return Err(CodecError::IncompatibleLatent(format!(
                "latent codec version {} does not match {}",
                h.codec_version, self.version
            )));
        }
        if h.index_bits as u32 != spec.index_bits()
            || h.n_stages as usize != spec.n_stages
            || h.n_subvectors as usize != spec.n_subvectors
        {
            return Err(CodecError::IncompatibleLatent("layout does not match codec spec".into()));
        }
        if z.gains.len() != h.n_frames as usize
            || z.indices.len() != h.n_frames as usize * spec.n_subvectors * spec.n_stages
        {
            return Err(CodecError::IncompatibleLatent("payload length".into()));
        }
        if let Some(&bad) = z.indices.iter().find(|&&i| i as usize >= spec.codebook_size) {
            return Err(CodecError::IncompatibleLatent(format!(
                "index {bad} outside codebook of {}",
                spec.codebook_size
            )));
        }
        let expected = mdct::frame_count(h.n_samples as usize, spec.hop);
        if h.n_samples == 0 || expected != h.n_frames as usize {
            return Err(CodecError::IncompatibleLatent(
                "frame count does not match sample count".into(),
            ));
        }
        Ok(())
    }

    /// Reconstructs 44.1 kHz audio whatever rate the source was captured at.
    pub fn decode(&self, z: &LatentCode) -> Result<AudioClip, CodecError> {
        self.check_compatible(z)?;
        let spec = &self.spec;
        let dim = spec.subvector_dim();
        let mdct = Mdct::new(spec.hop);
        let per_frame = spec.n_subvectors * spec.n_stages;
        let mut coeffs = vec![0.0f32; z.gains.len() * spec.hop];
        for (f, (row, &q)) in coeffs.chunks_exact_mut(spec.hop).zip(&z.gains).enumerate() {
            let gain = dequantize_gain(q);
            let idx = &z.indices[f * per_frame..(f + 1) * per_frame];
            for (s, sub) in row.chunks_exact_mut(dim).enumerate() {
                let mut acc = vec![0.0f64; dim];
                for stage in 0..spec.n_stages {
                    let c = self.codebook(s, stage).centroid(idx[s * spec.n_stages + stage] as usize);
                    acc.iter_mut().zip(c).for_each(|(a, &v)| *a += v as f64);
                }
                sub.iter_mut().zip(&acc).for_each(|(o, a)| *o = (a * gain) as f32);
            }
        }
        let samples = mdct::synthesize(&mdct, &coeffs, z.header.n_samples as usize)
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) as f32 } else { 0.0 })
            .collect();
        let mut clip = AudioClip::new(samples, CANONICAL_RATE)?;
        if !z.header.post_id.is_empty() {
            clip.post_id = Some(z.header.post_id.clone());
        }
        clip.captured_at = Some(z.header.captured_at);
        Ok(clip)
    }

    /// `decode(deserialize(bytes))`.
    pub fn decode_bytes(&self, bytes: &[u8]) -> Result<AudioClip, CodecError> {
        self.decode(&LatentCode::deserialize(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CodecError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CodecError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `coded / raw`; lower is better.
pub fn compression_ratio(raw_bytes: u64, coded_bytes: u64) -> Option<f64> {
    (raw_bytes > 0 && coded_bytes > 0).then(|| coded_bytes as f64 / raw_bytes as f64)
}
