//! Waveform container, WAV I/O, resampling, log-mel features and error metrics.

mod mel;
mod metrics;
mod resample;
mod wav;

pub use mel::{mel_band_edges, mel_spectrogram, MelFrames, DEFAULT_HOP, DEFAULT_N_FFT, DEFAULT_N_MELS};
pub use metrics::{mse, rms, snr_db};
pub use resample::{resample, Resampler, KAISER_BETA, TAPS_PER_PHASE};
pub use wav::{load_wav, read_wav, save_wav, wav_file_size, write_wav, WAV_HEADER_BYTES};

use thiserror::Error;

/// Every cross-rate comparison happens at this rate.
pub const CANONICAL_RATE: u32 = 44_100;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("sample rate must be positive")]
    InvalidRate,
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("malformed WAV: {0}")]
    Format(String),
    #[error("unsupported WAV layout: {0}")]
    UnsupportedLayout(String),
    #[error("clip has {len} samples, need at least {needed}")]
    InsufficientLength { len: usize, needed: usize },
    #[error("clip is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono waveform with its sample rate and optional capture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
    pub post_id: Option<String>,
    /// UTC seconds.
    pub captured_at: Option<i64>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate,
            post_id: None,
            captured_at: None,
        })
    }

    pub fn silence(n_samples: usize, sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(vec![0.0; n_samples], sample_rate)
    }

    pub fn with_post_id(mut self, post_id: impl Into<String>) -> Self {
        self.post_id = Some(post_id.into());
        self
    }

    pub fn with_captured_at(mut self, captured_at: i64) -> Self {
        self.captured_at = Some(captured_at);
        self
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same metadata, new samples and rate. Used by transforms that preserve provenance.
    pub(crate) fn derive(&self, samples: Vec<f32>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self {
            samples,
            sample_rate,
            post_id: self.post_id.clone(),
            captured_at: self.captured_at,
        }
    }

    /// Resampled to [`CANONICAL_RATE`]; a no-op copy when already there.
    pub fn canonical(&self) -> AudioClip {
        resample(self, CANONICAL_RATE).expect("canonical rate is valid")
    }
}
