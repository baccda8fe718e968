use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, AudioError};

pub const DEFAULT_N_FFT: usize = 1024;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_N_MELS: usize = 64;
const LOG_EPSILON: f64 = 1e-10;

/// Log-mel energies, row-major `[n_frames x n_mels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelFrames {
    pub frames: Vec<f64>,
    pub n_frames: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub source_rate: u32,
}

impl MelFrames {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i * self.n_mels..(i + 1) * self.n_mels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.chunks_exact(self.n_mels)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `(lower, center, upper)` edge frequencies in Hz of each triangular band,
/// spaced uniformly on the mel scale from 0 Hz to Nyquist.
pub fn mel_band_edges(n_mels: usize, sample_rate: u32) -> Vec<(f64, f64, f64)> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    points.windows(3).map(|w| (w[0], w[1], w[2])).collect()
}

/// Dense `[n_mels x (n_fft/2 + 1)]` triangular filterbank.
fn filterbank(n_fft: usize, n_mels: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    mel_band_edges(n_mels, sample_rate)
        .into_iter()
        .map(|(lo, center, hi)| {
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / n_fft as f64;
                    let rise = (f - lo) / (center - lo);
                    let fall = (hi - f) / (hi - center);
                    rise.min(fall).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed power STFT, mel-projected and log10-compressed.
/// No padding: `n_frames = (len - n_fft) / hop + 1`.
pub fn mel_spectrogram(
    clip: &AudioClip,
    n_fft: usize,
    hop: usize,
    n_mels: usize,
) -> Result<MelFrames, AudioError> {
    assert!(n_fft > 0 && hop > 0 && n_mels > 0);
    if clip.len() < n_fft {
        return Err(AudioError::InsufficientLength {
            len: clip.len(),
            needed: n_fft,
        });
    }
    let n_frames = (clip.len() - n_fft) / hop + 1;
    let window = hann(n_fft);
    let bank = filterbank(n_fft, n_mels, clip.sample_rate());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0f64; n_fft / 2 + 1];
    let mut frames = Vec::with_capacity(n_frames * n_mels);
    for f in 0..n_frames {
        let chunk = &clip.samples()[f * hop..f * hop + n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new(x as f64 * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        frames.extend(bank.iter().map(|weights| {
            let e: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
            (e + LOG_EPSILON).log10()
        }));
    }
    Ok(MelFrames {
        frames,
        n_frames,
        n_fft,
        hop,
        n_mels,
        source_rate: clip.sample_rate(),
    })
}
