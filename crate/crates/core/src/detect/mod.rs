//! Diagonal-Gaussian anomaly detector on log-mel frames, and AUROC.

mod evaluate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{mel_spectrogram, AudioClip, AudioError, MelFrames, CANONICAL_RATE};
use crate::codec::CodecError;
pub use crate::datagen::LabeledEvent;
pub use evaluate::{evaluate_conditions, evaluate_with, variant_clip, AurocTable, Variant};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 512;
pub const N_MELS: usize = 64;
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no normal events to fit on")]
    NoNormalEvents,
    #[error("training set contains an anomalous event")]
    AnomalousInTraining,
    #[error("AUROC is undefined without both positive and negative labels")]
    UndefinedAuroc,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("feature width {got} does not match model width {expected}")]
    FeatureWidth { got: usize, expected: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub mean: Vec<f64>,
    /// Per-band variance plus [`VARIANCE_FLOOR`].
    pub variance: Vec<f64>,
    pub n_mels: usize,
    pub trained_on_rate: u32,
}

/// Log-mel frames of the clip on the canonical grid.
pub fn features(clip: &AudioClip) -> Result<MelFrames, AudioError> {
    mel_spectrogram(&clip.canonical(), N_FFT, HOP, N_MELS)
}

/// Per-band moments over every frame of every event. Population variance.
pub fn fit_features(sets: &[MelFrames]) -> Result<DetectorModel, DetectError> {
    let n_mels = sets.first().ok_or(DetectError::NoNormalEvents)?.n_mels;
    let mut sum = vec![0.0f64; n_mels];
    let mut count = 0usize;
    for m in sets {
        if m.n_mels != n_mels {
            return Err(DetectError::FeatureWidth { got: m.n_mels, expected: n_mels });
        }
        for row in m.rows() {
            sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        count += m.n_frames;
    }
    if count == 0 {
        return Err(DetectError::NoNormalEvents);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; n_mels];
    for row in sets.iter().flat_map(|m| m.rows()) {
        for ((q, v), mu) in sq.iter_mut().zip(row).zip(&mean) {
            *q += (v - mu) * (v - mu);
        }
    }
    let variance = sq.iter().map(|q| q / count as f64 + VARIANCE_FLOOR).collect();
    Ok(DetectorModel {
        mean,
        variance,
        n_mels,
        trained_on_rate: CANONICAL_RATE,
    })
}

pub fn fit(normal_events: &[LabeledEvent]) -> Result<DetectorModel, DetectError> {
    if normal_events.is_empty() {
        return Err(DetectError::NoNormalEvents);
    }
    if normal_events.iter().any(|e| e.is_anomalous()) {
        return Err(DetectError::AnomalousInTraining);
    }
    let sets = normal_events
        .iter()
        .map(|e| features(&e.clip))
        .collect::<Result<Vec<_>, _>>()?;
    fit_features(&sets)
}

/// Mean over frames of the squared Mahalanobis distance.
pub fn score_features(model: &DetectorModel, mel: &MelFrames) -> Result<f64, DetectError> {
    if mel.n_mels != model.n_mels {
        return Err(DetectError::FeatureWidth { got: mel.n_mels, expected: model.n_mels });
    }
    let total: f64 = mel
        .rows()
        .map(|row| {
            row.iter()
                .zip(&model.mean)
                .zip(&model.variance)
                .map(|((x, m), v)| (x - m) * (x - m) / v)
                .sum::<f64>()
        })
        .sum();
    Ok(total / mel.n_frames as f64)
}

pub fn score(model: &DetectorModel, event: &LabeledEvent) -> Result<f64, DetectError> {
    score_features(model, &features(&event.clip)?)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from midranks in exact integer arithmetic, so
/// the result equals pairwise counting to the last bit.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, DetectError> {
    if scores.len() != labels.len() {
        return Err(DetectError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(DetectError::NonFiniteScore(bad));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(DetectError::UndefinedAuroc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives; a tie group spanning ranks i+1..=j has
    // doubled midrank i+1+j.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled_rank_sum += positives * (i as u128 + 1 + j as u128);
        i = j;
    }
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / (2 * pos * neg) as f64)
}
