//! Log-mel spectrogram images as binary PGM (P5).

use std::path::Path;

use crate::audio::{mel_band_edges, AudioClip, AudioError, MelFrames, CANONICAL_RATE};
use crate::detect::{features, N_MELS};

/// Grayscale image with time on x and mel bands on y, lowest band in the
/// bottom row, scaled linearly from the matrix minimum (0) to maximum (255).
/// A constant matrix maps to all zeros.
pub fn spectrogram_pgm(mel: &MelFrames) -> Vec<u8> {
    let (w, h) = (mel.n_frames, mel.n_mels);
    let (lo, hi) = mel
        .frames
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for band in (0..h).rev() {
        for f in 0..w {
            let v = mel.frames[f * h + band];
            let px = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
            out.push(px as u8);
        }
    }
    out
}

/// Writes the PGM of the clip's canonical log-mel matrix.
pub fn plot_spectrogram(clip: &AudioClip, out_path: impl AsRef<Path>) -> Result<(), AudioError> {
    let mel = features(clip)?;
    std::fs::write(out_path, spectrogram_pgm(&mel))?;
    Ok(())
}

/// Share of mel power in bands whose lower edge is at or above `min_hz`.
pub fn high_band_energy_fraction(clip: &AudioClip, min_hz: f64) -> Result<f64, AudioError> {
    let mel = features(clip)?;
    let edges = mel_band_edges(N_MELS, CANONICAL_RATE);
    let mut high = 0.0;
    let mut total = 0.0;
    for row in mel.rows() {
        for (&v, &(lo, _, _)) in row.iter().zip(&edges) {
            let p = 10f64.powf(v);
            total += p;
            if lo >= min_hz {
                high += p;
            }
        }
    }
    Ok(if total > 0.0 { high / total } else { 0.0 })
}
