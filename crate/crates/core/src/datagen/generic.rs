use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::shaping::{band_window, highpass2, shaped_noise};
use super::{event_seed, DatagenError};
use crate::audio::{AudioClip, CANONICAL_RATE};

pub const GENERIC_CLIP_SECONDS: f64 = 4.0;

const RATE: f64 = CANONICAL_RATE as f64;
const KINDS: u32 = 7;

/// General-purpose audio for codec training: tones, chirps, band-limited and
/// colored noise, AM/FM textures, note sequences and vowel-like pulse trains.
/// Nothing here has a pass-by envelope or site reflections.
pub fn synth_generic_corpus(n_clips: usize, seed: u64) -> Result<Vec<AudioClip>, DatagenError> {
    if n_clips == 0 {
        return Err(DatagenError::NoClips);
    }
    Ok((0..n_clips)
        .map(|i| generic_clip(i as u32 % KINDS, event_seed(seed, i as u64)))
        .collect())
}

fn generic_clip(kind: u32, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (GENERIC_CLIP_SECONDS * RATE) as usize;
    let mut x = match kind {
        0 => harmonic_tone(&mut rng, n),
        1 => chirp(&mut rng, n),
        2 => {
            let center: f64 = 2f64.powf(rng.random_range(200f64.log2()..12_000f64.log2()));
            let width: f64 = rng.random_range(0.3..2.0);
            let (lo, hi) = (center / 2f64.powf(width / 2.0), center * 2f64.powf(width / 2.0));
            shaped_noise(&mut rng, n, RATE, |f| band_window(f, lo, hi, 0.3))
        }
        3 => am_fm(&mut rng, n),
        4 => notes(&mut rng, n),
        5 => vowels(&mut rng, n),
        _ => {
            let slope: f64 = rng.random_range(-9.0..0.0);
            let e = slope / (20.0 * 2f64.log10());
            shaped_noise(&mut rng, n, RATE, |f| highpass2(f, 30.0) * (f.max(1.0) / 1000.0).powf(e))
        }
    };
    let target: f64 = 10f64.powf(rng.random_range(-30.0..-10.0) / 20.0);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let g = if rms > 0.0 { target / rms } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v * g).clamp(-1.0, 1.0));
    AudioClip::new(x.into_iter().map(|v| v as f32).collect(), CANONICAL_RATE)
        .expect("finite samples at canonical rate")
}

fn harmonic_tone(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let f0: f64 = 2f64.powf(rng.random_range(80f64.log2()..1000f64.log2()));
    let n_harm = rng.random_range(1..=12usize);
    let decay: f64 = rng.random_range(0.5..2.0);
    let vib_rate: f64 = rng.random_range(3.0..7.0);
    let vib_depth: f64 = rng.random_range(0.0..0.02);
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / RATE;
            phase += 2.0 * PI * f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin()) / RATE;
            (1..=n_harm)
                .filter(|&h| f0 * (h as f64) < RATE / 2.0)
                .map(|h| (h as f64 * phase).sin() / (h as f64).powf(decay))
                .sum()
        })
        .collect()
}

/// Exponential sweep, up or down.
fn chirp(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let a: f64 = rng.random_range(50.0..500.0);
    let b: f64 = rng.random_range(2000.0..16_000.0);
    let (f_start, f_end) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
    let dur = n as f64 / RATE;
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let f = f_start * (f_end / f_start).powf(i as f64 / RATE / dur);
            phase += 2.0 * PI * f / RATE;
            phase.sin()
        })
        .collect()
}

fn am_fm(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let carrier: f64 = rng.random_range(300.0..6000.0);
    let fm_rate: f64 = rng.random_range(0.5..40.0);
    let fm_depth: f64 = rng.random_range(0.0..0.3) * carrier;
    let am_rate: f64 = rng.random_range(2.0..20.0);
    let am_depth: f64 = rng.random_range(0.2..1.0);
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / RATE;
            phase += 2.0 * PI * (carrier + fm_depth * (2.0 * PI * fm_rate * t).sin()) / RATE;
            (1.0 - am_depth * 0.5 * (1.0 + (2.0 * PI * am_rate * t).cos())) * phase.sin()
        })
        .collect()
}

/// Plucked notes on a semitone grid with decaying envelopes.
fn notes(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let len = (rng.random_range(0.15..0.5) * RATE) as usize;
        let f0 = 110.0 * 2f64.powf(rng.random_range(0..36) as f64 / 12.0);
        let tau: f64 = rng.random_range(0.05..0.4);
        let bright: f64 = rng.random_range(0.8..2.5);
        for j in 0..len.min(n - start) {
            let t = j as f64 / RATE;
            let env = (-t / tau).exp() * (1.0 - (-t / 0.003).exp());
            let v: f64 = (1..=8)
                .filter(|&h| f0 * (h as f64) < RATE / 2.0)
                .map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / (h as f64).powf(bright))
                .sum();
            out[start + j] += env * v;
        }
        start += len;
    }
    out
}

/// Glottal pulse train through three resonators, with the vowel changing
/// every few hundred milliseconds and a syllable-rate envelope.
fn vowels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let f0: f64 = rng.random_range(90.0..250.0);
    let syllable: f64 = rng.random_range(3.0..6.0);
    let mut state = [[0.0f64; 2]; 3];
    let mut coeffs = [(0.0, 0.0); 3];
    let mut next_change = 0;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i == next_change {
            let formants = [
                rng.random_range(300.0..800.0),
                rng.random_range(900.0..2500.0),
                rng.random_range(2500.0..3500.0),
            ];
            for (c, f) in coeffs.iter_mut().zip(formants) {
                let r = (-PI * 80.0 / RATE).exp();
                *c = (2.0 * r * (2.0 * PI * f / RATE).cos(), -r * r);
            }
            next_change += (rng.random_range(0.15..0.4) * RATE) as usize;
        }
        let t = i as f64 / RATE;
        phase += f0 * (1.0 + 0.03 * (2.0 * PI * 5.0 * t).sin()) / RATE;
        let mut v = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        for (s, &(a1, a2)) in state.iter_mut().zip(&coeffs) {
            let y = v + a1 * s[0] + a2 * s[1];
            s[1] = s[0];
            s[0] = y;
            v = y;
        }
        let env = 0.5 * (1.0 - (2.0 * PI * syllable * t).cos());
        out.push(v * env);
    }
    out
}

/// Mean over 2048-sample Hann frames of the ratio of geometric to
/// arithmetic mean power. Near 0 for tonal audio, near 1 for white noise.
pub fn spectral_flatness(clip: &AudioClip) -> f64 {
    const N: usize = 2048;
    let x = clip.samples();
    if x.len() < N {
        return 0.0;
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N);
    let window: Vec<f64> = (0..N)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / N as f64).cos())
        .collect();
    let mut buf = vec![Complex::new(0.0, 0.0); N];
    let mut total = 0.0;
    let mut frames = 0;
    for start in (0..=x.len() - N).step_by(N / 2) {
        for (b, (&s, &w)) in buf.iter_mut().zip(x[start..start + N].iter().zip(&window)) {
            *b = Complex::new(s as f64 * w, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[1..N / 2].iter().map(|c| c.norm_sqr() + 1e-12).collect();
        let log_mean = power.iter().map(|p| p.ln()).sum::<f64>() / power.len() as f64;
        let mean = power.iter().sum::<f64>() / power.len() as f64;
        total += log_mean.exp() / mean;
        frames += 1;
    }
    total / frames as f64
}
