use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use uuid::Builder;

use super::shaping::{band_window, highpass2, lowpass2, shaped_noise, tilt};
use super::{LabeledEvent, Modulation, SiteProfile, WeatherProfile};
use crate::audio::{AudioClip, CANONICAL_RATE};

pub const EVENT_SECONDS: usize = 10;

const RATE: f64 = CANONICAL_RATE as f64;
/// Dry-road tread hiss in 2-8 kHz relative to the tire body, dB.
const BASE_HISS_DB: f64 = -20.0;
/// Pass-by envelope never drops below this fraction of its peak.
const ENVELOPE_FLOOR: f64 = 0.4;
const SPLASH_RATE_PER_SECOND: f64 = 0.5;

/// Raised-cosine rise to `peak` seconds and fall to the end of the event.
fn passby_envelope(t: f64, peak: f64) -> f64 {
    let end = EVENT_SECONDS as f64;
    let shape = if t <= peak {
        0.5 * (1.0 - (std::f64::consts::PI * t / peak).cos())
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (t - peak) / (end - peak)).cos())
    };
    ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * shape
}

pub fn synth_event(site: &SiteProfile, weather: &WeatherProfile, seed: u64) -> LabeledEvent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = EVENT_SECONDS * CANONICAL_RATE as usize;
    let uuid = Builder::from_random_bytes(rng.random()).into_uuid();

    // Per-vehicle variation.
    let corner: f64 = rng.random_range(900.0..1150.0);
    let hiss_db = BASE_HISS_DB + rng.random_range(-1.0..1.0) + weather.hiss_boost_2to8khz_db;
    let hiss = 10f64.powf(hiss_db / 20.0);
    let level = 0.08 * 10f64.powf(rng.random_range(-1.0..1.0) / 20.0);
    let peak = EVENT_SECONDS as f64 / 2.0 + rng.random_range(-1.0..=1.0);
    let slope = weather.spectral_tilt_db_per_octave;

    let tire = shaped_noise(&mut rng, n, RATE, |f| {
        // Air absorption takes the body tail under the ambient floor up high.
        let body = highpass2(f, 60.0) * lowpass2(f, corner) * lowpass2(f, 5000.0);
        let h = hiss * band_window(f, 2000.0, 8000.0, 0.5);
        (body * body + h * h).sqrt() * tilt(f, 1000.0, slope)
    });
    let mut x: Vec<f64> = tire
        .iter()
        .enumerate()
        .map(|(i, v)| v * level * passby_envelope(i as f64 / RATE, peak))
        .collect();

    if weather.modulation == Modulation::SplashBursts {
        add_splashes(&mut rng, &mut x, level, peak);
    }

    let mut y = x.clone();
    for tap in &site.reflection_taps {
        let d = (tap.delay_ms * RATE / 1000.0).round() as usize;
        for i in d..n {
            y[i] += tap.gain * x[i - d];
        }
    }

    let ambient = shaped_noise(&mut rng, n, RATE, |f| highpass2(f, 20.0) / f.max(1.0).sqrt());
    let samples = y
        .iter()
        .zip(&ambient)
        .map(|(v, a)| (v + site.ambient_level * a).clamp(-1.0, 1.0) as f32)
        .collect();
    LabeledEvent {
        uuid,
        clip: AudioClip::new(samples, CANONICAL_RATE).expect("finite samples at canonical rate"),
        post: site.post,
        condition: weather.condition,
    }
}

/// Short high-passed noise bursts arriving as a Poisson process.
fn add_splashes(rng: &mut ChaCha8Rng, x: &mut [f64], level: f64, peak: f64) {
    let gaps = Exp::new(SPLASH_RATE_PER_SECOND).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        let dur: f64 = rng.random_range(0.05..0.15);
        if t >= EVENT_SECONDS as f64 {
            break;
        }
        let start = (t * RATE) as usize;
        let len = ((dur * RATE) as usize).min(x.len() - start);
        let amp = 1.5 * level * passby_envelope(t, peak);
        let mut prev = 0.0;
        for j in 0..len {
            let w: f64 = rng.random_range(-1.0..1.0);
            // First difference of uniform noise, scaled to unit variance.
            let hp = (w - prev) * 1.5f64.sqrt();
            prev = w;
            let win = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / len as f64).cos());
            x[start + j] += amp * win * hp;
        }
    }
}
