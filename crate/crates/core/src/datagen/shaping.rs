use std::cell::RefCell;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Gaussian noise of length `n` whose amplitude spectrum follows `gain(hz)`,
/// normalized to unit RMS. Returns silence if `gain` is zero everywhere.
pub(crate) fn shaped_noise<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    rate: f64,
    gain: impl Fn(f64) -> f64,
) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..=half {
        let g = gain(k as f64 * rate / n as f64);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if k == half && n % 2 == 0 {
            spec[k] = Complex::new(re * g, 0.0);
        } else {
            spec[k] = Complex::new(re * g, im * g);
            spec[n - k] = spec[k].conj();
        }
    }
    let ifft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    ifft.process(&mut spec);
    let mut out: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Second-order high-pass magnitude.
pub(crate) fn highpass2(f: f64, corner: f64) -> f64 {
    let r = (f / corner).powi(2);
    r / (1.0 + r * r).sqrt()
}

/// Second-order low-pass magnitude: flat below `corner`, -12 dB/octave above.
pub(crate) fn lowpass2(f: f64, corner: f64) -> f64 {
    1.0 / (1.0 + (f / corner).powi(4)).sqrt()
}

/// 1 inside `[lo, hi]`, raised-cosine skirts `skirt_oct` octaves wide outside.
pub(crate) fn band_window(f: f64, lo: f64, hi: f64, skirt_oct: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    let d = if f < lo {
        (lo / f).log2()
    } else if f > hi {
        (f / hi).log2()
    } else {
        return 1.0;
    };
    if d >= skirt_oct {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * d / skirt_oct).cos())
    }
}

/// Amplitude factor for a `db_per_octave` slope that starts at `knee` Hz.
pub(crate) fn tilt(f: f64, knee: f64, db_per_octave: f64) -> f64 {
    if db_per_octave == 0.0 || f <= knee {
        return 1.0;
    }
    // Smooth knee, continuous at `knee`; the full slope is reached about an
    // octave above it.
    let e = db_per_octave / (20.0 * 4f64.log10());
    ((1.0 + (f / knee).powi(2)) / 2.0).powf(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_rms_and_band_limited() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 8192;
        let x = shaped_noise(&mut rng, n, 44_100.0, |f| band_window(f, 1000.0, 2000.0, 0.0));
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-9);
        // Direct DFT at an out-of-band bin is zero up to rounding.
        let k = 2000;
        let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, v)| {
            let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
            (re + v * a.cos(), im + v * a.sin())
        });
        assert!((re * re + im * im).sqrt() < 1e-6);
    }

    #[test]
    fn filter_shapes() {
        assert!((lowpass2(1000.0, 1000.0) - 0.5f64.sqrt()).abs() < 1e-12);
        // -12 dB/octave well above the corner.
        let ratio = lowpass2(16_000.0, 1000.0) / lowpass2(8_000.0, 1000.0);
        assert!((20.0 * ratio.log10() + 12.04).abs() < 0.05);
        assert!(highpass2(10.0, 60.0) < 0.03);
        assert_eq!(band_window(3000.0, 2000.0, 8000.0, 0.5), 1.0);
        assert_eq!(band_window(1000.0, 2000.0, 8000.0, 0.5), 0.0);
        let t = tilt(32_000.0, 1000.0, -12.0) / tilt(16_000.0, 1000.0, -12.0);
        assert!((20.0 * t.log10() + 12.0).abs() < 0.1, "{}", 20.0 * t.log10());
        assert_eq!(tilt(500.0, 1000.0, -12.0), 1.0);
    }
}
