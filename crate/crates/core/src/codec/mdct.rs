//! Orthonormal MDCT with a sine window (modulated lapped transform).
//!
//! With hop `M` and window length `2M`, overlap-adding the inverse transform
//! of consecutive frames reconstructs the input exactly.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

pub struct Mdct {
    m: usize,
    window: Vec<f64>,
    scale: f64,
    n0: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Mdct {
    /// `m` coefficients per frame, `2m` samples per window.
    pub fn new(m: usize) -> Self {
        let n = 2 * m;
        let window = (0..n)
            .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin())
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            m,
            window,
            scale: (2.0 / m as f64).sqrt(),
            n0: 0.5 + m as f64 / 2.0,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn coefficients(&self) -> usize {
        self.m
    }

    /// `frame.len() == 2m`; writes `m` coefficients into `out`.
    pub fn forward(&self, frame: &[f32], out: &mut [f32]) {
        let n = 2 * self.m;
        debug_assert_eq!(frame.len(), n);
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .enumerate()
            .map(|(i, (&x, &w))| {
                let phi = -std::f64::consts::PI * i as f64 / n as f64;
                Complex::from_polar(x as f64 * w, phi)
            })
            .collect();
        self.fwd.process(&mut buf);
        for (k, o) in out.iter_mut().enumerate().take(self.m) {
            let phi = -std::f64::consts::PI * self.n0 * (k as f64 + 0.5) / self.m as f64;
            *o = (self.scale * (Complex::from_polar(1.0, phi) * buf[k]).re) as f32;
        }
    }

    /// Windowed inverse: `2m` samples to overlap-add into `out`.
    pub fn inverse_add(&self, coeffs: &[f32], out: &mut [f64]) {
        let n = 2 * self.m;
        debug_assert_eq!(coeffs.len(), self.m);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (k, &c) in coeffs.iter().enumerate() {
            let phi = std::f64::consts::PI * self.n0 * k as f64 / self.m as f64;
            buf[k] = Complex::from_polar(c as f64, phi);
        }
        self.inv.process(&mut buf);
        for (i, (o, b)) in out.iter_mut().zip(&buf).enumerate() {
            let phi = std::f64::consts::PI * (i as f64 + self.n0) / n as f64;
            *o += self.scale * self.window[i] * (Complex::from_polar(1.0, phi) * b).re;
        }
    }
}

/// Number of frames needed to cover `n_samples` with hop `m`
/// (one leading half-frame of padding).
pub fn frame_count(n_samples: usize, m: usize) -> usize {
    n_samples.div_ceil(m) + 1
}

/// MDCT of the whole signal, `frame_count` rows of `m` coefficients.
pub fn analyze(mdct: &Mdct, samples: &[f32]) -> Vec<f32> {
    let m = mdct.coefficients();
    let frames = frame_count(samples.len(), m);
    let mut padded = vec![0.0f32; (frames + 1) * m];
    padded[m..m + samples.len()].copy_from_slice(samples);
    let mut out = vec![0.0f32; frames * m];
    for (f, row) in out.chunks_exact_mut(m).enumerate() {
        mdct.forward(&padded[f * m..f * m + 2 * m], row);
    }
    out
}

/// Overlap-add synthesis, trimmed back to `n_samples`.
pub fn synthesize(mdct: &Mdct, coeffs: &[f32], n_samples: usize) -> Vec<f64> {
    let m = mdct.coefficients();
    let frames = coeffs.len() / m;
    let mut out = vec![0.0f64; (frames + 1) * m];
    for (f, row) in coeffs.chunks_exact(m).enumerate() {
        mdct.inverse_add(row, &mut out[f * m..f * m + 2 * m]);
    }
    let end = (m + n_samples).min(out.len());
    out.truncate(end);
    out.drain(..m.min(out.len()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(N*M) evaluation of the same transform.
    fn mdct_direct(frame: &[f32], m: usize) -> Vec<f64> {
        let n = 2 * m;
        (0..m)
            .map(|k| {
                (0..n)
                    .map(|i| {
                        let w = (std::f64::consts::PI * (i as f64 + 0.5) / n as f64).sin();
                        let c = (std::f64::consts::PI / m as f64
                            * (i as f64 + 0.5 + m as f64 / 2.0)
                            * (k as f64 + 0.5))
                            .cos();
                        w * frame[i] as f64 * c
                    })
                    .sum::<f64>()
                    * (2.0 / m as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn fast_matches_direct() {
        let m = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame: Vec<f32> = (0..2 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mdct = Mdct::new(m);
        let mut fast = vec![0.0f32; m];
        mdct.forward(&frame, &mut fast);
        for (a, b) in fast.iter().zip(mdct_direct(&frame, m)) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn perfect_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f32> = (0..10_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mdct = Mdct::new(1024);
        let coeffs = analyze(&mdct, &x);
        assert_eq!(coeffs.len(), frame_count(x.len(), 1024) * 1024);
        let y = synthesize(&mdct, &coeffs, x.len());
        assert_eq!(y.len(), x.len());
        let err: f64 = x.iter().zip(&y).map(|(&a, &b)| (a as f64 - b).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(err.sqrt() < 1e-6, "rms error {}", err.sqrt());
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_count(44_100, 1024), 45);
        assert_eq!(frame_count(1024, 1024), 2);
        assert_eq!(frame_count(1, 1024), 2);
    }
}
