//! Polyphase windowed-sinc sample-rate conversion.
//!
//! The ratio is reduced to `up / down`. Output sample `i` sits at source
//! position `i * down / up`; its integer part picks the input window and the
//! remainder picks one of `up` precomputed kernels (phases).

use super::{AudioClip, AudioError};

pub const KAISER_BETA: f64 = 8.6;
/// Kernel length per phase, counted at the lower of the two rates.
pub const TAPS_PER_PHASE: usize = 64;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
/// Phase tables above this many phases are computed on the fly.
const MAX_CACHED_PHASES: usize = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half_sq = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= half_sq / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone)]
pub struct Resampler {
    source_rate: u32,
    target_rate: u32,
    up: u64,
    down: u64,
    half_width: i64,
    cutoff: f64,
    phases: Option<Vec<Vec<f32>>>,
}

impl Resampler {
    pub fn new(source_rate: u32, target_rate: u32) -> Result<Self, AudioError> {
        if source_rate == 0 || target_rate == 0 {
            return Err(AudioError::InvalidRate);
        }
        let g = gcd(source_rate as u64, target_rate as u64);
        let up = target_rate as u64 / g;
        let down = source_rate as u64 / g;
        // When decimating, the kernel is stretched so it still spans
        // TAPS_PER_PHASE samples of the output rate.
        let stretch = down.div_ceil(up).max(1) as usize;
        let taps = TAPS_PER_PHASE * stretch;
        let cutoff = ROLLOFF * (up as f64 / down as f64).min(1.0);
        let mut r = Self {
            source_rate,
            target_rate,
            up,
            down,
            half_width: (taps / 2) as i64,
            cutoff,
            phases: None,
        };
        if up as usize <= MAX_CACHED_PHASES {
            r.phases = Some((0..up).map(|p| r.kernel(p)).collect());
        }
        Ok(r)
    }

    pub fn source_rate(&self) -> u32 {
        self.source_rate
    }

    pub fn target_rate(&self) -> u32 {
        self.target_rate
    }

    /// Taps for source offsets `-(half_width-1) ..= half_width` around the
    /// integer part of the output position. Normalized to unit DC gain.
    fn kernel(&self, phase: u64) -> Vec<f32> {
        let frac = phase as f64 / self.up as f64;
        let hw = self.half_width as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut taps: Vec<f64> = (-(self.half_width - 1)..=self.half_width)
            .map(|k| {
                let d = k as f64 - frac;
                let x = d / hw;
                let window = if x.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * (1.0 - x * x).sqrt()) / i0_beta
                };
                self.cutoff * sinc(self.cutoff * d) * window
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        taps.into_iter().map(|t| t as f32).collect()
    }

    /// `round(len * target / source)`.
    pub fn output_len(&self, input_len: usize) -> usize {
        let num = input_len as u128 * self.up as u128;
        ((2 * num + self.down as u128) / (2 * self.down as u128)) as usize
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let mut out = Vec::with_capacity(n_out);
        let len = input.len() as i64;
        let mut scratch;
        for i in 0..n_out as u64 {
            let pos = i * self.down;
            let base = (pos / self.up) as i64;
            let phase = pos % self.up;
            let kernel: &[f32] = match &self.phases {
                Some(p) => &p[phase as usize],
                None => {
                    scratch = self.kernel(phase);
                    &scratch
                }
            };
            let first = base - (self.half_width - 1);
            let lo = first.max(0);
            let hi = (base + self.half_width).min(len - 1);
            let mut acc = 0.0f64;
            if lo <= hi {
                let k0 = (lo - first) as usize;
                let taps = &kernel[k0..k0 + (hi - lo + 1) as usize];
                let window = &input[lo as usize..=hi as usize];
                acc = taps
                    .iter()
                    .zip(window)
                    .map(|(&t, &x)| t as f64 * x as f64)
                    .sum();
            }
            out.push(acc as f32);
        }
        out
    }
}

/// Converts `clip` to `target_rate`. Returns an identical copy when the rate
/// already matches.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidRate);
    }
    if target_rate == clip.sample_rate() {
        return Ok(clip.clone());
    }
    let r = Resampler::new(clip.sample_rate(), target_rate)?;
    Ok(clip.derive(r.process(clip.samples()), target_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rms;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn sine(freq: f64, rate: u32, seconds: f64) -> AudioClip {
        let n = (rate as f64 * seconds) as usize;
        let samples = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32)
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    /// Frequency of the largest FFT bin (independent of the resampler).
    fn peak_frequency(clip: &AudioClip) -> f64 {
        let n = clip.len();
        let mut buf: Vec<Complex<f64>> = clip
            .samples()
            .iter()
            .map(|&s| Complex::new(s as f64, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (bin, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        bin as f64 * clip.sample_rate() as f64 / n as f64
    }

    #[test]
    fn same_rate_is_bit_identical() {
        let x = sine(440.0, 44_100, 0.1);
        assert_eq!(resample(&x, 44_100).unwrap(), x);
    }

    #[test]
    fn idempotent_at_fixed_rate() {
        let x = sine(440.0, 44_100, 0.1);
        let once = resample(&x, 22_050).unwrap();
        assert_eq!(resample(&once, 22_050).unwrap(), once);
    }

    #[test]
    fn length_is_rounded_ratio() {
        let x = AudioClip::silence(1001, 44_100).unwrap();
        assert_eq!(resample(&x, 22_050).unwrap().len(), 501); // 500.5 rounds up
        assert_eq!(resample(&x, 11_025).unwrap().len(), 250);
        assert_eq!(resample(&x, 48_000).unwrap().len(), 1090); // 1089.52
        let y = AudioClip::silence(110_250, 11_025).unwrap();
        assert_eq!(resample(&y, 44_100).unwrap().len(), 441_000);
    }

    #[test]
    fn sub_nyquist_sine_keeps_frequency() {
        let down = resample(&sine(1000.0, 44_100, 1.0), 22_050).unwrap();
        assert!((peak_frequency(&down) - 1000.0).abs() <= 5.0);
        let up = resample(&sine(1000.0, 11_025, 1.0), 44_100).unwrap();
        assert!((peak_frequency(&up) - 1000.0).abs() <= 5.0);
    }

    #[test]
    fn supra_nyquist_sine_is_removed() {
        let x = sine(9000.0, 44_100, 1.0);
        let y = resample(&x, 11_025).unwrap();
        assert!(rms(y.samples()) < 0.05 * rms(x.samples()));
    }

    #[test]
    fn passband_gain_is_unity() {
        let x = sine(2000.0, 44_100, 1.0);
        let y = resample(&resample(&x, 11_025).unwrap(), 44_100).unwrap();
        let mid = 4000..40_000;
        let ratio = rms(&y.samples()[mid.clone()]) / rms(&x.samples()[mid]);
        assert!((ratio - 1.0).abs() < 1e-3, "ratio {ratio}");
    }

    #[test]
    fn odd_ratios_work() {
        let x = sine(1000.0, 44_100, 0.5);
        let y = resample(&x, 48_000).unwrap();
        assert_eq!(y.sample_rate(), 48_000);
        assert!((peak_frequency(&y) - 1000.0).abs() <= 5.0);
    }

    #[test]
    fn zero_rate_rejected() {
        let x = sine(1000.0, 44_100, 0.01);
        assert!(matches!(resample(&x, 0), Err(AudioError::InvalidRate)));
    }
}
