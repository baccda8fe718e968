use super::{AudioClip, AudioError};

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Mean squared error after canonicalizing both clips to 44.1 kHz and
/// truncating to the shorter one.
pub fn mse(reference: &AudioClip, candidate: &AudioClip) -> Result<f64, AudioError> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(AudioError::Empty);
    }
    let a = reference.canonical();
    let b = candidate.canonical();
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(AudioError::Empty);
    }
    let sum: f64 = a.samples()[..n]
        .iter()
        .zip(&b.samples()[..n])
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / n as f64)
}

/// Signal-to-noise ratio of `candidate` against `reference` in dB, on the
/// canonical grid. Infinite when they match exactly.
pub fn snr_db(reference: &AudioClip, candidate: &AudioClip) -> Result<f64, AudioError> {
    let a = reference.canonical();
    let n = a.len().min(candidate.canonical().len());
    let signal = a.samples()[..n].iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / n as f64;
    let noise = mse(reference, candidate)?;
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_zero() {
        let x = AudioClip::new((0..500).map(|i| (i as f32 * 0.1).sin()).collect(), 44_100).unwrap();
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let a = AudioClip::new(vec![0.0; 100], 44_100).unwrap();
        let b = AudioClip::new(vec![0.5; 100], 44_100).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert_eq!(mse(&b, &a).unwrap(), 0.25);
    }

    #[test]
    fn truncates_to_shorter() {
        let a = AudioClip::new(vec![0.0; 100], 44_100).unwrap();
        let b = AudioClip::new(vec![0.5; 50], 44_100).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
    }

    #[test]
    fn empty_is_rejected() {
        let a = AudioClip::new(vec![], 44_100).unwrap();
        let b = AudioClip::new(vec![0.5; 50], 44_100).unwrap();
        assert!(mse(&a, &b).is_err());
    }

    #[test]
    fn low_rate_candidate_is_canonicalized() {
        let a = AudioClip::new(vec![0.0; 400], 44_100).unwrap();
        let b = AudioClip::new(vec![0.0; 100], 11_025).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 0.0);
    }
}
