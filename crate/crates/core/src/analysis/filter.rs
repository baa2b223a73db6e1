use super::AnalysisError;

pub const FIR_TAPS: usize = 255;

/// Hamming-windowed sinc low-pass taps, normalized to unit DC gain.
pub fn lowpass_taps(taps: usize, cutoff_hz: f64, sample_rate: f64) -> Vec<f64> {
    let fc = cutoff_hz / sample_rate;
    let mid = (taps - 1) as f64 / 2.0;
    let denom = (taps - 1).max(1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
            };
            let window = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Causal FIR pass that treats every sample before the start as equal to the
/// first one, so a constant input produces a constant output from sample 0.
fn fir_steady(h: &[f64], x: &[f64]) -> Vec<f64> {
    let first = x[0];
    (0..x.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .map(|(k, hk)| hk * if k <= n { x[n - k] } else { first })
                .sum()
        })
        .collect()
}

/// Zero-phase low-pass: the FIR is applied forward and backward over the
/// signal extended at both ends by odd reflection (up to three filter
/// lengths, capped at `len - 1`).
pub fn lowpass(signal: &[f64], sample_rate: f64, cutoff_hz: f64) -> Result<Vec<f64>, AnalysisError> {
    let nyquist = sample_rate / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(AnalysisError::NyquistViolation {
            cutoff_hz,
            nyquist_hz: nyquist,
        });
    }
    let n = signal.len();
    if n < FIR_TAPS {
        return Err(AnalysisError::SignalTooShort { len: n, min: FIR_TAPS });
    }
    let h = lowpass_taps(FIR_TAPS, cutoff_hz, sample_rate);
    let pad = (3 * FIR_TAPS).min(n - 1);
    let (a, b) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * a - signal[k]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|k| 2.0 * b - signal[n - 1 - k]));

    let mut y = fir_steady(&h, &ext);
    y.reverse();
    let mut y = fir_steady(&h, &y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_symmetric_with_unit_sum() {
        let h = lowpass_taps(FIR_TAPS, 300.0, 2000.0);
        assert_eq!(h.len(), 255);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..h.len() {
            assert!((h[k] - h[h.len() - 1 - k]).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_passes_unchanged() {
        let x = vec![3.25; 600];
        let y = lowpass(&x, 2000.0, 300.0).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-9));
    }

    #[test]
    fn cutoff_at_or_above_nyquist_is_rejected() {
        let x = vec![0.0; 600];
        assert!(matches!(
            lowpass(&x, 500.0, 300.0),
            Err(AnalysisError::NyquistViolation { .. })
        ));
        assert!(matches!(
            lowpass(&x[..100], 2000.0, 300.0),
            Err(AnalysisError::SignalTooShort { .. })
        ));
    }
}
