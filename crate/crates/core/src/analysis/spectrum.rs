use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{lowpass, AnalysisError};

pub const MIN_PERIODOGRAM_LEN: usize = 64;

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub sample_rate: f64,
    pub filtered: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub dominant_hz: f64,
    pub band: (f64, f64),
}

/// Welch estimate: periodic Hann window, 50% overlap, segments of the largest
/// power of two not exceeding `len / 4`, mean removed per segment.
pub fn periodogram(signal: &[f64], sample_rate: f64) -> Result<Spectrum, AnalysisError> {
    let n = signal.len();
    if n < MIN_PERIODOGRAM_LEN {
        return Err(AnalysisError::SignalTooShort {
            len: n,
            min: MIN_PERIODOGRAM_LEN,
        });
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(AnalysisError::InvalidInput(format!("sample rate {sample_rate} Hz")));
    }
    let seg = 1usize << (n / 4).ilog2();
    let step = seg / 2;
    let window: Vec<f64> = (0..seg)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / seg as f64).cos())
        .collect();
    let scale = 1.0 / (sample_rate * window.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let bins = seg / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    let mut segments = 0usize;
    let mut start = 0;
    while start + seg <= n {
        let chunk = &signal[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for (b, (x, w)) in buf.iter_mut().zip(chunk.iter().zip(&window)) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    for (k, p) in power.iter_mut().enumerate() {
        *p *= scale / segments as f64;
        // Fold negative frequencies; DC and Nyquist have no mirror.
        if k != 0 && k != seg / 2 {
            *p *= 2.0;
        }
    }
    let frequencies = (0..bins).map(|k| k as f64 * sample_rate / seg as f64).collect();
    Ok(Spectrum { frequencies, power })
}

/// Frequency of maximum power inside `band`; the lowest frequency wins ties.
pub fn dominant_frequency(spectrum: &Spectrum, band: (f64, f64)) -> Result<f64, AnalysisError> {
    let (lo, hi) = band;
    let mut best: Option<(f64, f64)> = None;
    for (&f, &p) in spectrum.frequencies.iter().zip(&spectrum.power) {
        if f < lo || f > hi {
            continue;
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((f, p));
        }
    }
    best.map(|(f, _)| f).ok_or(AnalysisError::EmptyBand { lo, hi })
}

/// Low-pass, periodogram and dominant-frequency search in one go.
pub fn analyze_spectrum(
    signal: &[f64],
    sample_rate: f64,
    cutoff_hz: f64,
    band: (f64, f64),
) -> Result<SpectrumReport, AnalysisError> {
    let filtered = lowpass(signal, sample_rate, cutoff_hz)?;
    let spectrum = periodogram(&filtered, sample_rate)?;
    let dominant_hz = dominant_frequency(&spectrum, band)?;
    Ok(SpectrumReport {
        sample_rate,
        filtered,
        frequencies: spectrum.frequencies,
        power: spectrum.power,
        dominant_hz,
        band,
    })
}
