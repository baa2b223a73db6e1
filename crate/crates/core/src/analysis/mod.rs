//! Signal analysis of `v(t)` and wave-propagation metrics.

mod filter;
mod radiality;
mod spectrum;

use thiserror::Error;

pub use filter::{lowpass, lowpass_taps, FIR_TAPS};
pub use radiality::{activation_latencies, latencies_within, pearson, radiality_score, RadialityReport};
pub use spectrum::{analyze_spectrum, dominant_frequency, periodogram, Spectrum, SpectrumReport, MIN_PERIODOGRAM_LEN};

/// LFP-style low-pass cutoff.
pub const DEFAULT_CUTOFF_HZ: f64 = 300.0;
/// Band searched for the dominant oscillation.
pub const DEFAULT_BAND_HZ: (f64, f64) = (10.0, 120.0);
/// Activation threshold above rest.
pub const DEFAULT_ACTIVATION_MV: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz")]
    NyquistViolation { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("signal has {len} samples, at least {min} are needed")]
    SignalTooShort { len: usize, min: usize },
    #[error("no spectral bin inside [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },
    #[error("{0} active neurons, at least 3 are needed")]
    TooFewActive(usize),
    #[error("{0}")]
    InvalidInput(String),
}
