//! Sensing algorithms hosted by dApps.
//!
//! - [`periodogram`]: 2-D delay-Doppler periodogram for monostatic echoes.
//! - [`peak`]: per-snapshot CIR peak detection, the scalar-report baseline.
//! - [`music`]: joint multi-snapshot subspace ranging with forward-backward
//!   spatial smoothing.
//! - [`spectrum`]: per-band energy detection for spectrum sensing.
//! - [`cdf`]: empirical error distributions for comparing the above.

pub mod cdf;
pub mod music;
pub mod peak;
pub mod periodogram;
pub mod spectrum;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cdf::{error_cdf, CdfTable, ErrorCdf};
pub use music::{music_pseudospectrum, music_range, smoothed_covariance, MusicSpec, Pseudospectrum};
pub use peak::{peak_detect_per_snapshot, peak_detect_range};
pub use periodogram::periodogram_delay_doppler;
pub use spectrum::{band_energy_detect, BandDecision, EnergyDetector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("model order {model_order} must be below the subarray length {subarray_len}")]
    ModelOrderTooLarge { model_order: usize, subarray_len: usize },
    #[error("no pseudospectrum peak above the detection threshold")]
    NoPeak,
    #[error("need at least {need} snapshots, got {got}")]
    TooFewSnapshots { need: usize, got: usize },
    #[error("snapshots disagree on {0}")]
    InconsistentSnapshots(&'static str),
    #[error("invalid estimator parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> EstimatorError {
    EstimatorError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Monostatic delay-Doppler estimate. range = cτ/2, velocity = f_D c/(2 f_c).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayDopplerEstimate {
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub peak_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMethod {
    Peak,
    Subspace,
}

/// One-way ranging estimate, range = cτ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    pub delay_s: f64,
    pub range_m: f64,
    pub method: RangeMethod,
    pub snapshots_used: usize,
}

impl RangeEstimate {
    pub fn from_delay(delay_s: f64, method: RangeMethod, snapshots_used: usize) -> Self {
        Self {
            delay_s,
            range_m: delay_s * crate::SPEED_OF_LIGHT,
            method,
            snapshots_used,
        }
    }
}

/// Vertex offset of the parabola through three equally spaced samples,
/// clamped to half a bin. Zero when the middle sample is not a maximum.
pub(crate) fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let den = left - 2.0 * center + right;
    if !(den < 0.0) {
        return 0.0;
    }
    (0.5 * (left - right) / den).clamp(-0.5, 0.5)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn check_snapshots(
    snapshots: &[crate::waveform::CirSnapshot],
    need: usize,
) -> Result<(usize, f64), EstimatorError> {
    if snapshots.len() < need {
        return Err(EstimatorError::TooFewSnapshots {
            need,
            got: snapshots.len(),
        });
    }
    let k = snapshots[0].len();
    let df = snapshots[0].subcarrier_spacing_hz;
    if snapshots.iter().any(|s| s.len() != k) {
        return Err(EstimatorError::InconsistentSnapshots("subcarrier count"));
    }
    if snapshots.iter().any(|s| s.subcarrier_spacing_hz != df) {
        return Err(EstimatorError::InconsistentSnapshots("subcarrier spacing"));
    }
    Ok((k, df))
}
