use serde::{Deserialize, Serialize};

use super::{invalid, EstimatorError};
use crate::waveform::ResourceGrid;

/// Per-band energy detector over contiguous subcarrier groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyDetector {
    pub bands: usize,
    /// Decision threshold above the noise floor.
    pub threshold_db: f64,
    /// Noise power per resource element in grid units.
    pub noise_power: f64,
}

impl EnergyDetector {
    pub fn validate(&self, subcarriers: usize) -> Result<(), EstimatorError> {
        if self.bands == 0 || self.bands > subcarriers {
            return Err(invalid("bands", format!("{} not in [1, {subcarriers}]", self.bands)));
        }
        if !self.threshold_db.is_finite() {
            return Err(invalid("threshold_db", "must be finite"));
        }
        if !(self.noise_power.is_finite() && self.noise_power > 0.0) {
            return Err(invalid("noise_power", "must be positive"));
        }
        Ok(())
    }

    /// Subcarrier range of band `b`; the first `N mod bands` bands get one extra subcarrier.
    pub fn band_range(&self, subcarriers: usize, b: usize) -> std::ops::Range<usize> {
        let base = subcarriers / self.bands;
        let extra = subcarriers % self.bands;
        let start = b * base + b.min(extra);
        start..start + base + usize::from(b < extra)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDecision {
    /// Mean |x|² per band.
    pub energies: Vec<f64>,
    pub occupied: Vec<bool>,
}

pub fn band_energy_detect(grid: &ResourceGrid, detector: &EnergyDetector) -> Result<BandDecision, EstimatorError> {
    let (n, m) = grid.shape();
    detector.validate(n)?;
    let level = detector.noise_power * 10f64.powf(detector.threshold_db / 10.0);
    let energies: Vec<f64> = (0..detector.bands)
        .map(|b| {
            let r = detector.band_range(n, b);
            let count = (r.len() * m) as f64;
            grid.samples[r.start * m..r.end * m].iter().map(|s| s.norm_sqr()).sum::<f64>() / count
        })
        .collect();
    let occupied = energies.iter().map(|&e| e > level).collect();
    Ok(BandDecision { energies, occupied })
}
