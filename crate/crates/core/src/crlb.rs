//! Monostatic radar link budget, delay/Doppler Cramér-Rao bounds and the
//! raw I/Q data-rate overhead of exporting a sensing allocation.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{OfdmConfig, RadarTarget, WaveformError};
use crate::{BOLTZMANN, SPEED_OF_LIGHT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrlbError {
    #[error("target range must be positive for the radar equation")]
    ZeroRange,
    #[error("bound undefined for {n} subcarriers x {m} symbols (need at least 2 each)")]
    TooFewSamples { n: usize, m: usize },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("sweep point {index}: {source}")]
    SweepPoint {
        index: usize,
        #[source]
        source: Box<CrlbError>,
    },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> CrlbError {
    CrlbError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Transmit power plus a single calibration constant folding antenna gains
/// and receiver noise figure, κ = G_tx G_rx / NF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub combined_gain: f64,
    pub noise_temp_k: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: 43.0,
            combined_gain: 1.0,
            noise_temp_k: 290.0,
        }
    }
}

impl LinkBudget {
    pub fn tx_power_w(&self) -> f64 {
        10f64.powf((self.tx_power_dbm - 30.0) / 10.0)
    }

    pub fn with_gain(self, combined_gain: f64) -> Self {
        Self {
            combined_gain,
            ..self
        }
    }

    fn validate(&self) -> Result<(), CrlbError> {
        if !self.tx_power_dbm.is_finite() {
            return Err(invalid("tx_power_dbm", "must be finite"));
        }
        if !(self.combined_gain.is_finite() && self.combined_gain > 0.0) {
            return Err(invalid("combined_gain", "must be positive"));
        }
        if !(self.noise_temp_k.is_finite() && self.noise_temp_k > 0.0) {
            return Err(invalid("noise_temp_k", "must be positive"));
        }
        Ok(())
    }
}

/// Per-resource-element SNR of the target echo with transmit power split
/// evenly over the N subcarriers:
/// (P_tx/N) κ λ² σ / ((4π)³ R⁴ k T Δf).
pub fn snr_per_re(budget: &LinkBudget, config: &OfdmConfig, target: &RadarTarget) -> Result<f64, CrlbError> {
    budget.validate()?;
    config.validate()?;
    if target.range_m <= 0.0 {
        return Err(CrlbError::ZeroRange);
    }
    let n = config.n_subcarriers() as f64;
    let lambda = config.wavelength_m();
    let received = (budget.tx_power_w() / n) * budget.combined_gain * lambda * lambda * target.rcs_linear()
        / ((4.0 * PI).powi(3) * target.range_m.powi(4));
    let noise = BOLTZMANN * budget.noise_temp_k * config.subcarrier_spacing_hz;
    Ok(received / noise)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbBound {
    pub rmse_range_m: f64,
    pub rmse_velocity_mps: f64,
}

/// Single-tone 2-D frequency estimation bound mapped to range and velocity.
///
/// var(τ)   = 6 / ((2πΔf)² · SNR · M · N(N²−1))
/// var(f_D) = 6 / ((2πT_sym)² · SNR · N · M(M²−1))
pub fn crlb_range_velocity(config: &OfdmConfig, snr_per_re: f64) -> Result<CrlbBound, CrlbError> {
    let (n, m) = (config.n_subcarriers(), config.n_symbols());
    if n < 2 || m < 2 {
        return Err(CrlbError::TooFewSamples { n, m });
    }
    if !(snr_per_re.is_finite() && snr_per_re > 0.0) {
        return Err(invalid("snr_per_re", "must be positive"));
    }
    let (nf, mf) = (n as f64, m as f64);
    let two_pi_df = 2.0 * PI * config.subcarrier_spacing_hz;
    let two_pi_t = 2.0 * PI * config.symbol_duration_s();
    let var_tau = 6.0 / (two_pi_df * two_pi_df * snr_per_re * mf * nf * (nf * nf - 1.0));
    let var_fd = 6.0 / (two_pi_t * two_pi_t * snr_per_re * nf * mf * (mf * mf - 1.0));
    Ok(CrlbBound {
        rmse_range_m: SPEED_OF_LIGHT / 2.0 * var_tau.sqrt(),
        rmse_velocity_mps: config.wavelength_m() / 2.0 * var_fd.sqrt(),
    })
}

/// O = M · N · b · 8 / T_slot, in Mbps (payload I/Q bits only).
pub fn sensing_overhead_mbps(config: &OfdmConfig, bytes_per_sample: u32) -> Result<f64, CrlbError> {
    if bytes_per_sample == 0 {
        return Err(invalid("bytes_per_sample", "must be at least 1"));
    }
    let bits = config.n_symbols() as u64 * config.n_subcarriers() as u64 * bytes_per_sample as u64 * 8;
    Ok(bits as f64 / config.slot_duration_s / 1e6)
}

/// κ that makes the range bound at `config` equal `anchor_rmse_range_m`.
/// The `combined_gain` in `budget` is ignored.
pub fn calibrate_gain(
    budget: &LinkBudget,
    config: &OfdmConfig,
    target: &RadarTarget,
    anchor_rmse_range_m: f64,
) -> Result<f64, CrlbError> {
    if !(anchor_rmse_range_m.is_finite() && anchor_rmse_range_m > 0.0) {
        return Err(invalid("anchor_rmse_range_m", "must be positive"));
    }
    let unit = budget.with_gain(1.0);
    let snr_unit = snr_per_re(&unit, config, target)?;
    // Range RMSE scales as SNR^(-1/2), so the required SNR is closed-form.
    let at_unit = crlb_range_velocity(config, snr_unit)?.rmse_range_m;
    let ratio = at_unit / anchor_rmse_range_m;
    Ok(ratio * ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbPoint {
    pub overhead_mbps: f64,
    pub rmse_range_m: f64,
    pub rmse_velocity_mps: f64,
    pub snr_per_re_db: f64,
    pub n_subcarriers: usize,
    pub m_symbols: usize,
}

/// Joint bandwidth/slot sweep: both move together along a shared index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub bandwidth_hz: [f64; 2],
    pub slot_s: [f64; 2],
    pub steps: usize,
    pub bytes_per_sample: u32,
}

impl Default for SweepSpec {
    /// 10-100 MHz with 0.25-1.0 ms; 22 steps advance the symbol count by
    /// exactly one per step (M = 7..=28).
    fn default() -> Self {
        Self {
            bandwidth_hz: [10e6, 100e6],
            slot_s: [0.25e-3, 1.0e-3],
            steps: 22,
            bytes_per_sample: 4,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CrlbError> {
        if self.steps == 0 {
            return Err(invalid("sweep.steps", "must be at least 1"));
        }
        for (field, [lo, hi]) in [("sweep.bandwidth_hz", self.bandwidth_hz), ("sweep.slot_s", self.slot_s)] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0) {
                return Err(invalid(field, "bounds must be positive and finite"));
            }
            if self.steps >= 2 && lo >= hi {
                return Err(invalid(field, "low must be below high"));
            }
        }
        if self.bytes_per_sample == 0 {
            return Err(invalid("sweep.bytes_per_sample", "must be at least 1"));
        }
        Ok(())
    }

    /// (bandwidth, slot) at sweep index `i`.
    pub fn point(&self, i: usize) -> (f64, f64) {
        let frac = if self.steps <= 1 {
            0.0
        } else {
            i as f64 / (self.steps - 1) as f64
        };
        let lerp = |[lo, hi]: [f64; 2]| if i + 1 == self.steps && self.steps > 1 { hi } else { lo + (hi - lo) * frac };
        (lerp(self.bandwidth_hz), lerp(self.slot_s))
    }
}

pub fn run_sweep(
    spec: &SweepSpec,
    budget: &LinkBudget,
    base_config: &OfdmConfig,
    target: &RadarTarget,
) -> Result<Vec<CrlbPoint>, CrlbError> {
    spec.validate()?;
    let mut points = (0..spec.steps)
        .map(|i| {
            sweep_point(spec, i, budget, base_config, target).map_err(|e| CrlbError::SweepPoint {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    points.sort_by(|a, b| a.overhead_mbps.total_cmp(&b.overhead_mbps));
    Ok(points)
}

fn sweep_point(
    spec: &SweepSpec,
    i: usize,
    budget: &LinkBudget,
    base: &OfdmConfig,
    target: &RadarTarget,
) -> Result<CrlbPoint, CrlbError> {
    let (bandwidth_hz, slot_duration_s) = spec.point(i);
    let config = OfdmConfig::new(
        base.carrier_freq_hz,
        base.subcarrier_spacing_hz,
        base.cp_overhead,
        bandwidth_hz,
        slot_duration_s,
    )?;
    let snr = snr_per_re(budget, &config, target)?;
    let bound = crlb_range_velocity(&config, snr)?;
    Ok(CrlbPoint {
        overhead_mbps: sensing_overhead_mbps(&config, spec.bytes_per_sample)?,
        rmse_range_m: bound.rmse_range_m,
        rmse_velocity_mps: bound.rmse_velocity_mps,
        snr_per_re_db: 10.0 * snr.log10(),
        n_subcarriers: config.n_subcarriers(),
        m_symbols: config.n_symbols(),
    })
}

pub const SWEEP_CSV_HEADER: [&str; 3] = ["overhead_mbps", "rmse_range_m", "rmse_vel_ms"];

/// Fig.-style CSV: `overhead_mbps,rmse_range_m,rmse_vel_ms`.
pub fn write_sweep_csv<W: Write>(points: &[CrlbPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_CSV_HEADER)?;
    for p in points {
        w.write_record([
            p.overhead_mbps.to_string(),
            p.rmse_range_m.to_string(),
            p.rmse_velocity_mps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
