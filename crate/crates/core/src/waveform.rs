//! Physical-layer ground truth: OFDM echo grids for a monostatic radar target
//! and SRS-style multipath channel snapshots in the frequency domain.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveformError {
    #[error("{field} yields {value} which is below the minimum of {min}")]
    TooSmall {
        field: &'static str,
        value: usize,
        min: usize,
    },
    #[error("invalid parameter {field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("delay {delay_s:e} s aliases: unambiguous window is {window_s:e} s")]
    DelayAliasing { delay_s: f64, window_s: f64 },
    #[error("multipath profile has no paths")]
    EmptyProfile,
    #[error("path delays must be strictly increasing (path {index})")]
    UnorderedDelays { index: usize },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> WaveformError {
    WaveformError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Floor that tolerates ratios landing a few ulps below an integer.
pub(crate) fn robust_floor(x: f64) -> f64 {
    (x * (1.0 + 1e-12)).floor()
}

/// Deterministic generator used for every seeded draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circular complex Gaussian sample with the given total variance.
pub(crate) fn complex_normal<R: rand::Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// OFDM numerology plus the sensing allocation (bandwidth and slot).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub cp_overhead: f64,
    pub bandwidth_hz: f64,
    pub slot_duration_s: f64,
}

impl OfdmConfig {
    pub fn new(
        carrier_freq_hz: f64,
        subcarrier_spacing_hz: f64,
        cp_overhead: f64,
        bandwidth_hz: f64,
        slot_duration_s: f64,
    ) -> Result<Self, WaveformError> {
        let cfg = Self {
            carrier_freq_hz,
            subcarrier_spacing_hz,
            cp_overhead,
            bandwidth_hz,
            slot_duration_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 3.6 GHz carrier, 30 kHz subcarriers, 7% cyclic prefix.
    pub fn fr1_sensing(bandwidth_hz: f64, slot_duration_s: f64) -> Result<Self, WaveformError> {
        Self::new(3.6e9, 30e3, 0.07, bandwidth_hz, slot_duration_s)
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("slot_duration_s", self.slot_duration_s),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(field, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.cp_overhead.is_finite() && self.cp_overhead >= 0.0) {
            return Err(invalid("cp_overhead", "must be a non-negative fraction"));
        }
        let n = self.n_subcarriers();
        if n < 2 {
            return Err(WaveformError::TooSmall {
                field: "bandwidth_hz",
                value: n,
                min: 2,
            });
        }
        let m = self.n_symbols();
        if m < 2 {
            return Err(WaveformError::TooSmall {
                field: "slot_duration_s",
                value: m,
                min: 2,
            });
        }
        Ok(())
    }

    /// N = floor(B / Δf).
    pub fn n_subcarriers(&self) -> usize {
        robust_floor(self.bandwidth_hz / self.subcarrier_spacing_hz) as usize
    }

    /// T_sym = (1 + cp) / Δf.
    pub fn symbol_duration_s(&self) -> f64 {
        (1.0 + self.cp_overhead) / self.subcarrier_spacing_hz
    }

    /// M = floor(T_slot / T_sym).
    pub fn n_symbols(&self) -> usize {
        robust_floor(self.slot_duration_s / self.symbol_duration_s()) as usize
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    /// Longest delay representable without aliasing, 1/Δf.
    pub fn max_unambiguous_delay_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarTarget {
    pub range_m: f64,
    /// Positive when approaching the sensor.
    pub radial_velocity_mps: f64,
    pub rcs_dbsm: f64,
}

impl Default for RadarTarget {
    fn default() -> Self {
        Self::drone()
    }
}

impl RadarTarget {
    pub fn new(range_m: f64, radial_velocity_mps: f64, rcs_dbsm: f64) -> Result<Self, WaveformError> {
        // Zero range is accepted here (degenerate echo); the radar equation rejects it.
        if !(range_m.is_finite() && range_m >= 0.0) {
            return Err(invalid("range_m", "must be finite and non-negative"));
        }
        if !radial_velocity_mps.is_finite() || !rcs_dbsm.is_finite() {
            return Err(invalid("target", "velocity and rcs must be finite"));
        }
        Ok(Self {
            range_m,
            radial_velocity_mps,
            rcs_dbsm,
        })
    }

    /// Small drone: 500 m, 25 m/s, -20 dBsm.
    pub fn drone() -> Self {
        Self {
            range_m: 500.0,
            radial_velocity_mps: 25.0,
            rcs_dbsm: -20.0,
        }
    }

    pub fn rcs_linear(&self) -> f64 {
        10f64.powf(self.rcs_dbsm / 10.0)
    }

    /// Monostatic round trip delay 2R/c.
    pub fn round_trip_delay_s(&self) -> f64 {
        2.0 * self.range_m / SPEED_OF_LIGHT
    }

    /// f_D = 2 v f_c / c.
    pub fn doppler_hz(&self, carrier_freq_hz: f64) -> f64 {
        2.0 * self.radial_velocity_mps * carrier_freq_hz / SPEED_OF_LIGHT
    }
}

/// Received resource grid, subcarrier-major (`k * m_symbols + m`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub config: OfdmConfig,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub samples: Vec<Complex64>,
    pub noise_variance: f64,
}

impl ResourceGrid {
    pub fn from_samples(
        config: OfdmConfig,
        samples: Vec<Complex64>,
        noise_variance: f64,
    ) -> Result<Self, WaveformError> {
        config.validate()?;
        let (n, m) = (config.n_subcarriers(), config.n_symbols());
        if samples.len() != n * m {
            return Err(invalid(
                "samples",
                format!("expected {n}x{m} = {} values, got {}", n * m, samples.len()),
            ));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(invalid("samples", "non-finite entry"));
        }
        Ok(Self {
            config,
            n_subcarriers: n,
            n_symbols: m,
            samples,
            noise_variance,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_subcarriers, self.n_symbols)
    }

    pub fn get(&self, k: usize, m: usize) -> Complex64 {
        self.samples[k * self.n_symbols + m]
    }
}

/// Noise switch for synthesized data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Off,
    Seeded(u64),
}

/// Echo of a single point target after matched filtering: a 2-D complex
/// sinusoid in (subcarrier, symbol) plus unit-variance white noise.
pub fn synth_echo_grid(
    config: &OfdmConfig,
    target: &RadarTarget,
    snr_per_re: f64,
    noise: Noise,
) -> Result<ResourceGrid, WaveformError> {
    config.validate()?;
    if !(snr_per_re.is_finite() && snr_per_re > 0.0) {
        return Err(invalid("snr_per_re", "must be positive"));
    }
    let tau = target.round_trip_delay_s();
    let window = config.max_unambiguous_delay_s();
    if tau >= window {
        return Err(WaveformError::DelayAliasing {
            delay_s: tau,
            window_s: window,
        });
    }
    let f_d = target.doppler_hz(config.carrier_freq_hz);
    let (n, m) = (config.n_subcarriers(), config.n_symbols());
    let amp = snr_per_re.sqrt();
    let df = config.subcarrier_spacing_hz;
    let t_sym = config.symbol_duration_s();

    let doppler: Vec<Complex64> = (0..m)
        .map(|mi| Complex64::from_polar(1.0, 2.0 * PI * mi as f64 * t_sym * f_d))
        .collect();
    let mut samples = Vec::with_capacity(n * m);
    for k in 0..n {
        let delay = Complex64::from_polar(amp, -2.0 * PI * k as f64 * df * tau);
        samples.extend(doppler.iter().map(|d| delay * d));
    }
    let noise_variance = match noise {
        Noise::Off => 0.0,
        Noise::Seeded(seed) => {
            let mut rng = seeded_rng(seed);
            for s in samples.iter_mut() {
                *s += complex_normal(&mut rng, 1.0);
            }
            1.0
        }
    };
    Ok(ResourceGrid {
        config: *config,
        n_subcarriers: n,
        n_symbols: m,
        samples,
        noise_variance,
    })
}

/// Per-snapshot complex gain model of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Fading {
    /// Constant gain sqrt(mean_power) * exp(j phase).
    Fixed { phase_rad: f64 },
    /// Redrawn every snapshot from CN(0, mean_power).
    ComplexNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub delay_s: f64,
    pub mean_power: f64,
    pub fading: Fading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipathProfile {
    pub paths: Vec<PathSpec>,
}

impl MultipathProfile {
    pub fn new(paths: Vec<PathSpec>) -> Result<Self, WaveformError> {
        let p = Self { paths };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), WaveformError> {
        if self.paths.is_empty() {
            return Err(WaveformError::EmptyProfile);
        }
        for (i, p) in self.paths.iter().enumerate() {
            if !(p.delay_s.is_finite() && p.delay_s >= 0.0) {
                return Err(invalid("paths.delay_s", format!("path {i} has invalid delay")));
            }
            if !(p.mean_power.is_finite() && p.mean_power >= 0.0) {
                return Err(invalid("paths.mean_power", format!("path {i} has invalid power")));
            }
            if i > 0 && p.delay_s <= self.paths[i - 1].delay_s {
                return Err(WaveformError::UnorderedDelays { index: i });
            }
        }
        Ok(())
    }

    /// Same profile with every delay shifted so the first path lands on `los_delay_s`.
    pub fn with_first_delay(&self, los_delay_s: f64) -> Self {
        let shift = los_delay_s - self.paths[0].delay_s;
        Self {
            paths: self
                .paths
                .iter()
                .map(|p| PathSpec {
                    delay_s: p.delay_s + shift,
                    ..*p
                })
                .collect(),
        }
    }

    pub fn first_delay_s(&self) -> f64 {
        self.paths[0].delay_s
    }
}

/// One SRS-based channel estimate across K contiguous subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct CirSnapshot {
    pub freq_response: Vec<Complex64>,
    pub snapshot_index: usize,
    pub noise_variance: f64,
    pub subcarrier_spacing_hz: f64,
}

pub const MIN_CIR_SUBCARRIERS: usize = 8;

impl CirSnapshot {
    pub fn new(
        freq_response: Vec<Complex64>,
        snapshot_index: usize,
        noise_variance: f64,
        subcarrier_spacing_hz: f64,
    ) -> Result<Self, WaveformError> {
        if freq_response.len() < MIN_CIR_SUBCARRIERS {
            return Err(WaveformError::TooSmall {
                field: "freq_response",
                value: freq_response.len(),
                min: MIN_CIR_SUBCARRIERS,
            });
        }
        if freq_response.iter().any(|h| !h.re.is_finite() || !h.im.is_finite()) {
            return Err(invalid("freq_response", "non-finite entry"));
        }
        if !(subcarrier_spacing_hz.is_finite() && subcarrier_spacing_hz > 0.0) {
            return Err(invalid("subcarrier_spacing_hz", "must be positive"));
        }
        Ok(Self {
            freq_response,
            snapshot_index,
            noise_variance,
            subcarrier_spacing_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.freq_response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_response.is_empty()
    }

    /// Spacing between time-domain taps, 1/(K Δf).
    pub fn tap_spacing_s(&self) -> f64 {
        1.0 / (self.len() as f64 * self.subcarrier_spacing_hz)
    }
}

/// `snapshot_snr` is the per-subcarrier SNR of the first (line-of-sight)
/// path's mean power; `f64::INFINITY` disables noise.
pub fn synth_cir_snapshots(
    profile: &MultipathProfile,
    subcarriers: usize,
    subcarrier_spacing_hz: f64,
    snapshots: usize,
    snapshot_snr: f64,
    seed: u64,
) -> Result<Vec<CirSnapshot>, WaveformError> {
    profile.validate()?;
    if snapshots < 1 {
        return Err(WaveformError::TooSmall {
            field: "snapshots",
            value: snapshots,
            min: 1,
        });
    }
    if subcarriers < MIN_CIR_SUBCARRIERS {
        return Err(WaveformError::TooSmall {
            field: "subcarriers",
            value: subcarriers,
            min: MIN_CIR_SUBCARRIERS,
        });
    }
    if !(subcarrier_spacing_hz.is_finite() && subcarrier_spacing_hz > 0.0) {
        return Err(invalid("subcarrier_spacing_hz", "must be positive"));
    }
    if !(snapshot_snr > 0.0) {
        return Err(invalid("snapshot_snr", "must be positive"));
    }
    let window = 1.0 / subcarrier_spacing_hz;
    if let Some(p) = profile.paths.iter().find(|p| p.delay_s >= window) {
        return Err(WaveformError::DelayAliasing {
            delay_s: p.delay_s,
            window_s: window,
        });
    }
    let noise_variance = if snapshot_snr.is_infinite() {
        0.0
    } else {
        profile.paths[0].mean_power / snapshot_snr
    };

    // Per-path phase ramp across subcarriers, shared by all snapshots.
    let steering: Vec<Vec<Complex64>> = profile
        .paths
        .iter()
        .map(|p| {
            (0..subcarriers)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * subcarrier_spacing_hz * p.delay_s))
                .collect()
        })
        .collect();

    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(snapshots);
    for m in 0..snapshots {
        let gains: Vec<Complex64> = profile
            .paths
            .iter()
            .map(|p| match p.fading {
                Fading::Fixed { phase_rad } => Complex64::from_polar(p.mean_power.sqrt(), phase_rad),
                Fading::ComplexNormal => complex_normal(&mut rng, p.mean_power),
            })
            .collect();
        let mut h = vec![Complex64::new(0.0, 0.0); subcarriers];
        for (g, a) in gains.iter().zip(&steering) {
            for (hk, ak) in h.iter_mut().zip(a) {
                *hk += g * ak;
            }
        }
        if noise_variance > 0.0 {
            for hk in h.iter_mut() {
                *hk += complex_normal(&mut rng, noise_variance);
            }
        }
        out.push(CirSnapshot {
            freq_response: h,
            snapshot_index: m,
            noise_variance,
            subcarrier_spacing_hz,
        });
    }
    Ok(out)
}

/// Length-K inverse DFT (1/K normalized) of a snapshot's frequency response.
pub fn cir_time_domain(snapshot: &CirSnapshot) -> Vec<Complex64> {
    let k = snapshot.len();
    let mut buf = snapshot.freq_response.clone();
    let ifft = FftPlanner::new().plan_fft_inverse(k);
    ifft.process(&mut buf);
    let scale = 1.0 / k as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Indoor multipath ranging scenario with a line-of-sight path weaker than
/// the strongest reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangingScenario {
    pub profile: MultipathProfile,
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    /// Per-snapshot, per-subcarrier SNR of the LOS path (linear).
    pub los_snr: f64,
}

impl Default for RangingScenario {
    fn default() -> Self {
        let db = |x: f64| 10f64.powf(x / 10.0);
        let path = |delay_ns: f64, power_db: f64| PathSpec {
            delay_s: delay_ns * 1e-9,
            mean_power: db(power_db),
            fading: Fading::ComplexNormal,
        };
        Self {
            profile: MultipathProfile {
                paths: vec![
                    path(60.0, -6.0),
                    path(180.0, 0.0),
                    path(320.0, -3.0),
                    path(500.0, -8.0),
                ],
            },
            subcarriers: 1024,
            subcarrier_spacing_hz: 30e3,
            los_snr: db(-10.0),
        }
    }
}

impl RangingScenario {
    /// One-way LOS distance.
    pub fn truth_range_m(&self) -> f64 {
        self.profile.first_delay_s() * SPEED_OF_LIGHT
    }

    pub fn snapshots(&self, count: usize, seed: u64) -> Result<Vec<CirSnapshot>, WaveformError> {
        synth_cir_snapshots(
            &self.profile,
            self.subcarriers,
            self.subcarrier_spacing_hz,
            count,
            self.los_snr,
            seed,
        )
    }
}
