use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{check_snapshots, invalid, parabolic_offset, EstimatorError, RangeEstimate, RangeMethod};
use crate::waveform::CirSnapshot;

/// Subspace ranging parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MusicSpec {
    /// Smoothing window along subcarriers; also the covariance dimension.
    pub subarray_len: usize,
    /// Signal subspace dimension.
    pub model_order: usize,
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    pub delay_step_s: f64,
    /// A peak qualifies when it reaches this fraction of the global maximum.
    pub relative_threshold: f64,
}

impl Default for MusicSpec {
    fn default() -> Self {
        Self {
            subarray_len: 256,
            model_order: 6,
            delay_min_s: 0.0,
            delay_max_s: 800e-9,
            delay_step_s: 1e-9,
            relative_threshold: 1e-3,
        }
    }
}

impl MusicSpec {
    pub fn validate(&self, subcarriers: usize) -> Result<(), EstimatorError> {
        if self.subarray_len < 2 || self.subarray_len > subcarriers {
            return Err(invalid(
                "subarray_len",
                format!("{} not in [2, {subcarriers}]", self.subarray_len),
            ));
        }
        if self.model_order >= self.subarray_len {
            return Err(EstimatorError::ModelOrderTooLarge {
                model_order: self.model_order,
                subarray_len: self.subarray_len,
            });
        }
        if self.model_order == 0 {
            return Err(invalid("model_order", "must be at least 1"));
        }
        if !(self.delay_step_s.is_finite() && self.delay_step_s > 0.0) {
            return Err(invalid("delay_step_s", "must be positive"));
        }
        if !(self.delay_min_s.is_finite() && self.delay_max_s.is_finite() && self.delay_min_s <= self.delay_max_s) {
            return Err(invalid("delay_max_s", "search range is empty"));
        }
        if !(self.relative_threshold > 0.0 && self.relative_threshold <= 1.0) {
            return Err(invalid("relative_threshold", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let count = ((self.delay_max_s - self.delay_min_s) / self.delay_step_s * (1.0 + 1e-12)).floor() as usize + 1;
        (0..count).map(|i| self.delay_min_s + i as f64 * self.delay_step_s).collect()
    }
}

/// Forward-backward smoothed covariance over all snapshots and all length-L
/// subarrays, normalized by the number of (snapshot, subarray) pairs.
///
/// Entries along each diagonal are produced by a sliding update, so the cost
/// is O(L·J·M + L²·M) rather than O(L²·J·M).
pub fn smoothed_covariance(snapshots: &[CirSnapshot], subarray_len: usize) -> Result<DMatrix<Complex64>, EstimatorError> {
    let (k, _) = check_snapshots(snapshots, 1)?;
    let l = subarray_len;
    if l < 1 || l > k {
        return Err(invalid("subarray_len", format!("{l} not in [1, {k}]")));
    }
    let j = k - l + 1;
    let zero = Complex64::new(0.0, 0.0);
    let mut fwd = DMatrix::<Complex64>::zeros(l, l);
    for d in 0..l {
        let mut acc = zero;
        for s in snapshots {
            let h = &s.freq_response;
            for t in 0..j {
                acc += h[t] * h[t + d].conj();
            }
        }
        fwd[(0, d)] = acc;
        for i in 0..l - d - 1 {
            for s in snapshots {
                let h = &s.freq_response;
                acc -= h[i] * h[i + d].conj();
                acc += h[i + j] * h[i + d + j].conj();
            }
            fwd[(i + 1, i + 1 + d)] = acc;
        }
    }
    let norm = 1.0 / (snapshots.len() * j) as f64;
    let mut r = DMatrix::<Complex64>::zeros(l, l);
    for row in 0..l {
        for col in row..l {
            let back = fwd[(l - 1 - col, l - 1 - row)];
            let v = (fwd[(row, col)] + back) * (0.5 * norm);
            if row == col {
                r[(row, col)] = Complex64::new(v.re, 0.0);
            } else {
                r[(row, col)] = v;
                r[(col, row)] = v.conj();
            }
        }
    }
    Ok(r)
}

/// Eigenpairs of a Hermitian matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

pub fn hermitian_eigen(r: &DMatrix<Complex64>) -> HermitianEigen {
    let eig = r.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(r.nrows(), order.len(), |row, col| eig.eigenvectors[(row, order[col])]);
    HermitianEigen { values, vectors }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pseudospectrum {
    pub delays_s: Vec<f64>,
    pub values: Vec<f64>,
}

impl Pseudospectrum {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Indices of local maxima; an endpoint counts when it exceeds its only neighbour.
    pub fn local_maxima(&self) -> Vec<usize> {
        let v = &self.values;
        let n = v.len();
        (0..n)
            .filter(|&i| {
                let left = i == 0 || v[i] >= v[i - 1];
                let right = i + 1 == n || v[i] >= v[i + 1];
                let strict = (i > 0 && v[i] > v[i - 1]) || (i + 1 < n && v[i] > v[i + 1]) || n == 1;
                left && right && strict
            })
            .collect()
    }
}

/// P(τ) = 1 / ‖E_nᴴ a(τ)‖², a(τ)[i] = exp(−j2π i Δf τ).
///
/// The noise-subspace norm is evaluated as ‖a‖² − ‖E_sᴴ a‖², which is exact
/// for an orthonormal eigenbasis and needs only the signal eigenvectors.
pub fn music_pseudospectrum(snapshots: &[CirSnapshot], spec: &MusicSpec) -> Result<Pseudospectrum, EstimatorError> {
    let (k, df) = check_snapshots(snapshots, 2)?;
    spec.validate(k)?;
    let r = smoothed_covariance(snapshots, spec.subarray_len)?;
    let eig = hermitian_eigen(&r);
    Ok(pseudospectrum_from_subspace(&eig, spec, df))
}

pub(crate) fn pseudospectrum_from_subspace(eig: &HermitianEigen, spec: &MusicSpec, df: f64) -> Pseudospectrum {
    let l = spec.subarray_len;
    let signal: Vec<Vec<Complex64>> = (0..spec.model_order)
        .map(|c| eig.vectors.column(c).iter().map(|v| v.conj()).collect())
        .collect();
    let delays_s = spec.grid();
    let mut steering = vec![Complex64::new(0.0, 0.0); l];
    let floor = l as f64 * 1e-15;
    let values = delays_s
        .iter()
        .map(|&tau| {
            for (i, a) in steering.iter_mut().enumerate() {
                *a = Complex64::from_polar(1.0, -2.0 * PI * i as f64 * df * tau);
            }
            let proj: f64 = signal
                .iter()
                .map(|e| e.iter().zip(&steering).map(|(x, a)| x * a).sum::<Complex64>().norm_sqr())
                .sum();
            1.0 / (l as f64 - proj).max(floor)
        })
        .collect();
    Pseudospectrum { delays_s, values }
}

/// Line-of-sight-first selection: the smallest-delay pseudospectrum peak
/// reaching `relative_threshold` of the global maximum, refined by a
/// parabola through the log-spectrum.
pub fn music_range(snapshots: &[CirSnapshot], spec: &MusicSpec) -> Result<RangeEstimate, EstimatorError> {
    let ps = music_pseudospectrum(snapshots, spec)?;
    let delay = first_peak_delay(&ps, spec)?;
    Ok(RangeEstimate::from_delay(delay, RangeMethod::Subspace, snapshots.len()))
}

pub(crate) fn first_peak_delay(ps: &Pseudospectrum, spec: &MusicSpec) -> Result<f64, EstimatorError> {
    let max = ps.max();
    if !(max > 0.0 && max.is_finite()) {
        return Err(EstimatorError::NoPeak);
    }
    let level = spec.relative_threshold * max;
    let idx = ps
        .local_maxima()
        .into_iter()
        .find(|&i| ps.values[i] >= level)
        .ok_or(EstimatorError::NoPeak)?;
    let v = &ps.values;
    let off = if idx > 0 && idx + 1 < v.len() {
        parabolic_offset(v[idx - 1].ln(), v[idx].ln(), v[idx + 1].ln())
    } else {
        0.0
    };
    Ok((ps.delays_s[idx] + off * spec.delay_step_s).max(0.0))
}
