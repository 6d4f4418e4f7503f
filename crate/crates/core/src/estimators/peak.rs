use super::{check_snapshots, median, parabolic_offset, EstimatorError, RangeEstimate, RangeMethod};
use crate::waveform::{cir_time_domain, CirSnapshot};

/// Delay of the strongest time-domain tap of one snapshot, refined by a
/// parabola through the neighbouring tap magnitudes.
pub fn peak_delay_s(snapshot: &CirSnapshot) -> f64 {
    let h = cir_time_domain(snapshot);
    let k = h.len();
    let mag: Vec<f64> = h.iter().map(|v| v.norm()).collect();
    let (idx, _) = mag
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let off = parabolic_offset(mag[(idx + k - 1) % k], mag[idx], mag[(idx + 1) % k]);
    (idx as f64 + off).max(0.0) * snapshot.tap_spacing_s()
}

/// One scalar timing report per snapshot.
pub fn peak_detect_per_snapshot(snapshots: &[CirSnapshot]) -> Result<Vec<RangeEstimate>, EstimatorError> {
    check_snapshots(snapshots, 1)?;
    Ok(snapshots
        .iter()
        .map(|s| RangeEstimate::from_delay(peak_delay_s(s), RangeMethod::Peak, 1))
        .collect())
}

/// Median of the per-snapshot scalar reports.
pub fn peak_detect_range(snapshots: &[CirSnapshot]) -> Result<RangeEstimate, EstimatorError> {
    check_snapshots(snapshots, 1)?;
    let mut delays: Vec<f64> = snapshots.iter().map(peak_delay_s).collect();
    Ok(RangeEstimate::from_delay(median(&mut delays), RangeMethod::Peak, snapshots.len()))
}
