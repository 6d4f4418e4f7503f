use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{invalid, parabolic_offset, DelayDopplerEstimate, EstimatorError};
use crate::waveform::ResourceGrid;
use crate::SPEED_OF_LIGHT;

/// Zero-padded 2-D periodogram peak with parabolic refinement on both axes.
///
/// The subcarrier axis is inverse-transformed (the echo phase rotates as
/// `exp(-j2π kΔf τ)`), the symbol axis forward-transformed, so the peak sits
/// at bin (τ Δf N_fft, f_D T_sym M_fft).
pub fn periodogram_delay_doppler(grid: &ResourceGrid, zero_pad: usize) -> Result<DelayDopplerEstimate, EstimatorError> {
    if zero_pad < 1 {
        return Err(invalid("zero_pad", "must be at least 1"));
    }
    let (n, m) = grid.shape();
    if n < 2 || m < 2 || grid.samples.len() != n * m {
        return Err(invalid("grid", format!("inconsistent grid of {} samples for {n}x{m}", grid.samples.len())));
    }
    let (nf, mf) = (n * zero_pad, m * zero_pad);
    let mut planner = FftPlanner::new();
    let ifft_delay = planner.plan_fft_inverse(nf);
    let fft_doppler = planner.plan_fft_forward(mf);

    // spectrum[p * mf + q]
    let zero = Complex64::new(0.0, 0.0);
    let mut spectrum = vec![zero; nf * mf];
    let mut column = vec![zero; nf];
    for sym in 0..m {
        column.iter_mut().for_each(|c| *c = zero);
        for k in 0..n {
            column[k] = grid.get(k, sym);
        }
        ifft_delay.process(&mut column);
        for (p, v) in column.iter().enumerate() {
            spectrum[p * mf + sym] = *v;
        }
    }
    for row in spectrum.chunks_exact_mut(mf) {
        fft_doppler.process(row);
    }

    let mag: Vec<f64> = spectrum.iter().map(|v| v.norm()).collect();
    let (best, _) = mag
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let (p, q) = (best / mf, best % mf);
    let at = |pp: usize, qq: usize| mag[pp * mf + qq];
    let dp = parabolic_offset(at((p + nf - 1) % nf, q), at(p, q), at((p + 1) % nf, q));
    let dq = parabolic_offset(at(p, (q + mf - 1) % mf), at(p, q), at(p, (q + 1) % mf));

    let mut p_hat = p as f64 + dp;
    if p_hat < 0.0 {
        p_hat += nf as f64;
    }
    let mut q_hat = q as f64 + dq;
    if q_hat >= mf as f64 / 2.0 {
        q_hat -= mf as f64;
    }
    let cfg = &grid.config;
    let delay_s = p_hat / (nf as f64 * cfg.subcarrier_spacing_hz);
    let doppler_hz = q_hat / (mf as f64 * cfg.symbol_duration_s());
    let norm = (n * m) as f64;
    Ok(DelayDopplerEstimate {
        delay_s,
        doppler_hz,
        range_m: SPEED_OF_LIGHT * delay_s / 2.0,
        velocity_mps: doppler_hz * SPEED_OF_LIGHT / (2.0 * cfg.carrier_freq_hz),
        peak_power: (mag[best] / norm).powi(2),
    })
}
