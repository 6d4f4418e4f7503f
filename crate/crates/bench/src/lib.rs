//! Benchmark fixtures shared by the criterion targets.

use isac_core::waveform::{synth_echo_grid, Noise, OfdmConfig, RadarTarget, RangingScenario, ResourceGrid};
use isac_core::CirSnapshot;

/// Snapshots of the default multipath ranging scenario.
pub fn ranging_snapshots(count: usize) -> Vec<CirSnapshot> {
    RangingScenario::default().snapshots(count, 7).expect("default scenario is valid")
}

/// Drone echo on a `bandwidth_hz` x `slot_s` allocation at unit SNR.
pub fn echo_grid(bandwidth_hz: f64, slot_s: f64) -> (OfdmConfig, ResourceGrid) {
    let cfg = OfdmConfig::fr1_sensing(bandwidth_hz, slot_s).expect("valid allocation");
    let grid = synth_echo_grid(&cfg, &RadarTarget::drone(), 1.0, Noise::Seeded(3)).expect("valid grid");
    (cfg, grid)
}
