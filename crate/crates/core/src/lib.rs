//! Programmable integrated sensing and communication at the RAN edge.
//!
//! The crate is organized bottom-up:
//!
//! - [`waveform`] synthesizes OFDM echo grids and multipath CIR snapshots.
//! - [`crlb`] holds the radar link budget, delay/Doppler bounds and the
//!   sensing data-rate overhead sweep.
//! - [`estimators`] hosts the periodogram, peak-detection and MUSIC ranging
//!   algorithms run by dApps.
//! - [`e3`] is the user-plane streaming protocol between the DU and dApps.
//! - [`runtime`] runs plug-and-play sensing dApps against E3 streams.
//! - [`xapp`] fuses per-site range reports into tracked positions.
//! - [`orchestrator`] handles the model catalog, intent matching, deployment
//!   and KPI-driven replacement.
//! - [`scenario`] and [`sim`] load experiment configs and drive the
//!   figure reproductions and the end-to-end simulation.

pub mod crlb;
pub mod e3;
pub mod estimators;
pub mod orchestrator;
pub mod runtime;
pub mod scenario;
pub mod sim;
pub mod waveform;
pub mod xapp;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

pub use crlb::{CrlbPoint, LinkBudget, SweepSpec};
pub use e3::{E3Header, E3Message, Payload, StreamKind, StreamStats};
pub use estimators::{DelayDopplerEstimate, MusicSpec, RangeEstimate, RangeMethod};
pub use waveform::{CirSnapshot, MultipathProfile, OfdmConfig, RadarTarget, ResourceGrid};
