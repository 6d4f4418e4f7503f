use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RuntimeError;
use crate::e3::StreamKind;
use crate::estimators::{EnergyDetector, MusicSpec, RangeMethod};
use crate::waveform::OfdmConfig;

/// Which estimator a dApp runs and with what parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DappFunction {
    /// Delay-Doppler periodogram on I/Q grids.
    Monostatic {
        ofdm: OfdmConfig,
        #[serde(default = "default_zero_pad")]
        zero_pad: usize,
    },
    /// Time-of-arrival ranging on buffered CIR snapshots.
    Ranging {
        method: RangeMethod,
        snapshots_per_report: usize,
        subcarrier_spacing_hz: f64,
        #[serde(default)]
        music: MusicSpec,
    },
    /// Band occupancy on I/Q grids.
    Spectrum { ofdm: OfdmConfig, detector: EnergyDetector },
}

fn default_zero_pad() -> usize {
    4
}

impl DappFunction {
    pub fn input_kind(&self) -> StreamKind {
        match self {
            DappFunction::Monostatic { .. } | DappFunction::Spectrum { .. } => StreamKind::Iq,
            DappFunction::Ranging { .. } => StreamKind::Cir,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DappFunction::Monostatic { .. } => "monostatic",
            DappFunction::Ranging { .. } => "ranging",
            DappFunction::Spectrum { .. } => "spectrum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DappDescriptor {
    pub dapp_id: String,
    pub input_kind: StreamKind,
    pub function: DappFunction,
    pub compute_cost: f64,
    pub model_version: String,
}

impl DappDescriptor {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |field: &'static str, reason: String| Err(RuntimeError::InvalidDescriptor { field, reason });
        if self.dapp_id.is_empty() {
            return bad("dapp_id", "must not be empty".into());
        }
        if !(self.compute_cost.is_finite() && self.compute_cost > 0.0) {
            return bad("compute_cost", format!("{} is not positive", self.compute_cost));
        }
        if self.input_kind != self.function.input_kind() {
            return bad(
                "input_kind",
                format!(
                    "{} dApps consume {:?}, not {:?}",
                    self.function.name(),
                    self.function.input_kind(),
                    self.input_kind
                ),
            );
        }
        match &self.function {
            DappFunction::Monostatic { ofdm, zero_pad } => {
                ofdm.validate().map_err(|e| RuntimeError::InvalidDescriptor {
                    field: "function.ofdm",
                    reason: e.to_string(),
                })?;
                if *zero_pad == 0 {
                    return bad("function.zero_pad", "must be at least 1".into());
                }
            }
            DappFunction::Ranging {
                snapshots_per_report,
                subcarrier_spacing_hz,
                music,
                method,
            } => {
                if *snapshots_per_report == 0 {
                    return bad("function.snapshots_per_report", "must be at least 1".into());
                }
                if *method == RangeMethod::Subspace && *snapshots_per_report < 2 {
                    return bad("function.snapshots_per_report", "subspace ranging needs at least 2".into());
                }
                if !(subcarrier_spacing_hz.is_finite() && *subcarrier_spacing_hz > 0.0) {
                    return bad("function.subcarrier_spacing_hz", "must be positive".into());
                }
                if *method == RangeMethod::Subspace {
                    music.validate(usize::MAX).map_err(|e| RuntimeError::InvalidDescriptor {
                        field: "function.music",
                        reason: e.to_string(),
                    })?;
                }
            }
            DappFunction::Spectrum { ofdm, detector } => {
                ofdm.validate().map_err(|e| RuntimeError::InvalidDescriptor {
                    field: "function.ofdm",
                    reason: e.to_string(),
                })?;
                detector
                    .validate(ofdm.n_subcarriers())
                    .map_err(|e| RuntimeError::InvalidDescriptor {
                        field: "function.detector",
                        reason: e.to_string(),
                    })?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuCapabilities {
    #[serde(default)]
    pub full_duplex: bool,
    #[serde(default)]
    pub bands: BTreeSet<String>,
}

impl RuCapabilities {
    /// True when every capability in `required` is offered by `self`.
    pub fn covers(&self, required: &RuCapabilities) -> bool {
        (!required.full_duplex || self.full_duplex) && required.bands.is_subset(&self.bands)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteProfile {
    pub site_id: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub ru: RuCapabilities,
    pub compute_budget: f64,
    pub streams: BTreeSet<StreamKind>,
}

impl SiteProfile {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.site_id.is_empty() {
            return Err(RuntimeError::InvalidSite {
                site_id: self.site_id.clone(),
                reason: "empty site id".into(),
            });
        }
        if !(self.compute_budget.is_finite() && self.compute_budget >= 0.0) {
            return Err(RuntimeError::InvalidSite {
                site_id: self.site_id.clone(),
                reason: format!("compute budget {} is negative", self.compute_budget),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DappHandle(pub u32);

impl fmt::Display for DappHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dapp#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DappState {
    Init,
    Subscribed,
    Running,
    Degraded,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    Subscribed,
    Started,
    ErrorThreshold,
    Recovered,
    Stop,
}

impl DappState {
    /// INIT → SUBSCRIBED → RUNNING ⇄ DEGRADED, RUNNING|DEGRADED → STOPPED.
    pub fn apply(self, event: LifecycleEvent) -> Result<DappState, RuntimeError> {
        use DappState::*;
        use LifecycleEvent as E;
        match (self, event) {
            (Init, E::Subscribed) => Ok(Subscribed),
            (Subscribed, E::Started) => Ok(Running),
            (Running, E::ErrorThreshold) => Ok(Degraded),
            (Degraded, E::Recovered) => Ok(Running),
            (Running | Degraded, E::Stop) => Ok(Stopped),
            (from, event) => Err(RuntimeError::IllegalTransition { from, event }),
        }
    }

    pub fn is_active(self) -> bool {
        matches!(self, DappState::Running | DappState::Degraded)
    }
}
