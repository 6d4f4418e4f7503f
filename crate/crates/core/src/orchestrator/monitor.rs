use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelRef, PerformanceTargets};
use crate::runtime::DappKpi;

/// Default number of consecutive violating windows before acting.
pub const DEFAULT_HYSTERESIS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Replace { site_id: String, from: ModelRef, to: ModelRef },
    Reconfigure { site_id: String, model: ModelRef },
    Alarm { site_id: String, model: ModelRef },
}

impl Action {
    pub fn site_id(&self) -> &str {
        match self {
            Action::Replace { site_id, .. } | Action::Reconfigure { site_id, .. } | Action::Alarm { site_id, .. } => {
                site_id
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub window_end_ns: u64,
    #[serde(flatten)]
    pub action: Action,
    pub cause: String,
}

/// Bound violations of one KPI window, empty when compliant. Missing
/// measurements are not violations.
pub fn violations(kpi: &DappKpi, targets: &PerformanceTargets) -> Vec<String> {
    let mut out = Vec::new();
    if kpi.processing_latency_s > targets.max_latency_s {
        out.push(format!(
            "latency {:.4} s > {:.4} s",
            kpi.processing_latency_s, targets.max_latency_s
        ));
    }
    if let Some(pd) = kpi.detection_probability {
        if pd < targets.min_detection_probability {
            out.push(format!(
                "detection probability {pd:.3} < {:.3}",
                targets.min_detection_probability
            ));
        }
    }
    if let Some(rmse) = kpi.localization_rmse_m {
        if rmse > targets.max_localization_rmse_m {
            out.push(format!(
                "localization rmse {rmse:.3} m > {:.3} m",
                targets.max_localization_rmse_m
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
enum Stage {
    #[default]
    Watching,
    Replaced,
    Reconfigured,
    Alarmed,
}

#[derive(Debug, Clone, Default)]
struct SiteWatch {
    consecutive: usize,
    stage: Stage,
}

/// Per-site hysteresis. A violation episode starts with the first violating
/// window and ends with the next compliant one. Within an episode, W
/// consecutive violations trigger one escalation step: Replace when an
/// alternative exists, otherwise Reconfigure; W more trigger Reconfigure
/// after a Replace, and Alarm after a Reconfigure. At most one Replace is
/// emitted per episode.
#[derive(Debug, Clone)]
pub struct Monitor {
    hysteresis: usize,
    targets: PerformanceTargets,
    sites: BTreeMap<String, SiteWatch>,
}

impl Monitor {
    pub fn new(targets: PerformanceTargets, hysteresis: usize) -> Self {
        Self {
            hysteresis: hysteresis.max(1),
            targets,
            sites: BTreeMap::new(),
        }
    }

    pub fn hysteresis(&self) -> usize {
        self.hysteresis
    }

    /// Feeds one KPI window for the model currently serving `site_id`.
    pub fn observe(
        &mut self,
        site_id: &str,
        kpi: &DappKpi,
        current: &ModelRef,
        next_alternative: Option<&ModelRef>,
    ) -> Option<ActionRecord> {
        let watch = self.sites.entry(site_id.to_string()).or_default();
        let causes = violations(kpi, &self.targets);
        if causes.is_empty() {
            *watch = SiteWatch::default();
            return None;
        }
        watch.consecutive += 1;
        if watch.consecutive < self.hysteresis {
            return None;
        }
        watch.consecutive = 0;
        let action = match (watch.stage, next_alternative) {
            (Stage::Watching, Some(to)) => {
                watch.stage = Stage::Replaced;
                Action::Replace {
                    site_id: site_id.into(),
                    from: current.clone(),
                    to: to.clone(),
                }
            }
            (Stage::Watching | Stage::Replaced, _) => {
                watch.stage = Stage::Reconfigured;
                Action::Reconfigure {
                    site_id: site_id.into(),
                    model: current.clone(),
                }
            }
            (Stage::Reconfigured, _) => {
                watch.stage = Stage::Alarmed;
                Action::Alarm {
                    site_id: site_id.into(),
                    model: current.clone(),
                }
            }
            (Stage::Alarmed, _) => return None,
        };
        Some(ActionRecord {
            window_end_ns: kpi.window_end_ns,
            action,
            cause: format!("{} consecutive windows: {}", self.hysteresis, causes.join("; ")),
        })
    }
}
