//! Sensing life-cycle management: model catalog, intent-driven
//! algorithm/site matching, deployment through the dApp runtime, and
//! KPI-driven replacement.

mod catalog;
mod matching;
mod monitor;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{AppKind, Catalog, CatalogEntry, ModelRef, Requirements, Topology, ValidationStatus};
pub use matching::{
    is_feasible, match_intent, rank, Assignment, MatchPlan, PerformanceTargets, SensingIntent, SiteSelector,
    Unassignable,
};
pub use monitor::{violations, Action, ActionRecord, Monitor, DEFAULT_HYSTERESIS};

use crate::runtime::{DappDescriptor, DappFunction, DappHandle, DappKpi, Runtime, RuntimeError, SiteProfile};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("model {model_id} version {version} already registered")]
    DuplicateVersion { model_id: String, version: u32 },
    #[error("invalid catalog entry {model_id}: {reason}")]
    InvalidEntry { model_id: String, reason: String },
    #[error("invalid intent {intent_id}: {reason}")]
    InvalidIntent { intent_id: String, reason: String },
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("model {0} has no runtime implementation")]
    NotDeployable(String),
    #[error("no deployment at site {0}")]
    NoDeployment(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeployStatus {
    Running,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteOutcome {
    pub site_id: String,
    pub model: ModelRef,
    pub status: DeployStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub handle: Option<DappHandle>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeploymentReport {
    pub outcomes: Vec<SiteOutcome>,
}

impl DeploymentReport {
    pub fn running(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.status == DeployStatus::Running)
            .count()
    }
}

/// Writes one JSON object per line.
pub fn write_json_lines<T: Serialize, W: Write>(items: &[T], mut out: W) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Deployment {
    handle: DappHandle,
    current: ModelRef,
    alternatives: Vec<ModelRef>,
}

/// Parameters used when a model is reconfigured instead of replaced.
pub fn fallback_function(function: &DappFunction) -> DappFunction {
    let mut f = function.clone();
    match &mut f {
        DappFunction::Monostatic { zero_pad, .. } => *zero_pad = (*zero_pad * 2).min(16),
        DappFunction::Ranging {
            snapshots_per_report, ..
        } => *snapshots_per_report *= 2,
        DappFunction::Spectrum { detector, .. } => detector.threshold_db += 3.0,
    }
    f
}

/// Single control loop over one intent.
pub struct Orchestrator {
    catalog: Catalog,
    intent: SensingIntent,
    monitor: Monitor,
    deployments: BTreeMap<String, Deployment>,
    log: Vec<ActionRecord>,
}

impl Orchestrator {
    pub fn new(catalog: Catalog, intent: SensingIntent, hysteresis: usize) -> Result<Self, OrchestratorError> {
        intent.validate()?;
        Ok(Self {
            monitor: Monitor::new(intent.performance, hysteresis),
            catalog,
            intent,
            deployments: BTreeMap::new(),
            log: Vec::new(),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn intent(&self) -> &SensingIntent {
        &self.intent
    }

    pub fn register_model(&mut self, entry: CatalogEntry) -> Result<(), OrchestratorError> {
        self.catalog.register(entry)
    }

    pub fn actions(&self) -> &[ActionRecord] {
        &self.log
    }

    pub fn handle_at(&self, site_id: &str) -> Option<DappHandle> {
        self.deployments.get(site_id).map(|d| d.handle)
    }

    pub fn model_at(&self, site_id: &str) -> Option<&ModelRef> {
        self.deployments.get(site_id).map(|d| &d.current)
    }

    /// Matches the intent against the runtime's sites using their remaining budget.
    pub fn plan(&self, runtime: &Runtime) -> MatchPlan {
        let sites: Vec<SiteProfile> = runtime
            .site_ids()
            .filter_map(|id| {
                let mut p = runtime.site_profile(id)?.clone();
                p.compute_budget = runtime.remaining_compute(id).ok()?;
                Some(p)
            })
            .collect();
        match_intent(&self.intent, &sites, &self.catalog)
    }

    fn descriptor(&self, site_id: &str, model: &ModelRef) -> Result<DappDescriptor, OrchestratorError> {
        let entry = self
            .catalog
            .get(&model.model_id, model.version)
            .ok_or_else(|| OrchestratorError::UnknownModel(model.to_string()))?;
        let function = entry
            .implementation
            .clone()
            .ok_or_else(|| OrchestratorError::NotDeployable(model.to_string()))?;
        Ok(DappDescriptor {
            dapp_id: format!("{}/{}", self.intent.intent_id, site_id),
            input_kind: entry.requirements.input_kind,
            function,
            compute_cost: entry.requirements.min_compute,
            model_version: model.to_string(),
        })
    }

    /// Deploys every assignment. Failures are reported per site and do not
    /// undo successful deployments.
    pub fn execute(&mut self, plan: &MatchPlan, runtime: &mut Runtime) -> DeploymentReport {
        let mut report = DeploymentReport::default();
        for a in &plan.assignments {
            let result = self
                .descriptor(&a.site_id, &a.model)
                .and_then(|d| runtime.deploy(d, &a.site_id).map_err(OrchestratorError::from));
            let outcome = match result {
                Ok(handle) => {
                    self.deployments.insert(
                        a.site_id.clone(),
                        Deployment {
                            handle,
                            current: a.model.clone(),
                            alternatives: a.alternatives.clone(),
                        },
                    );
                    SiteOutcome {
                        site_id: a.site_id.clone(),
                        model: a.model.clone(),
                        status: DeployStatus::Running,
                        handle: Some(handle),
                        error: None,
                    }
                }
                Err(e) => SiteOutcome {
                    site_id: a.site_id.clone(),
                    model: a.model.clone(),
                    status: DeployStatus::Failed,
                    handle: None,
                    error: Some(e.to_string()),
                },
            };
            report.outcomes.push(outcome);
        }
        report
    }

    /// Evaluates one KPI window for a site and applies any resulting action
    /// to the runtime. The action is logged even when applying it fails.
    pub fn observe(
        &mut self,
        site_id: &str,
        kpi: &DappKpi,
        runtime: &mut Runtime,
    ) -> Result<Option<ActionRecord>, OrchestratorError> {
        let dep = self
            .deployments
            .get(site_id)
            .ok_or_else(|| OrchestratorError::NoDeployment(site_id.into()))?;
        let Some(mut record) = self
            .monitor
            .observe(site_id, kpi, &dep.current, dep.alternatives.first())
        else {
            return Ok(None);
        };
        if let Err(e) = self.apply(&record.action, runtime) {
            record.cause = format!("{} (apply failed: {e})", record.cause);
        }
        self.log.push(record.clone());
        Ok(Some(record))
    }

    fn apply(&mut self, action: &Action, runtime: &mut Runtime) -> Result<(), OrchestratorError> {
        match action {
            Action::Replace { site_id, to, .. } => {
                let desc = self.descriptor(site_id, to)?;
                let dep = self.deployments.get_mut(site_id).expect("monitored site is deployed");
                runtime.replace(dep.handle, desc)?;
                dep.current = to.clone();
                dep.alternatives.retain(|m| m != to);
                Ok(())
            }
            Action::Reconfigure { site_id, model } => {
                let mut desc = self.descriptor(site_id, model)?;
                desc.function = fallback_function(&desc.function);
                desc.model_version = format!("{model}+fallback");
                let handle = self.deployments[site_id].handle;
                runtime.replace(handle, desc)?;
                Ok(())
            }
            Action::Alarm { .. } => Ok(()),
        }
    }
}
