use std::cmp::Reverse;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AppKind, Catalog, CatalogEntry, ModelRef, OrchestratorError, ValidationStatus};
use crate::runtime::SiteProfile;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteSelector {
    /// A site must carry every listed tag.
    #[serde(default)]
    pub tags: BTreeSet<String>,
    /// When present, only these sites are considered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_ids: Option<BTreeSet<String>>,
}

impl SiteSelector {
    pub fn selects(&self, site: &SiteProfile) -> bool {
        self.tags.is_subset(&site.tags) && self.site_ids.as_ref().map_or(true, |ids| ids.contains(&site.site_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceTargets {
    pub max_latency_s: f64,
    pub min_detection_probability: f64,
    pub max_localization_rmse_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingIntent {
    pub intent_id: String,
    /// Target application tag a model must serve.
    pub service: String,
    #[serde(default)]
    pub site_selector: SiteSelector,
    pub performance: PerformanceTargets,
}

impl SensingIntent {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let p = &self.performance;
        let ok = p.max_latency_s > 0.0
            && p.max_localization_rmse_m > 0.0
            && p.min_detection_probability > 0.0
            && p.min_detection_probability <= 1.0;
        if !ok {
            return Err(OrchestratorError::InvalidIntent {
                intent_id: self.intent_id.clone(),
                reason: "performance bounds must be positive and probabilities at most 1".into(),
            });
        }
        Ok(())
    }
}

/// Whether `entry` may serve `intent` on `site`, with `site.compute_budget`
/// taken as the remaining budget.
pub fn is_feasible(entry: &CatalogEntry, intent: &SensingIntent, site: &SiteProfile) -> bool {
    entry.validation_status == ValidationStatus::Validated
        && entry.function == AppKind::Dapp
        && entry.target_application == intent.service
        && site.ru.covers(&entry.requirements.ru)
        && site.streams.contains(&entry.requirements.input_kind)
        && entry.requirements.min_compute <= site.compute_budget
}

/// Most recent version first, then cheaper, then model id.
pub fn rank(entries: &mut [&CatalogEntry]) {
    entries.sort_by(|a, b| {
        (Reverse(a.version), a.requirements.min_compute, &a.model_id)
            .partial_cmp(&(Reverse(b.version), b.requirements.min_compute, &b.model_id))
            .expect("min_compute is finite")
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub site_id: String,
    pub model: ModelRef,
    /// Remaining feasible models, best first.
    pub alternatives: Vec<ModelRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unassignable {
    pub site_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPlan {
    pub intent_id: String,
    pub assignments: Vec<Assignment>,
    pub unassignable: Vec<Unassignable>,
}

/// Assigns the best-ranked feasible model to each selected site. Sites are
/// processed in site-id order.
pub fn match_intent(intent: &SensingIntent, sites: &[SiteProfile], catalog: &Catalog) -> MatchPlan {
    let mut selected: Vec<&SiteProfile> = sites.iter().filter(|s| intent.site_selector.selects(s)).collect();
    selected.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    let mut plan = MatchPlan {
        intent_id: intent.intent_id.clone(),
        assignments: Vec::new(),
        unassignable: Vec::new(),
    };
    for site in selected {
        let mut feasible: Vec<&CatalogEntry> = catalog
            .entries()
            .iter()
            .filter(|e| is_feasible(e, intent, site))
            .collect();
        rank(&mut feasible);
        match feasible.split_first() {
            Some((best, rest)) => plan.assignments.push(Assignment {
                site_id: site.site_id.clone(),
                model: best.model_ref(),
                alternatives: rest.iter().map(|e| e.model_ref()).collect(),
            }),
            None => plan.unassignable.push(Unassignable {
                site_id: site.site_id.clone(),
                reason: if catalog.is_empty() {
                    "catalog is empty".into()
                } else {
                    format!("no validated model for {} fits this site", intent.service)
                },
            }),
        }
    }
    plan
}
