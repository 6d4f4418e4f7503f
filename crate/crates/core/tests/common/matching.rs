//! Random matching instances and a brute-force reference matcher.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use isac_core::e3::StreamKind;
use isac_core::orchestrator::{
    AppKind, CatalogEntry, MatchPlan, PerformanceTargets, Requirements, SensingIntent, SiteSelector, Topology,
    ValidationStatus,
};
use isac_core::runtime::{RuCapabilities, SiteProfile};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TAGS: [&str; 2] = ["urban", "rural"];
const BANDS: [&str; 2] = ["n41", "n78"];
const MODELS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

pub fn subset(rng: &mut ChaCha8Rng, items: &[&str]) -> BTreeSet<String> {
    items.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.to_string()).collect()
}

pub fn quarters(rng: &mut ChaCha8Rng, max: u32) -> f64 {
    rng.gen_range(1..=max) as f64 * 0.25
}

pub fn kind(rng: &mut ChaCha8Rng) -> StreamKind {
    *[StreamKind::Iq, StreamKind::Cir].choose(rng).unwrap()
}

pub fn instance(rng: &mut ChaCha8Rng) -> (SensingIntent, Vec<SiteProfile>, Vec<CatalogEntry>) {
    let sites = (0..rng.gen_range(1..=5))
        .map(|i| SiteProfile {
            site_id: format!("s{i}"),
            tags: subset(rng, &TAGS),
            ru: RuCapabilities {
                full_duplex: rng.gen_bool(0.5),
                bands: subset(rng, &BANDS),
            },
            compute_budget: quarters(rng, 16),
            streams: [kind(rng), kind(rng)].into(),
        })
        .collect();

    let mut keys = BTreeSet::new();
    let mut entries = Vec::new();
    for _ in 0..rng.gen_range(0..=10) {
        let key = (*MODELS.choose(rng).unwrap(), rng.gen_range(1..=4u32));
        if !keys.insert(key) {
            continue;
        }
        entries.push(CatalogEntry {
            model_id: key.0.into(),
            version: key.1,
            function: if rng.gen_bool(0.85) { AppKind::Dapp } else { AppKind::Xapp },
            topology: Topology::Ranging,
            target_application: if rng.gen_bool(0.8) { "drones" } else { "crowds" }.into(),
            requirements: Requirements {
                input_kind: kind(rng),
                min_compute: quarters(rng, 12),
                ru: RuCapabilities {
                    full_duplex: rng.gen_bool(0.3),
                    bands: subset(rng, &BANDS[..1]),
                },
            },
            validation_status: if rng.gen_bool(0.8) {
                ValidationStatus::Validated
            } else {
                ValidationStatus::Candidate
            },
            implementation: None,
        });
    }

    let site_ids = rng
        .gen_bool(0.3)
        .then(|| (0..5).filter(|_| rng.gen_bool(0.6)).map(|i| format!("s{i}")).collect());
    let intent = SensingIntent {
        intent_id: "i".into(),
        service: "drones".into(),
        site_selector: SiteSelector {
            tags: subset(rng, &TAGS[..1]),
            site_ids,
        },
        performance: PerformanceTargets {
            max_latency_s: 1.0,
            min_detection_probability: 0.5,
            max_localization_rmse_m: 2.0,
        },
    };
    (intent, sites, entries)
}

pub fn oracle_selected(intent: &SensingIntent, site: &SiteProfile) -> bool {
    let sel = &intent.site_selector;
    sel.tags.iter().all(|t| site.tags.contains(t))
        && match &sel.site_ids {
            Some(ids) => ids.iter().any(|id| *id == site.site_id),
            None => true,
        }
}

pub fn oracle_feasible(e: &CatalogEntry, intent: &SensingIntent, site: &SiteProfile) -> bool {
    let req = &e.requirements;
    if e.validation_status != ValidationStatus::Validated || e.function != AppKind::Dapp {
        return false;
    }
    if e.target_application != intent.service || !site.streams.contains(&req.input_kind) {
        return false;
    }
    if req.ru.full_duplex && !site.ru.full_duplex {
        return false;
    }
    req.ru.bands.iter().all(|b| site.ru.bands.contains(b)) && req.min_compute <= site.compute_budget
}

/// `Less` when `a` should be preferred over `b`.
pub fn oracle_prefer(a: &CatalogEntry, b: &CatalogEntry) -> Ordering {
    b.version
        .cmp(&a.version)
        .then(a.requirements.min_compute.total_cmp(&b.requirements.min_compute))
        .then(a.model_id.cmp(&b.model_id))
}


/// Compares `plan` with the brute-force answer. Returns the number of
/// assigned and unassignable sites on agreement.
pub fn check_plan(
    intent: &SensingIntent,
    sites: &[SiteProfile],
    entries: &[CatalogEntry],
    plan: &MatchPlan,
) -> Result<(usize, usize), String> {
    let mut expected_sites: Vec<&SiteProfile> = sites.iter().filter(|s| oracle_selected(intent, s)).collect();
    expected_sites.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    let assigned_ids: Vec<&str> = plan.assignments.iter().map(|a| a.site_id.as_str()).collect();
    let blocked_ids: Vec<&str> = plan.unassignable.iter().map(|u| u.site_id.as_str()).collect();
    let (mut assigned, mut blocked) = (0, 0);

    for site in &expected_sites {
        let mut feasible: Vec<&CatalogEntry> = entries.iter().filter(|e| oracle_feasible(e, intent, site)).collect();
        feasible.sort_by(|x, y| oracle_prefer(x, y));
        let Some((best, rest)) = feasible.split_first() else {
            if !blocked_ids.contains(&site.site_id.as_str()) {
                return Err(format!("{} should be unassignable", site.site_id));
            }
            blocked += 1;
            continue;
        };
        let Some(a) = plan.assignments.iter().find(|a| a.site_id == site.site_id) else {
            return Err(format!("{} should be assigned {}", site.site_id, best.model_ref()));
        };
        if a.model != best.model_ref() {
            return Err(format!("{}: got {}, oracle picks {}", site.site_id, a.model, best.model_ref()));
        }
        let want: Vec<_> = rest.iter().map(|e| e.model_ref()).collect();
        if a.alternatives != want {
            return Err(format!("{}: alternatives {:?}, oracle {:?}", site.site_id, a.alternatives, want));
        }
        assigned += 1;
    }

    let mut all: Vec<&str> = assigned_ids.iter().chain(&blocked_ids).copied().collect();
    all.sort_unstable();
    let want: Vec<&str> = expected_sites.iter().map(|s| s.site_id.as_str()).collect();
    if all != want {
        return Err(format!("plan covers {all:?}, selector picks {want:?}"));
    }
    if !assigned_ids.windows(2).all(|w| w[0] < w[1]) {
        return Err("assignments are not in site-id order".into());
    }
    Ok((assigned, blocked))
}

/// An entry that differs from others only by id, for tie-break checks.
pub fn tied_entry(id: &str) -> CatalogEntry {
    CatalogEntry {
        model_id: id.into(),
        version: 3,
        function: AppKind::Dapp,
        topology: Topology::Ranging,
        target_application: "drones".into(),
        requirements: Requirements {
            input_kind: StreamKind::Cir,
            min_compute: 1.0,
            ru: Default::default(),
        },
        validation_status: ValidationStatus::Validated,
        implementation: None,
    }
}

pub fn single_site(budget: f64) -> SiteProfile {
    SiteProfile {
        site_id: "s".into(),
        tags: Default::default(),
        ru: Default::default(),
        compute_budget: budget,
        streams: [StreamKind::Cir].into(),
    }
}

pub fn drone_intent() -> SensingIntent {
    SensingIntent {
        intent_id: "i".into(),
        service: "drones".into(),
        site_selector: Default::default(),
        performance: PerformanceTargets {
            max_latency_s: 1.0,
            min_detection_probability: 0.5,
            max_localization_rmse_m: 2.0,
        },
    }
}
