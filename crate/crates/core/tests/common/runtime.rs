//! A reference model of dApp budgets and life cycles.

use std::collections::BTreeMap;

use isac_core::e3::{CirFrame, E3Message, Payload, ReportPayload, StreamKind};
use isac_core::estimators::{MusicSpec, RangeEstimate, RangeMethod};
use isac_core::runtime::{
    DappDescriptor, DappFunction, DappHandle, DappState, Detection, LifecycleEvent, Runtime, RuntimeError,
    SensingFunction, SiteProfile,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const SITES: [&str; 2] = ["a", "b"];
pub const BUDGET: f64 = 3.0;
pub const DEGRADE_AFTER: u32 = 2;

/// Fails on frames with an odd snapshot index, reports otherwise.
pub struct Scripted;

impl SensingFunction for Scripted {
    fn process(&mut self, frame: &E3Message) -> Result<Option<Detection>, String> {
        match &frame.payload {
            Payload::CirFrame(f) if f.snapshot_index % 2 == 1 => Err("scripted failure".into()),
            _ => Ok(Some(Detection {
                payload: ReportPayload::Range(RangeEstimate {
                    delay_s: 0.0,
                    range_m: 0.0,
                    method: RangeMethod::Peak,
                    snapshots_used: 1,
                }),
                confidence: 1.0,
            })),
        }
    }
}

pub fn descriptor(cost: f64) -> DappDescriptor {
    DappDescriptor {
        dapp_id: "p".into(),
        input_kind: StreamKind::Cir,
        function: DappFunction::Ranging {
            method: RangeMethod::Peak,
            snapshots_per_report: 1,
            subcarrier_spacing_hz: 30e3,
            music: MusicSpec::default(),
        },
        compute_cost: cost,
        model_version: format!("p:{cost}"),
    }
}

pub fn runtime() -> Runtime {
    let mut rt = Runtime::new().with_degrade_after(DEGRADE_AFTER).sequential();
    for id in SITES {
        rt.add_site(SiteProfile {
            site_id: id.into(),
            tags: Default::default(),
            ru: Default::default(),
            compute_budget: BUDGET,
            streams: [StreamKind::Cir].into(),
        })
        .unwrap();
    }
    rt
}

#[derive(Debug, Clone)]
pub enum Op {
    Deploy { site: usize, cost: f64 },
    Replace { pick: usize, cost: f64 },
    Stop { pick: usize },
    Frame { site: usize, fail: bool },
}

pub fn cost() -> impl Strategy<Value = f64> {
    (1u32..=8).prop_map(|q| q as f64 * 0.25)
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..2usize, cost()).prop_map(|(site, cost)| Op::Deploy { site, cost }),
        (any::<usize>(), cost()).prop_map(|(pick, cost)| Op::Replace { pick, cost }),
        any::<usize>().prop_map(|pick| Op::Stop { pick }),
        (0..2usize, any::<bool>()).prop_map(|(site, fail)| Op::Frame { site, fail }),
        (0..2usize, any::<bool>()).prop_map(|(site, fail)| Op::Frame { site, fail }),
    ]
}

/// Reference bookkeeping for one deployed dApp.
#[derive(Debug)]
pub struct Shadow {
    site: usize,
    cost: f64,
    state: DappState,
    streak: u32,
}

pub fn used(model: &BTreeMap<DappHandle, Shadow>, site: usize) -> f64 {
    model
        .values()
        .filter(|s| s.site == site && s.state.is_active())
        .map(|s| s.cost)
        .sum()
}

/// Replays `ops` against a fresh runtime and the reference model, checking
/// budgets and states after every step.
pub fn check_ops(ops: Vec<Op>) -> Result<(), TestCaseError> {
    let mut rt = runtime();
    let mut model: BTreeMap<DappHandle, Shadow> = BTreeMap::new();
    let mut order: Vec<DappHandle> = Vec::new();
    let mut seq = 0u16;

    for op in ops {
        match op {
            Op::Deploy { site, cost } => {
                let fits = cost <= BUDGET - used(&model, site);
                let r = rt.deploy_plugin(descriptor(cost), SITES[site], Box::new(Scripted));
                prop_assert_eq!(r.is_ok(), fits);
                if let Ok(h) = r {
                    model.insert(h, Shadow { site, cost, state: DappState::Running, streak: 0 });
                    order.push(h);
                } else {
                    let is_compute = matches!(r, Err(RuntimeError::InsufficientCompute { .. }));
                    prop_assert!(is_compute);
                }
            }
            Op::Replace { pick, cost } => {
                if order.is_empty() { continue; }
                let h = order[pick % order.len()];
                let s = &model[&h];
                let ok = s.state.is_active() && cost <= BUDGET - used(&model, s.site) + s.cost;
                let r = rt.replace_with(h, descriptor(cost), Box::new(Scripted));
                prop_assert_eq!(r.is_ok(), ok);
                if ok {
                    let s = model.get_mut(&h).unwrap();
                    s.cost = cost;
                    s.streak = 0;
                    s.state = DappState::Running;
                }
            }
            Op::Stop { pick } => {
                if order.is_empty() { continue; }
                let h = order[pick % order.len()];
                let s = model.get_mut(&h).unwrap();
                let r = rt.stop(h);
                prop_assert_eq!(r.is_ok(), s.state.is_active());
                if r.is_ok() {
                    s.state = DappState::Stopped;
                }
            }
            Op::Frame { site, fail } => {
                seq += 1;
                let index = seq * 2 + u16::from(fail);
                let frame = Payload::CirFrame(CirFrame { snapshot_index: index, values: vec![] });
                rt.publish(SITES[site], StreamKind::Cir, u64::from(seq), &frame).unwrap();
                let reports = rt.step(SITES[site]).unwrap();
                let mut active = 0;
                for s in model.values_mut().filter(|s| s.site == site && s.state.is_active()) {
                    active += 1;
                    if fail {
                        s.streak += 1;
                        if s.streak >= DEGRADE_AFTER && s.state == DappState::Running {
                            s.state = DappState::Degraded;
                        }
                    } else {
                        s.streak = 0;
                        s.state = DappState::Running;
                    }
                }
                prop_assert_eq!(reports.len(), active);
            }
        }

        for (i, id) in SITES.iter().enumerate() {
            let expect = used(&model, i);
            prop_assert!((rt.used_compute(id) - expect).abs() < 1e-12);
            prop_assert!(rt.used_compute(id) <= BUDGET + 1e-12);
            prop_assert!((rt.remaining_compute(id).unwrap() - (BUDGET - expect)).abs() < 1e-12);
        }
        for (h, s) in &model {
            prop_assert_eq!(rt.state(*h).unwrap(), s.state);
            prop_assert_eq!(rt.site_of(*h).unwrap(), SITES[s.site]);
        }
    }
    Ok(())
}

pub fn transition_table(from: DappState, event: LifecycleEvent) -> Option<DappState> {
    use DappState::*;
    use LifecycleEvent as E;
    const TABLE: [(DappState, LifecycleEvent, DappState); 6] = [
        (Init, E::Subscribed, Subscribed),
        (Subscribed, E::Started, Running),
        (Running, E::ErrorThreshold, Degraded),
        (Degraded, E::Recovered, Running),
        (Running, E::Stop, Stopped),
        (Degraded, E::Stop, Stopped),
    ];
    TABLE.iter().find(|(f, e, _)| *f == from && *e == event).map(|(_, _, to)| *to)
}

pub fn any_state() -> impl Strategy<Value = DappState> {
    use DappState::*;
    prop::sample::select(vec![Init, Subscribed, Running, Degraded, Stopped])
}

pub fn any_event() -> impl Strategy<Value = LifecycleEvent> {
    use LifecycleEvent::*;
    prop::sample::select(vec![Subscribed, Started, ErrorThreshold, Recovered, Stop])
}

/// Applies `events` from `start` and compares every step with the table.
pub fn check_lifecycle(start: DappState, events: Vec<LifecycleEvent>) -> Result<(), TestCaseError> {
    let mut state = start;
    for e in events {
        match (state.apply(e), transition_table(state, e)) {
            (Ok(next), Some(expected)) => {
                prop_assert_eq!(next, expected);
                state = next;
            }
            (Err(RuntimeError::IllegalTransition { from, event }), None) => {
                prop_assert_eq!(from, state);
                prop_assert_eq!(event, e);
            }
            (got, want) => prop_assert!(false, "{:?} --{:?}--> {:?}, table says {:?}", state, e, got, want),
        }
    }
    Ok(())
}
