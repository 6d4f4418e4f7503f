//! Plug-and-play host for sensing dApps at simulated DU sites.
//!
//! Each site owns a [`DuHub`]. Deploying a dApp subscribes it to the site's
//! stream of its input kind and charges its compute cost to the site budget.
//! [`Runtime::step`] lets every active dApp drain its queue; dApps run on
//! separate worker threads and never share state. Reports go back out on the
//! site's `Report` stream for network-level consumers.

mod descriptor;
mod function;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptor::{
    DappDescriptor, DappFunction, DappHandle, DappState, LifecycleEvent, RuCapabilities, SiteProfile,
};
pub use function::{Detection, SensingFunction};

use crate::e3::{DetectionReport, DuHub, E3Error, Payload, ReportPayload, StreamKind, Subscription};

/// Consecutive failed frames before a dApp is marked degraded.
pub const DEFAULT_DEGRADE_AFTER: u32 = 5;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("site {site_id}: need {need} compute units, {available} available")]
    InsufficientCompute { site_id: String, need: f64, available: f64 },
    #[error("site {site_id} does not offer a {kind:?} stream")]
    StreamUnavailable { site_id: String, kind: StreamKind },
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("site {0} already registered")]
    DuplicateSite(String),
    #[error("invalid site {site_id}: {reason}")]
    InvalidSite { site_id: String, reason: String },
    #[error("unknown dApp {0}")]
    UnknownDapp(DappHandle),
    #[error("invalid descriptor field {field}: {reason}")]
    InvalidDescriptor { field: &'static str, reason: String },
    #[error("illegal transition from {from:?} on {event:?}")]
    IllegalTransition { from: DappState, event: LifecycleEvent },
    #[error("no reports in the requested window")]
    NoData,
    #[error(transparent)]
    E3(#[from] E3Error),
}

/// An emitted report plus the simulation-clock span of the input it used.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub report: DetectionReport,
    pub latency_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounters {
    pub frames_in: u64,
    pub frames_processed: u64,
    pub frames_dropped: u64,
    pub errors: u64,
}

struct Instance {
    site_id: String,
    descriptor: DappDescriptor,
    state: DappState,
    function: Box<dyn SensingFunction>,
    subscription: Subscription,
    processed: u64,
    errors: u64,
    consecutive_errors: u32,
    span_start_ns: Option<u64>,
    reports: Vec<ReportRecord>,
    /// Frames and drops already counted from subscriptions closed by a replace.
    retired_in: u64,
    retired_dropped: u64,
}

impl Instance {
    fn counters(&self) -> FrameCounters {
        FrameCounters {
            frames_in: self.retired_in + self.subscription.delivered(),
            frames_processed: self.processed,
            frames_dropped: self.retired_dropped + self.subscription.dropped(),
            errors: self.errors,
        }
    }

    /// Handles every queued frame; returns the reports produced, in order.
    fn drain(&mut self, degrade_after: u32) -> Vec<DetectionReport> {
        let mut out = Vec::new();
        while let Some(frame) = self.subscription.try_recv() {
            self.processed += 1;
            let (timestamp_ns, result) = match frame {
                Ok(msg) => {
                    let ts = msg.header.timestamp_ns;
                    self.span_start_ns.get_or_insert(ts);
                    let f = &mut self.function;
                    let r = catch_unwind(AssertUnwindSafe(|| f.process(&msg)))
                        .unwrap_or_else(|p| Err(panic_text(p.as_ref())));
                    (ts, r)
                }
                Err(e) => (0, Err(format!("undecodable frame: {e}"))),
            };
            let detection = match result {
                Ok(None) => continue,
                Ok(Some(d)) => {
                    self.consecutive_errors = 0;
                    if self.state == DappState::Degraded {
                        self.state = self.state.apply(LifecycleEvent::Recovered).expect("degraded recovers");
                    }
                    d
                }
                Err(reason) => {
                    self.errors += 1;
                    self.consecutive_errors += 1;
                    if self.consecutive_errors >= degrade_after && self.state == DappState::Running {
                        self.state = self.state.apply(LifecycleEvent::ErrorThreshold).expect("running degrades");
                    }
                    Detection {
                        payload: ReportPayload::Error { reason },
                        confidence: 0.0,
                    }
                }
            };
            let start = self.span_start_ns.take().unwrap_or(timestamp_ns);
            let report = DetectionReport {
                dapp_id: self.descriptor.dapp_id.clone(),
                site_id: self.site_id.clone(),
                model_version: self.descriptor.model_version.clone(),
                timestamp_ns,
                confidence: detection.confidence.clamp(0.0, 1.0),
                payload: detection.payload,
            };
            self.reports.push(ReportRecord {
                report: report.clone(),
                latency_s: timestamp_ns.saturating_sub(start) as f64 * 1e-9,
            });
            out.push(report);
        }
        out
    }
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> String {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic payload".into());
    format!("dApp panicked: {msg}")
}

struct Site {
    profile: SiteProfile,
    hub: DuHub,
}

pub struct Runtime {
    sites: BTreeMap<String, Site>,
    dapps: BTreeMap<DappHandle, Instance>,
    next_handle: u32,
    degrade_after: u32,
    parallel: bool,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new()
    }
}

impl Runtime {
    pub fn new() -> Self {
        Self {
            sites: BTreeMap::new(),
            dapps: BTreeMap::new(),
            next_handle: 1,
            degrade_after: DEFAULT_DEGRADE_AFTER,
            parallel: true,
        }
    }

    pub fn with_degrade_after(mut self, errors: u32) -> Self {
        self.degrade_after = errors.max(1);
        self
    }

    /// Run dApps of a site one after another on the calling thread.
    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn add_site(&mut self, profile: SiteProfile) -> Result<(), RuntimeError> {
        profile.validate()?;
        if self.sites.contains_key(&profile.site_id) {
            return Err(RuntimeError::DuplicateSite(profile.site_id));
        }
        let kinds = profile
            .streams
            .iter()
            .copied()
            .chain([StreamKind::Report, StreamKind::Kpm]);
        let hub = DuHub::new(kinds);
        self.sites.insert(profile.site_id.clone(), Site { profile, hub });
        Ok(())
    }

    pub fn site_ids(&self) -> impl Iterator<Item = &str> {
        self.sites.keys().map(String::as_str)
    }

    pub fn site_profile(&self, site_id: &str) -> Option<&SiteProfile> {
        self.sites.get(site_id).map(|s| &s.profile)
    }

    pub fn hub(&self, site_id: &str) -> Result<&DuHub, RuntimeError> {
        self.sites
            .get(site_id)
            .map(|s| &s.hub)
            .ok_or_else(|| RuntimeError::UnknownSite(site_id.into()))
    }

    pub fn hub_mut(&mut self, site_id: &str) -> Result<&mut DuHub, RuntimeError> {
        self.sites
            .get_mut(site_id)
            .map(|s| &mut s.hub)
            .ok_or_else(|| RuntimeError::UnknownSite(site_id.into()))
    }

    /// Publishes one DU frame on a site stream.
    pub fn publish(
        &mut self,
        site_id: &str,
        kind: StreamKind,
        timestamp_ns: u64,
        payload: &Payload,
    ) -> Result<usize, RuntimeError> {
        Ok(self.hub_mut(site_id)?.publish(kind, timestamp_ns, payload)?)
    }

    /// Compute charged to a site by its active dApps.
    pub fn used_compute(&self, site_id: &str) -> f64 {
        self.dapps
            .values()
            .filter(|d| d.site_id == site_id && d.state.is_active())
            .map(|d| d.descriptor.compute_cost)
            .sum()
    }

    pub fn remaining_compute(&self, site_id: &str) -> Result<f64, RuntimeError> {
        let site = self
            .sites
            .get(site_id)
            .ok_or_else(|| RuntimeError::UnknownSite(site_id.into()))?;
        Ok(site.profile.compute_budget - self.used_compute(site_id))
    }

    fn check_admission(&self, site_id: &str, descriptor: &DappDescriptor, freed: f64) -> Result<(), RuntimeError> {
        descriptor.validate()?;
        let site = self
            .sites
            .get(site_id)
            .ok_or_else(|| RuntimeError::UnknownSite(site_id.into()))?;
        if !site.profile.streams.contains(&descriptor.input_kind) {
            return Err(RuntimeError::StreamUnavailable {
                site_id: site_id.into(),
                kind: descriptor.input_kind,
            });
        }
        let available = site.profile.compute_budget - self.used_compute(site_id) + freed;
        if descriptor.compute_cost > available {
            return Err(RuntimeError::InsufficientCompute {
                site_id: site_id.into(),
                need: descriptor.compute_cost,
                available,
            });
        }
        Ok(())
    }

    /// Deploys a built-in dApp.
    pub fn deploy(&mut self, descriptor: DappDescriptor, site_id: &str) -> Result<DappHandle, RuntimeError> {
        self.check_admission(site_id, &descriptor, 0.0)?;
        let scale = self.sites[site_id].hub.iq_scale();
        let function = function::build(&descriptor.function, scale);
        self.install(descriptor, site_id, function)
    }

    /// Deploys a dApp backed by a caller-supplied sensing function. The
    /// descriptor still drives admission and reporting metadata.
    pub fn deploy_plugin(
        &mut self,
        descriptor: DappDescriptor,
        site_id: &str,
        function: Box<dyn SensingFunction>,
    ) -> Result<DappHandle, RuntimeError> {
        self.check_admission(site_id, &descriptor, 0.0)?;
        self.install(descriptor, site_id, function)
    }

    fn install(
        &mut self,
        descriptor: DappDescriptor,
        site_id: &str,
        function: Box<dyn SensingFunction>,
    ) -> Result<DappHandle, RuntimeError> {
        let mut state = DappState::Init;
        let site = self.sites.get_mut(site_id).expect("admission checked the site");
        let subscription = site.hub.subscribe(
            descriptor.input_kind,
            vec![("compute_cost".into(), descriptor.compute_cost)],
        )?;
        state = state.apply(LifecycleEvent::Subscribed)?;
        state = state.apply(LifecycleEvent::Started)?;
        let handle = DappHandle(self.next_handle);
        self.next_handle += 1;
        self.dapps.insert(
            handle,
            Instance {
                site_id: site_id.into(),
                descriptor,
                state,
                function,
                subscription,
                processed: 0,
                errors: 0,
                consecutive_errors: 0,
                span_start_ns: None,
                reports: Vec::new(),
                retired_in: 0,
                retired_dropped: 0,
            },
        );
        Ok(handle)
    }

    /// Swaps the algorithm behind a running dApp. The input subscription is
    /// kept when the input kind is unchanged, so no frame is lost or seen
    /// twice. On error the old version keeps running untouched.
    pub fn replace(&mut self, handle: DappHandle, descriptor: DappDescriptor) -> Result<DappHandle, RuntimeError> {
        let scale = {
            let inst = self.dapps.get(&handle).ok_or(RuntimeError::UnknownDapp(handle))?;
            self.sites[&inst.site_id].hub.iq_scale()
        };
        let function = function::build(&descriptor.function, scale);
        self.replace_with(handle, descriptor, function)
    }

    pub fn replace_with(
        &mut self,
        handle: DappHandle,
        descriptor: DappDescriptor,
        function: Box<dyn SensingFunction>,
    ) -> Result<DappHandle, RuntimeError> {
        let inst = self.dapps.get(&handle).ok_or(RuntimeError::UnknownDapp(handle))?;
        if !inst.state.is_active() {
            return Err(RuntimeError::IllegalTransition {
                from: inst.state,
                event: LifecycleEvent::Started,
            });
        }
        let site_id = inst.site_id.clone();
        self.check_admission(&site_id, &descriptor, inst.descriptor.compute_cost)?;
        let new_sub = if descriptor.input_kind != inst.descriptor.input_kind {
            Some(self.sites.get_mut(&site_id).expect("known site").hub.subscribe(descriptor.input_kind, vec![])?)
        } else {
            None
        };
        let inst = self.dapps.get_mut(&handle).expect("checked above");
        if let Some(sub) = new_sub {
            let old = std::mem::replace(&mut inst.subscription, sub);
            // Frames still queued on the old stream are counted as dropped.
            inst.retired_in += old.delivered();
            inst.retired_dropped += old.dropped() + old.pending() as u64;
            self.sites
                .get_mut(&site_id)
                .expect("known site")
                .hub
                .unsubscribe(old.stream_id())?;
        }
        inst.descriptor = descriptor;
        inst.function = function;
        inst.consecutive_errors = 0;
        inst.span_start_ns = None;
        if inst.state == DappState::Degraded {
            inst.state = inst.state.apply(LifecycleEvent::Recovered)?;
        }
        Ok(handle)
    }

    pub fn stop(&mut self, handle: DappHandle) -> Result<(), RuntimeError> {
        let inst = self.dapps.get_mut(&handle).ok_or(RuntimeError::UnknownDapp(handle))?;
        inst.state = inst.state.apply(LifecycleEvent::Stop)?;
        let stream_id = inst.subscription.stream_id();
        let pending = inst.subscription.pending() as u64;
        inst.retired_dropped += pending;
        // Discard frames that will never be processed.
        inst.subscription.drain();
        let site = self.sites.get_mut(&inst.site_id).expect("dApp site exists");
        site.hub.unsubscribe(stream_id)?;
        Ok(())
    }

    /// Processes every queued frame for the active dApps of one site and
    /// publishes the resulting reports on the site's `Report` stream.
    /// Reports are returned ordered by dApp handle, then emission order.
    pub fn step(&mut self, site_id: &str) -> Result<Vec<DetectionReport>, RuntimeError> {
        if !self.sites.contains_key(site_id) {
            return Err(RuntimeError::UnknownSite(site_id.into()));
        }
        let degrade_after = self.degrade_after;
        let mut active: Vec<(&DappHandle, &mut Instance)> = self
            .dapps
            .iter_mut()
            .filter(|(_, d)| d.site_id == site_id && d.state.is_active())
            .collect();
        let batches: Vec<Vec<DetectionReport>> = if self.parallel && active.len() > 1 {
            std::thread::scope(|s| {
                let workers: Vec<_> = active
                    .iter_mut()
                    .map(|(_, inst)| s.spawn(|| inst.drain(degrade_after)))
                    .collect();
                workers
                    .into_iter()
                    .map(|w| w.join().expect("dApp panics are caught inside the worker"))
                    .collect()
            })
        } else {
            active.iter_mut().map(|(_, inst)| inst.drain(degrade_after)).collect()
        };
        let reports: Vec<DetectionReport> = batches.into_iter().flatten().collect();
        let hub = &mut self.sites.get_mut(site_id).expect("checked above").hub;
        for r in &reports {
            hub.publish(StreamKind::Report, r.timestamp_ns, &Payload::Report(r.clone()))?;
        }
        Ok(reports)
    }

    /// Steps every site in site-id order.
    pub fn step_all(&mut self) -> Result<Vec<DetectionReport>, RuntimeError> {
        let ids: Vec<String> = self.sites.keys().cloned().collect();
        let mut out = Vec::new();
        for id in ids {
            out.extend(self.step(&id)?);
        }
        Ok(out)
    }

    pub fn state(&self, handle: DappHandle) -> Result<DappState, RuntimeError> {
        Ok(self.instance(handle)?.state)
    }

    pub fn descriptor(&self, handle: DappHandle) -> Result<&DappDescriptor, RuntimeError> {
        Ok(&self.instance(handle)?.descriptor)
    }

    pub fn site_of(&self, handle: DappHandle) -> Result<&str, RuntimeError> {
        Ok(&self.instance(handle)?.site_id)
    }

    pub fn counters(&self, handle: DappHandle) -> Result<FrameCounters, RuntimeError> {
        Ok(self.instance(handle)?.counters())
    }

    pub fn reports(&self, handle: DappHandle) -> Result<&[ReportRecord], RuntimeError> {
        Ok(&self.instance(handle)?.reports)
    }

    pub fn handles(&self) -> impl Iterator<Item = DappHandle> + '_ {
        self.dapps.keys().copied()
    }

    pub fn handles_at(&self, site_id: &str) -> Vec<DappHandle> {
        self.dapps
            .iter()
            .filter(|(_, d)| d.site_id == site_id)
            .map(|(&h, _)| h)
            .collect()
    }

    fn instance(&self, handle: DappHandle) -> Result<&Instance, RuntimeError> {
        self.dapps.get(&handle).ok_or(RuntimeError::UnknownDapp(handle))
    }

    /// KPIs over reports with `window.0 <= timestamp < window.1`.
    pub fn report_kpis(
        &self,
        handle: DappHandle,
        window: (u64, u64),
        truth: Option<&GroundTruth>,
        range_tolerance_m: f64,
    ) -> Result<DappKpi, RuntimeError> {
        let inst = self.instance(handle)?;
        let in_window: Vec<&ReportRecord> = inst
            .reports
            .iter()
            .filter(|r| r.report.timestamp_ns >= window.0 && r.report.timestamp_ns < window.1)
            .collect();
        compute_kpi(&inst.descriptor.dapp_id, window, &in_window, truth, range_tolerance_m)
    }
}

/// Scenario truth a dApp's reports are scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Range { range_m: f64 },
    Occupancy { occupied: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DappKpi {
    pub dapp_id: String,
    pub window_start_ns: u64,
    pub window_end_ns: u64,
    pub reports: usize,
    pub error_reports: usize,
    pub detection_probability: Option<f64>,
    pub false_alarm_rate: Option<f64>,
    pub localization_rmse_m: Option<f64>,
    pub processing_latency_s: f64,
    pub report_rate_hz: f64,
}

fn compute_kpi(
    dapp_id: &str,
    window: (u64, u64),
    records: &[&ReportRecord],
    truth: Option<&GroundTruth>,
    tolerance_m: f64,
) -> Result<DappKpi, RuntimeError> {
    if records.is_empty() {
        return Err(RuntimeError::NoData);
    }
    let n = records.len();
    let errors = records
        .iter()
        .filter(|r| matches!(r.report.payload, ReportPayload::Error { .. }))
        .count();
    let span_s = window.1.saturating_sub(window.0) as f64 * 1e-9;
    let mut kpi = DappKpi {
        dapp_id: dapp_id.into(),
        window_start_ns: window.0,
        window_end_ns: window.1,
        reports: n,
        error_reports: errors,
        detection_probability: None,
        false_alarm_rate: None,
        localization_rmse_m: None,
        processing_latency_s: records.iter().map(|r| r.latency_s).sum::<f64>() / n as f64,
        report_rate_hz: if span_s > 0.0 { n as f64 / span_s } else { 0.0 },
    };
    match truth {
        Some(GroundTruth::Range { range_m }) => {
            let range_errors: Vec<f64> = records
                .iter()
                .filter_map(|r| match &r.report.payload {
                    ReportPayload::Range(e) => Some(e.range_m - range_m),
                    ReportPayload::DelayDoppler(e) => Some(e.range_m - range_m),
                    _ => None,
                })
                .collect();
            let hits = range_errors.iter().filter(|e| e.abs() <= tolerance_m).count();
            kpi.detection_probability = Some(hits as f64 / n as f64);
            kpi.false_alarm_rate = Some((range_errors.len() - hits) as f64 / n as f64);
            if !range_errors.is_empty() {
                let mse = range_errors.iter().map(|e| e * e).sum::<f64>() / range_errors.len() as f64;
                kpi.localization_rmse_m = Some(mse.sqrt());
            }
        }
        Some(GroundTruth::Occupancy { occupied }) => {
            let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
            for r in records {
                if let ReportPayload::BandOccupancy { occupied: flags } = &r.report.payload {
                    for (&truth, &flag) in occupied.iter().zip(flags) {
                        if truth {
                            pos += 1;
                            tp += usize::from(flag);
                        } else {
                            neg += 1;
                            fp += usize::from(flag);
                        }
                    }
                }
            }
            kpi.detection_probability = (pos > 0).then(|| tp as f64 / pos as f64);
            kpi.false_alarm_rate = (neg > 0).then(|| fp as f64 / neg as f64);
        }
        None => {}
    }
    Ok(kpi)
}

#[cfg(test)]
mod tests;
