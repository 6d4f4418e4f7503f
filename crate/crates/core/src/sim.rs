//! Experiment drivers: the CRLB overhead sweep, the ranging error CDF
//! Monte Carlo, and the multi-site end-to-end simulation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crlb::{calibrate_gain, run_sweep, CrlbPoint};
use crate::e3::{measure_rate, CirFrame, DetectionReport, Payload, StreamKind, StreamStats, Subscription};
use crate::estimators::{music_range, peak_detect_range, CdfTable, ErrorCdf};
use crate::orchestrator::{write_json_lines, ActionRecord, DeployStatus, DeploymentReport, MatchPlan, Orchestrator};
use crate::runtime::{DappKpi, DappState, FrameCounters, GroundTruth, Runtime, RuntimeError};
use crate::scenario::{ConfigError, CrlbSweepConfig, RangingCdfConfig, SimConfig, TargetTrajectory};
use crate::waveform::{seeded_rng, synth_cir_snapshots, OfdmConfig};
use crate::xapp::{write_tracks_csv, FusedTrack, SensingXapp, WindowOutcome, WindowResult};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{component} failed to start: {reason}")]
    Startup { component: String, reason: String },
    #[error("simulation failed: {0}")]
    Runtime(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

fn startup(component: impl Into<String>, reason: impl ToString) -> SimError {
    SimError::Startup {
        component: component.into(),
        reason: reason.to_string(),
    }
}

fn runtime_err(e: impl ToString) -> SimError {
    SimError::Runtime(e.to_string())
}

fn config_err(field: &str, e: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: e.to_string(),
    }
}

/// Bound curves over the configured sweep, sorted by overhead.
pub fn crlb_sweep(cfg: &CrlbSweepConfig) -> Result<Vec<CrlbPoint>, ConfigError> {
    cfg.sweep.validate().map_err(|e| config_err("sweep", e))?;
    let (bandwidth_hz, slot_s) = cfg.sweep.point(0);
    let c = cfg.carrier;
    let base = OfdmConfig::new(c.carrier_freq_hz, c.subcarrier_spacing_hz, c.cp_overhead, bandwidth_hz, slot_s)
        .map_err(|e| config_err("carrier", e))?;
    let budget = match cfg.calibration.anchor_rmse_range_m {
        Some(anchor) => {
            let kappa = calibrate_gain(&cfg.link_budget, &base, &cfg.target, anchor)
                .map_err(|e| config_err("calibration", e))?;
            cfg.link_budget.with_gain(kappa)
        }
        None => cfg.link_budget,
    };
    run_sweep(&cfg.sweep, &budget, &base, &cfg.target).map_err(|e| config_err("sweep", e))
}

/// Absolute range errors of both estimators for every snapshot count.
/// Every trial draws `max(snapshot_counts)` snapshots and each count uses
/// a prefix of them, so the curves are paired trial by trial.
pub fn ranging_cdf(cfg: &RangingCdfConfig) -> Result<CdfTable, SimError> {
    cfg.validate()?;
    let scenario = cfg.channel.scenario()?;
    let truth = scenario.truth_range_m();
    let longest = *cfg.snapshot_counts.iter().max().expect("validated non-empty");
    let mut rng = seeded_rng(cfg.seed);
    let n = cfg.snapshot_counts.len();
    let mut peak = vec![Vec::with_capacity(cfg.trials); n];
    let mut subspace = vec![Vec::with_capacity(cfg.trials); n];
    for _ in 0..cfg.trials {
        let snaps = scenario.snapshots(longest, rng.next_u64()).map_err(runtime_err)?;
        for (i, &m) in cfg.snapshot_counts.iter().enumerate() {
            let p = peak_detect_range(&snaps[..m]).map_err(runtime_err)?;
            let s = music_range(&snaps[..m], &cfg.music).map_err(runtime_err)?;
            peak[i].push((p.range_m - truth).abs());
            subspace[i].push((s.range_m - truth).abs());
        }
    }
    let mut table = CdfTable::default();
    for (prefix, columns) in [("peak", peak), ("subspace", subspace)] {
        for (&m, errors) in cfg.snapshot_counts.iter().zip(columns) {
            table.push(format!("{prefix}_m{m}"), ErrorCdf::from_errors(errors).map_err(runtime_err)?);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub site_id: String,
    pub window_index: u64,
    pub injected: bool,
    #[serde(flatten)]
    pub kpi: DappKpi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub site_id: String,
    pub stream_id: u16,
    pub kind: StreamKind,
    #[serde(flatten)]
    pub stats: StreamStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DappSummary {
    pub site_id: String,
    pub dapp_id: String,
    pub model_version: String,
    pub final_state: DappState,
    #[serde(flatten)]
    pub counters: FrameCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub plan: MatchPlan,
    pub deployment: DeploymentReport,
    pub reports: Vec<DetectionReport>,
    pub windows: Vec<WindowResult>,
    pub kpis: Vec<KpiRecord>,
    pub actions: Vec<ActionRecord>,
    pub streams: Vec<StreamRecord>,
    pub dapps: Vec<DappSummary>,
    pub target: TargetTrajectory,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl SimOutcome {
    pub fn tracks(&self) -> Vec<FusedTrack> {
        self.windows
            .iter()
            .filter_map(|w| match &w.outcome {
                WindowOutcome::Updated { track, .. } => Some(*track),
                _ => None,
            })
            .collect()
    }

    /// Distance between each fused track update and the true target position
    /// at the update time.
    pub fn position_errors_m(&self) -> Vec<f64> {
        self.tracks()
            .iter()
            .map(|t| dist(t.position_m, self.target.at(t.last_update_ns as f64 * 1e-9)))
            .collect()
    }

    /// Writes every log into `dir`, which must exist.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SimError> {
        let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        let mut f = open("deployment.json")?;
        serde_json::to_writer_pretty(&mut f, &(&self.plan, &self.deployment)).map_err(std::io::Error::from)?;
        f.write_all(b"\n")?;
        f.flush()?;
        for (name, result) in [
            ("reports.jsonl", write_json_lines(&self.reports, open("reports.jsonl")?)),
            ("windows.jsonl", write_json_lines(&self.windows, open("windows.jsonl")?)),
            ("kpis.jsonl", write_json_lines(&self.kpis, open("kpis.jsonl")?)),
            ("actions.jsonl", write_json_lines(&self.actions, open("actions.jsonl")?)),
            ("dapps.jsonl", write_json_lines(&self.dapps, open("dapps.jsonl")?)),
        ] {
            result.map_err(|e| std::io::Error::new(e.kind(), format!("{name}: {e}")))?;
        }
        write_tracks_csv(&self.tracks(), open("tracks.csv")?).map_err(std::io::Error::from)?;
        let mut w = csv::Writer::from_writer(open("streams.csv")?);
        w.write_record([
            "site_id",
            "stream_id",
            "kind",
            "frames_sent",
            "bytes_sent",
            "dropped_frames",
            "payload_rate_mbps",
            "header_overhead_fraction",
        ])
        .map_err(std::io::Error::from)?;
        for s in &self.streams {
            w.write_record([
                s.site_id.clone(),
                s.stream_id.to_string(),
                serde_json::to_value(s.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                s.stats.frames_sent.to_string(),
                s.stats.bytes_sent.to_string(),
                s.stats.dropped_frames.to_string(),
                s.stats.payload_rate_mbps.to_string(),
                s.stats.header_overhead_fraction.to_string(),
            ])
            .map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct ActiveSite {
    site_id: String,
    position: [f64; 2],
    reports: Subscription,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    runtime: Runtime,
    orch: Orchestrator,
    xapp: SensingXapp,
    sites: Vec<ActiveSite>,
    windows: Vec<WindowResult>,
    kpis: Vec<KpiRecord>,
    actions: Vec<ActionRecord>,
    reports: Vec<DetectionReport>,
}

impl Sim<'_> {
    fn drain_reports(&mut self) -> Result<(), SimError> {
        for site in &self.sites {
            for frame in site.reports.drain() {
                let msg = frame.map_err(runtime_err)?;
                self.xapp.ingest_frame(&msg).map_err(runtime_err)?;
                if let Payload::Report(r) = msg.payload {
                    self.reports.push(r);
                }
            }
        }
        Ok(())
    }

    fn close_window(&mut self, index: u64) -> Result<(), SimError> {
        let w = self.cfg.xapp.window_ns;
        let (start, end) = (index * w, (index + 1) * w);
        self.windows.extend(self.xapp.flush(end));
        let truth_pos = self.cfg.target.at((start + end) as f64 * 0.5e-9);
        for site in &self.sites {
            let handle = self.orch.handle_at(&site.site_id).expect("active sites are deployed");
            let truth = GroundTruth::Range {
                range_m: dist(site.position, truth_pos),
            };
            let mut kpi = match self
                .runtime
                .report_kpis(handle, (start, end), Some(&truth), self.cfg.range_tolerance_m)
            {
                Ok(k) => k,
                Err(RuntimeError::NoData) => continue,
                Err(e) => return Err(runtime_err(e)),
            };
            let mut injected = false;
            for inj in self.cfg.kpi_injection.iter().filter(|i| {
                i.site_id == site.site_id && (i.start_window..i.end_window).contains(&index)
            }) {
                injected = true;
                if let Some(v) = inj.localization_rmse_m {
                    kpi.localization_rmse_m = Some(v);
                }
                if let Some(v) = inj.detection_probability {
                    kpi.detection_probability = Some(v);
                }
                if let Some(v) = inj.processing_latency_s {
                    kpi.processing_latency_s = v;
                }
            }
            if let Some(action) = self
                .orch
                .observe(&site.site_id, &kpi, &mut self.runtime)
                .map_err(runtime_err)?
            {
                self.actions.push(action);
            }
            self.kpis.push(KpiRecord {
                site_id: site.site_id.clone(),
                window_index: index,
                injected,
                kpi,
            });
        }
        Ok(())
    }
}

/// Boots every component, runs the SRS schedule for `duration_s` and shuts
/// down. Only complete KPI/fusion windows are evaluated.
pub fn run_sim(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let catalog = cfg.catalog()?;
    let scenario = cfg.channel.scenario()?;

    let mut runtime = Runtime::new();
    for s in &cfg.sites {
        runtime
            .add_site(s.profile())
            .map_err(|e| startup(format!("site {}", s.site_id), e))?;
    }
    let mut orch = Orchestrator::new(catalog, cfg.intent.clone(), cfg.hysteresis).map_err(|e| startup("orchestrator", e))?;
    let plan = orch.plan(&runtime);
    if plan.assignments.is_empty() {
        return Err(startup("orchestrator", "no site could be assigned a model"));
    }
    let deployment = orch.execute(&plan, &mut runtime);
    if let Some(f) = deployment.outcomes.iter().find(|o| o.status == DeployStatus::Failed) {
        return Err(startup(
            format!("dApp {} at site {}", f.model, f.site_id),
            f.error.clone().unwrap_or_default(),
        ));
    }
    let geometry: Vec<_> = cfg.sites.iter().map(|s| s.geometry()).collect();
    let xapp = SensingXapp::new(cfg.xapp, &geometry).map_err(|e| startup("xapp", e))?;
    let mut sites = Vec::new();
    for s in cfg.sites.iter().filter(|s| orch.handle_at(&s.site_id).is_some()) {
        let reports = runtime
            .hub_mut(&s.site_id)
            .and_then(|h| h.subscribe(StreamKind::Report, vec![]).map_err(RuntimeError::from))
            .map_err(|e| startup(format!("report stream at site {}", s.site_id), e))?;
        sites.push(ActiveSite {
            site_id: s.site_id.clone(),
            position: s.position,
            reports,
        });
    }

    let mut sim = Sim {
        cfg,
        runtime,
        orch,
        xapp,
        sites,
        windows: Vec::new(),
        kpis: Vec::new(),
        actions: Vec::new(),
        reports: Vec::new(),
    };

    let period_ns = (cfg.srs_period_s * 1e9).round() as u64;
    let duration_ns = (cfg.duration_s * 1e9).round() as u64;
    let window_ns = cfg.xapp.window_ns;
    let mut rng = seeded_rng(cfg.seed);
    let mut next_window = 0u64;
    let mut frame = 0u64;
    loop {
        let t = frame * period_ns;
        if t >= duration_ns {
            break;
        }
        while (next_window + 1) * window_ns <= t {
            sim.close_window(next_window)?;
            next_window += 1;
        }
        let target = cfg.target.at(t as f64 * 1e-9);
        for i in 0..sim.sites.len() {
            let d = dist(sim.sites[i].position, target);
            let profile = scenario.profile.with_first_delay(d / SPEED_OF_LIGHT);
            let mut snap = synth_cir_snapshots(
                &profile,
                scenario.subcarriers,
                scenario.subcarrier_spacing_hz,
                1,
                scenario.los_snr,
                rng.next_u64(),
            )
            .map_err(runtime_err)?
            .remove(0);
            snap.snapshot_index = (frame % (u16::MAX as u64 + 1)) as usize;
            sim.runtime
                .publish(
                    &sim.sites[i].site_id,
                    StreamKind::Cir,
                    t,
                    &Payload::CirFrame(CirFrame::from_snapshot(&snap)),
                )
                .map_err(runtime_err)?;
        }
        sim.runtime.step_all().map_err(runtime_err)?;
        sim.drain_reports()?;
        frame += 1;
    }
    while (next_window + 1) * window_ns <= duration_ns {
        sim.close_window(next_window)?;
        next_window += 1;
    }

    let mut streams = Vec::new();
    for site in &sim.sites {
        let hub = sim.runtime.hub(&site.site_id).map_err(runtime_err)?;
        for (stream_id, kind, counter) in hub.streams() {
            streams.push(StreamRecord {
                site_id: site.site_id.clone(),
                stream_id,
                kind,
                stats: measure_rate(&counter, cfg.duration_s),
            });
        }
    }
    let handles: Vec<_> = sim.runtime.handles().collect();
    let mut dapps = Vec::new();
    for h in handles {
        if sim.runtime.state(h).map_err(runtime_err)?.is_active() {
            sim.runtime.stop(h).map_err(runtime_err)?;
        }
        let d = sim.runtime.descriptor(h).map_err(runtime_err)?;
        dapps.push(DappSummary {
            site_id: sim.runtime.site_of(h).map_err(runtime_err)?.to_string(),
            dapp_id: d.dapp_id.clone(),
            model_version: d.model_version.clone(),
            final_state: sim.runtime.state(h).map_err(runtime_err)?,
            counters: sim.runtime.counters(h).map_err(runtime_err)?,
        });
    }

    Ok(SimOutcome {
        plan,
        deployment,
        reports: sim.reports,
        windows: sim.windows,
        kpis: sim.kpis,
        actions: sim.actions,
        streams,
        dapps,
        target: cfg.target,
    })
}
