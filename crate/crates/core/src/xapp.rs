//! Network-level sensing xApp: fuses per-site range reports into 2-D
//! positions and maintains a single alpha-beta track.
//!
//! Reports are gated on arrival, bucketed into fixed time windows and fused
//! once a window closes. Within a window each site contributes the mean of
//! its range reports, computed over values sorted by magnitude, so the fused
//! position does not depend on report arrival order.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::e3::{DetectionReport, E3Message, Payload, ReportPayload};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum XappError {
    #[error("report from unregistered site {0}")]
    UnknownSite(String),
    #[error("site {0} registered twice")]
    DuplicateSite(String),
    #[error("sites {0} and {1} share a position")]
    CoincidentSites(String, String),
    #[error("raw {0} frames are not accepted on the report path")]
    RawDataRejected(&'static str),
    #[error("sites are collinear")]
    DegenerateGeometry,
    #[error("need ranges from at least 3 distinct sites, got {0}")]
    TooFewSites(usize),
    #[error("Gauss-Newton did not converge in {iterations} iterations (last step {last_step_m} m)")]
    NoConvergence { iterations: usize, last_step_m: f64 },
    #[error("timestamp {got_ns} ns does not follow {last_ns} ns")]
    NonMonotoneTime { last_ns: u64, got_ns: u64 },
    #[error("invalid xApp parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteGeometry {
    pub site_id: String,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XappConfig {
    pub window_ns: u64,
    pub max_range_m: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Largest accepted distance between a fused position and the track prediction.
    pub gate_m: f64,
    pub max_iterations: usize,
    pub tolerance_m: f64,
}

impl Default for XappConfig {
    fn default() -> Self {
        Self {
            window_ns: 100_000_000,
            max_range_m: 10_000.0,
            alpha: 0.5,
            beta: 0.1,
            gate_m: 50.0,
            max_iterations: 50,
            tolerance_m: 1e-6,
        }
    }
}

impl XappConfig {
    pub fn validate(&self) -> Result<(), XappError> {
        let bad = |field, reason: &str| {
            Err(XappError::Invalid {
                field,
                reason: reason.into(),
            })
        };
        if self.window_ns == 0 {
            return bad("window_ns", "must be positive");
        }
        if !(self.max_range_m > 0.0) {
            return bad("max_range_m", "must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha", "must be in (0, 1]");
        }
        if !(self.beta >= 0.0 && self.beta < 2.0) {
            return bad("beta", "must be in [0, 2)");
        }
        if !(self.gate_m > 0.0) {
            return bad("gate_m", "must be positive");
        }
        if self.max_iterations == 0 || !(self.tolerance_m > 0.0) {
            return bad("tolerance_m", "solver limits must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub position: [f64; 2],
    /// RMS of the range residuals at the solution.
    pub residual_m: f64,
    pub iterations: usize,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn rms_residual(p: [f64; 2], anchors: &[([f64; 2], f64)]) -> f64 {
    let ss: f64 = anchors.iter().map(|&(s, r)| (dist(p, s) - r).powi(2)).sum();
    (ss / anchors.len() as f64).sqrt()
}

/// True when every anchor lies on the line through the two most distant ones.
fn collinear(anchors: &[([f64; 2], f64)]) -> bool {
    let mut best = (0, 0, 0.0);
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            let d = dist(anchors[i].0, anchors[j].0);
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    let (a, b, span) = best;
    if span == 0.0 {
        return true;
    }
    let (pa, pb) = (anchors[a].0, anchors[b].0);
    anchors.iter().all(|&(p, _)| {
        let cross = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
        (cross / span).abs() <= 1e-9 * span
    })
}

/// Closed-form start point: differencing each squared range equation against
/// the first one gives a linear system in the position.
fn linearized_start(anchors: &[([f64; 2], f64)]) -> Option<[f64; 2]> {
    let (s0, r0) = anchors[0];
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(s, r) in &anchors[1..] {
        let (gx, gy) = (2.0 * (s[0] - s0[0]), 2.0 * (s[1] - s0[1]));
        let h = r0 * r0 - r * r + s[0] * s[0] + s[1] * s[1] - s0[0] * s0[0] - s0[1] * s0[1];
        a11 += gx * gx;
        a12 += gx * gy;
        a22 += gy * gy;
        b1 += gx * h;
        b2 += gy * h;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-12 * (a11 + a22).powi(2) {
        return None;
    }
    Some([(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det])
}

/// Nonlinear least-squares position from (site position, range) pairs.
/// Gauss-Newton starts from the linearized solution, or from the site
/// centroid when that is unavailable.
pub fn trilaterate(anchors: &[([f64; 2], f64)], config: &XappConfig) -> Result<Fix, XappError> {
    if anchors.len() < 3 {
        return Err(XappError::TooFewSites(anchors.len()));
    }
    if collinear(anchors) {
        return Err(XappError::DegenerateGeometry);
    }
    let n = anchors.len() as f64;
    let mut p = linearized_start(anchors).filter(|p| p.iter().all(|v| v.is_finite())).unwrap_or([
        anchors.iter().map(|a| a.0[0]).sum::<f64>() / n,
        anchors.iter().map(|a| a.0[1]).sum::<f64>() / n,
    ]);
    let mut last_step = f64::INFINITY;
    for it in 1..=config.max_iterations {
        // Normal equations JᵀJ δ = -Jᵀr with J rows the unit vectors site→p.
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(s, r) in anchors {
            let d = dist(p, s).max(1e-12);
            let (ux, uy) = ((p[0] - s[0]) / d, (p[1] - s[1]) / d);
            let res = d - r;
            a11 += ux * ux;
            a12 += ux * uy;
            a22 += uy * uy;
            b1 -= ux * res;
            b2 -= uy * res;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < 1e-12 * (a11 + a22).powi(2) {
            return Err(XappError::DegenerateGeometry);
        }
        let dx = (a22 * b1 - a12 * b2) / det;
        let dy = (a11 * b2 - a12 * b1) / det;
        p = [p[0] + dx, p[1] + dy];
        last_step = dx.hypot(dy);
        if last_step < config.tolerance_m {
            return Ok(Fix {
                position: p,
                residual_m: rms_residual(p, anchors),
                iterations: it,
            });
        }
    }
    Err(XappError::NoConvergence {
        iterations: config.max_iterations,
        last_step_m: last_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedTrack {
    pub track_id: u32,
    pub position_m: [f64; 2],
    pub velocity_mps: [f64; 2],
    pub last_update_ns: u64,
    pub residual_m: f64,
}

impl FusedTrack {
    pub fn start(track_id: u32, fix: &Fix, timestamp_ns: u64) -> Self {
        Self {
            track_id,
            position_m: fix.position,
            velocity_mps: [0.0, 0.0],
            last_update_ns: timestamp_ns,
            residual_m: fix.residual_m,
        }
    }

    pub fn predict(&self, timestamp_ns: u64) -> [f64; 2] {
        let dt = timestamp_ns.saturating_sub(self.last_update_ns) as f64 * 1e-9;
        [
            self.position_m[0] + self.velocity_mps[0] * dt,
            self.position_m[1] + self.velocity_mps[1] * dt,
        ]
    }
}

/// Alpha-beta update of a track with a new position measurement.
pub fn update_track(
    track: &FusedTrack,
    measured: [f64; 2],
    residual_m: f64,
    timestamp_ns: u64,
    alpha: f64,
    beta: f64,
) -> Result<FusedTrack, XappError> {
    if timestamp_ns <= track.last_update_ns {
        return Err(XappError::NonMonotoneTime {
            last_ns: track.last_update_ns,
            got_ns: timestamp_ns,
        });
    }
    let dt = (timestamp_ns - track.last_update_ns) as f64 * 1e-9;
    let pred = track.predict(timestamp_ns);
    let mut out = *track;
    for i in 0..2 {
        let innovation = measured[i] - pred[i];
        out.position_m[i] = pred[i] + alpha * innovation;
        out.velocity_mps[i] = track.velocity_mps[i] + beta / dt * innovation;
    }
    out.last_update_ns = timestamp_ns;
    out.residual_m = residual_m;
    Ok(out)
}

/// Outcome of one closed fusion window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum WindowOutcome {
    Updated { track: FusedTrack, sites: usize },
    Gated { position: [f64; 2], innovation_m: f64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window_index: u64,
    pub window_end_ns: u64,
    pub outcome: WindowOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Buffered,
    /// Range outside [0, max_range]; discarded.
    Gated,
    /// Not a range report; nothing to fuse.
    Ignored,
}

#[derive(Debug, Clone)]
pub struct SensingXapp {
    config: XappConfig,
    sites: BTreeMap<String, [f64; 2]>,
    windows: BTreeMap<u64, BTreeMap<String, Vec<f64>>>,
    track: Option<FusedTrack>,
    next_window: u64,
    gated_reports: u64,
}

impl SensingXapp {
    pub fn new(config: XappConfig, geometry: &[SiteGeometry]) -> Result<Self, XappError> {
        config.validate()?;
        let mut sites = BTreeMap::new();
        for g in geometry {
            if let Some((other, _)) = sites.iter().find(|(_, &p)| p == g.position) {
                return Err(XappError::CoincidentSites(String::clone(other), g.site_id.clone()));
            }
            if sites.insert(g.site_id.clone(), g.position).is_some() {
                return Err(XappError::DuplicateSite(g.site_id.clone()));
            }
        }
        Ok(Self {
            config,
            sites,
            windows: BTreeMap::new(),
            track: None,
            next_window: 0,
            gated_reports: 0,
        })
    }

    pub fn track(&self) -> Option<&FusedTrack> {
        self.track.as_ref()
    }

    pub fn gated_reports(&self) -> u64 {
        self.gated_reports
    }

    pub fn ingest(&mut self, report: &DetectionReport) -> Result<Ingest, XappError> {
        if !self.sites.contains_key(&report.site_id) {
            return Err(XappError::UnknownSite(report.site_id.clone()));
        }
        let range = match &report.payload {
            ReportPayload::Range(e) => e.range_m,
            _ => return Ok(Ingest::Ignored),
        };
        let window = report.timestamp_ns / self.config.window_ns;
        if !(range.is_finite() && (0.0..=self.config.max_range_m).contains(&range)) || window < self.next_window {
            self.gated_reports += 1;
            return Ok(Ingest::Gated);
        }
        self.windows
            .entry(window)
            .or_default()
            .entry(report.site_id.clone())
            .or_default()
            .push(range);
        Ok(Ingest::Buffered)
    }

    /// Accepts E3 Report frames only.
    pub fn ingest_frame(&mut self, msg: &E3Message) -> Result<Ingest, XappError> {
        match &msg.payload {
            Payload::Report(r) => self.ingest(r),
            Payload::IqGrid(_) => Err(XappError::RawDataRejected("I/Q")),
            Payload::CirFrame(_) => Err(XappError::RawDataRejected("CIR")),
            _ => Ok(Ingest::Ignored),
        }
    }

    /// Fuses every window that ends at or before `now_ns`.
    pub fn flush(&mut self, now_ns: u64) -> Vec<WindowResult> {
        let w = self.config.window_ns;
        let mut out = Vec::new();
        while (self.next_window + 1) * w <= now_ns {
            let idx = self.next_window;
            self.next_window += 1;
            let Some(buffered) = self.windows.remove(&idx) else {
                continue;
            };
            let end = (idx + 1) * w;
            out.push(WindowResult {
                window_index: idx,
                window_end_ns: end,
                outcome: self.fuse_window(&buffered, end),
            });
        }
        out
    }

    fn fuse_window(&mut self, buffered: &BTreeMap<String, Vec<f64>>, end_ns: u64) -> WindowOutcome {
        let anchors: Vec<([f64; 2], f64)> = buffered
            .iter()
            .map(|(site, ranges)| {
                let mut r = ranges.clone();
                r.sort_by(f64::total_cmp);
                (self.sites[site], r.iter().sum::<f64>() / r.len() as f64)
            })
            .collect();
        let fix = match trilaterate(&anchors, &self.config) {
            Ok(f) => f,
            Err(e) => return WindowOutcome::Skipped { reason: e.to_string() },
        };
        let track = match &self.track {
            None => FusedTrack::start(1, &fix, end_ns),
            Some(t) => {
                let innovation = dist(t.predict(end_ns), fix.position);
                if innovation > self.config.gate_m {
                    return WindowOutcome::Gated {
                        position: fix.position,
                        innovation_m: innovation,
                    };
                }
                match update_track(t, fix.position, fix.residual_m, end_ns, self.config.alpha, self.config.beta) {
                    Ok(t) => t,
                    Err(e) => return WindowOutcome::Skipped { reason: e.to_string() },
                }
            }
        };
        self.track = Some(track);
        WindowOutcome::Updated {
            track,
            sites: anchors.len(),
        }
    }
}

pub const TRACK_CSV_HEADER: [&str; 7] = ["t", "track_id", "x", "y", "vx", "vy", "residual"];

/// Track updates as CSV, `t` in seconds.
pub fn write_tracks_csv<W: Write>(tracks: &[FusedTrack], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACK_CSV_HEADER)?;
    for t in tracks {
        w.write_record([
            (t.last_update_ns as f64 * 1e-9).to_string(),
            t.track_id.to_string(),
            t.position_m[0].to_string(),
            t.position_m[1].to_string(),
            t.velocity_mps[0].to_string(),
            t.velocity_mps[1].to_string(),
            t.residual_m.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
