//! Experiment configuration files.
//!
//! Every command reads one TOML file. A file may pull in others with a
//! top-level `include = ["base.toml", ...]` list, resolved relative to the
//! including file. Included files are merged in order and the including
//! file is merged last: tables merge key by key, any other value (arrays
//! included) is replaced wholesale.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::crlb::{LinkBudget, SweepSpec};
use crate::e3::StreamKind;
use crate::estimators::MusicSpec;
use crate::orchestrator::{Catalog, CatalogEntry, SensingIntent};
use crate::runtime::{RuCapabilities, SiteProfile};
use crate::waveform::{Fading, MultipathProfile, PathSpec, RadarTarget, RangingScenario};
use crate::xapp::{SiteGeometry, XappConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("include cycle through {0}")]
    IncludeCycle(PathBuf),
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

/// Merges `over` into `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn load_value(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Value, ConfigError> {
    let canonical = path.canonicalize().map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if stack.contains(&canonical) {
        return Err(ConfigError::IncludeCycle(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut own: Value = text.parse::<toml::Table>().map(Value::Table).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let includes = match own.as_table_mut().and_then(|t| t.remove("include")) {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                _ => Err(invalid("include", "entries must be strings")),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(invalid("include", "must be an array of paths")),
    };
    stack.push(canonical);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = Value::Table(toml::Table::new());
    for inc in includes {
        merge(&mut merged, load_value(&dir.join(inc), stack)?);
    }
    stack.pop();
    merge(&mut merged, own);
    Ok(merged)
}

/// Reads `path` with includes resolved and deserializes the merged document.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let value = load_value(path, &mut Vec::new())?;
    value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parses a single document without include support.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: PathBuf::from("<inline>"),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Carrier {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub cp_overhead: f64,
}

impl Default for Carrier {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 3.6e9,
            subcarrier_spacing_hz: 30e3,
            cp_overhead: 0.07,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// When set, the combined gain is chosen so the first sweep point has
    /// this range RMSE and `link_budget.combined_gain` is ignored.
    pub anchor_rmse_range_m: Option<f64>,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            anchor_rmse_range_m: Some(3.6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrlbSweepConfig {
    pub carrier: Carrier,
    pub target: RadarTarget,
    pub link_budget: LinkBudget,
    pub calibration: Calibration,
    pub sweep: SweepSpec,
}

impl Default for CrlbSweepConfig {
    fn default() -> Self {
        Self {
            carrier: Carrier::default(),
            target: RadarTarget::drone(),
            link_budget: LinkBudget::default(),
            calibration: Calibration::default(),
            sweep: SweepSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub delay_ns: f64,
    pub power_db: f64,
    /// Fixed phase in radians; complex-normal fading when absent.
    #[serde(default)]
    pub phase_rad: Option<f64>,
}

/// Multipath channel seen by an SRS receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub los_snr_db: f64,
    /// First entry is the line-of-sight path.
    pub paths: Vec<PathConfig>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let p = |delay_ns, power_db| PathConfig {
            delay_ns,
            power_db,
            phase_rad: None,
        };
        Self {
            subcarriers: 1024,
            subcarrier_spacing_hz: 30e3,
            los_snr_db: -10.0,
            paths: vec![p(60.0, -6.0), p(180.0, 0.0), p(320.0, -3.0), p(500.0, -8.0)],
        }
    }
}

impl ChannelConfig {
    pub fn profile(&self) -> Result<MultipathProfile, ConfigError> {
        let paths = self
            .paths
            .iter()
            .map(|p| PathSpec {
                delay_s: p.delay_ns * 1e-9,
                mean_power: db(p.power_db),
                fading: match p.phase_rad {
                    Some(phase_rad) => Fading::Fixed { phase_rad },
                    None => Fading::ComplexNormal,
                },
            })
            .collect();
        MultipathProfile::new(paths).map_err(|e| invalid("channel.paths", e.to_string()))
    }

    pub fn scenario(&self) -> Result<RangingScenario, ConfigError> {
        if !self.los_snr_db.is_finite() {
            return Err(invalid("channel.los_snr_db", "must be finite"));
        }
        Ok(RangingScenario {
            profile: self.profile()?,
            subcarriers: self.subcarriers,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            los_snr: db(self.los_snr_db),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangingCdfConfig {
    pub seed: u64,
    pub trials: usize,
    pub snapshot_counts: Vec<usize>,
    pub channel: ChannelConfig,
    pub music: MusicSpec,
}

impl Default for RangingCdfConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 500,
            snapshot_counts: vec![20, 60],
            channel: ChannelConfig::default(),
            music: MusicSpec::default(),
        }
    }
}

impl RangingCdfConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.snapshot_counts.is_empty() || self.snapshot_counts.contains(&0) {
            return Err(invalid("snapshot_counts", "need at least one positive count"));
        }
        let unique: BTreeSet<usize> = self.snapshot_counts.iter().copied().collect();
        if unique.len() != self.snapshot_counts.len() {
            return Err(invalid("snapshot_counts", "counts must be distinct"));
        }
        self.channel.scenario()?;
        self.music
            .validate(self.channel.subcarriers)
            .map_err(|e| invalid("music", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteConfig {
    pub site_id: String,
    pub position: [f64; 2],
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub ru: RuCapabilities,
    pub compute_budget: f64,
    #[serde(default = "default_streams")]
    pub streams: BTreeSet<StreamKind>,
}

fn default_streams() -> BTreeSet<StreamKind> {
    [StreamKind::Cir].into()
}

impl SiteConfig {
    pub fn profile(&self) -> SiteProfile {
        SiteProfile {
            site_id: self.site_id.clone(),
            tags: self.tags.clone(),
            ru: self.ru.clone(),
            compute_budget: self.compute_budget,
            streams: self.streams.clone(),
        }
    }

    pub fn geometry(&self) -> SiteGeometry {
        SiteGeometry {
            site_id: self.site_id.clone(),
            position: self.position,
        }
    }
}

/// Constant-velocity point target on the plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetTrajectory {
    pub position: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl TargetTrajectory {
    pub fn at(&self, t_s: f64) -> [f64; 2] {
        [
            self.position[0] + self.velocity[0] * t_s,
            self.position[1] + self.velocity[1] * t_s,
        ]
    }
}

/// Replaces measured KPIs of one site over a window range
/// `[start_window, end_window)` with scripted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpiInjection {
    pub site_id: String,
    pub start_window: u64,
    pub end_window: u64,
    #[serde(default)]
    pub localization_rmse_m: Option<f64>,
    #[serde(default)]
    pub detection_probability: Option<f64>,
    #[serde(default)]
    pub processing_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_srs_period")]
    pub srs_period_s: f64,
    #[serde(default = "default_hysteresis")]
    pub hysteresis: usize,
    /// Range error under which a report counts as a detection.
    #[serde(default = "default_tolerance")]
    pub range_tolerance_m: f64,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub xapp: XappConfig,
    pub sites: Vec<SiteConfig>,
    pub target: TargetTrajectory,
    #[serde(default)]
    pub models: Vec<CatalogEntry>,
    pub intent: SensingIntent,
    #[serde(default)]
    pub kpi_injection: Vec<KpiInjection>,
}

fn default_seed() -> u64 {
    1
}

fn default_srs_period() -> f64 {
    5e-3
}

fn default_hysteresis() -> usize {
    crate::orchestrator::DEFAULT_HYSTERESIS
}

fn default_tolerance() -> f64 {
    1.0
}

impl SimConfig {
    /// Checks field ranges and that every site and model reference resolves.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(invalid("duration_s", "must be finite and non-negative"));
        }
        if !(self.srs_period_s.is_finite() && self.srs_period_s >= 1e-6) {
            return Err(invalid("srs_period_s", "must be at least 1 us"));
        }
        if self.hysteresis == 0 {
            return Err(invalid("hysteresis", "must be at least 1"));
        }
        if !(self.range_tolerance_m > 0.0) {
            return Err(invalid("range_tolerance_m", "must be positive"));
        }
        self.channel.scenario()?;
        self.xapp.validate().map_err(|e| invalid("xapp", e.to_string()))?;
        if self.sites.is_empty() {
            return Err(invalid("sites", "need at least one site"));
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.sites.iter().enumerate() {
            if !ids.insert(s.site_id.as_str()) {
                return Err(invalid(format!("sites[{i}].site_id"), format!("duplicate id {}", s.site_id)));
            }
            if !s.position.iter().all(|c| c.is_finite()) {
                return Err(invalid(format!("sites[{i}].position"), "must be finite"));
            }
        }
        if !self.target.position.iter().chain(&self.target.velocity).all(|c| c.is_finite()) {
            return Err(invalid("target", "position and velocity must be finite"));
        }
        self.intent.validate().map_err(|e| invalid("intent", e.to_string()))?;
        if let Some(sel) = &self.intent.site_selector.site_ids {
            if let Some(missing) = sel.iter().find(|id| !ids.contains(id.as_str())) {
                return Err(invalid("intent.site_selector.site_ids", format!("unknown site {missing}")));
            }
        }
        self.catalog()?;
        for (i, inj) in self.kpi_injection.iter().enumerate() {
            if !ids.contains(inj.site_id.as_str()) {
                return Err(invalid(
                    format!("kpi_injection[{i}].site_id"),
                    format!("unknown site {}", inj.site_id),
                ));
            }
            if inj.start_window >= inj.end_window {
                return Err(invalid(format!("kpi_injection[{i}]"), "start_window must precede end_window"));
            }
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<Catalog, ConfigError> {
        Catalog::from_entries(self.models.iter().cloned()).map_err(|e| invalid("models", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn include_merges_tables_and_replaces_arrays() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "base.toml",
            "trials = 10\nsnapshot_counts = [1, 2, 3]\n[channel]\nsubcarriers = 64\nlos_snr_db = 0.0\n",
        );
        let main = write(
            dir.path(),
            "main.toml",
            "include = [\"base.toml\"]\nsnapshot_counts = [5]\n[channel]\nlos_snr_db = 3.0\n",
        );
        let cfg: RangingCdfConfig = load(&main).unwrap();
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.snapshot_counts, vec![5]);
        assert_eq!(cfg.channel.subcarriers, 64);
        assert_eq!(cfg.channel.los_snr_db, 3.0);
        assert_eq!(cfg.channel.paths.len(), 4);
    }

    #[test]
    fn include_cycle_detected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.toml", "include = [\"b.toml\"]\n");
        let b = write(dir.path(), "b.toml", "include = [\"a.toml\"]\n");
        assert!(matches!(load::<RangingCdfConfig>(&b), Err(ConfigError::IncludeCycle(_))));
    }

    #[test]
    fn unknown_field_is_reported() {
        let err = parse::<CrlbSweepConfig>("[sweep]\nstepz = 3\n").unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(parse::<CrlbSweepConfig>("").unwrap(), CrlbSweepConfig::default());
        let r = parse::<RangingCdfConfig>("").unwrap();
        assert_eq!(r, RangingCdfConfig::default());
        r.validate().unwrap();
        let s = r.channel.scenario().unwrap();
        assert_eq!(s, RangingScenario::default());
    }

    #[test]
    fn ranging_validation_names_fields() {
        let mut c = RangingCdfConfig {
            trials: 0,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("trials"));
        c.trials = 1;
        c.snapshot_counts = vec![20, 20];
        assert!(c.validate().unwrap_err().to_string().contains("snapshot_counts"));
    }
}
