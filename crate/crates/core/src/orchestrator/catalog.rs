use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::e3::StreamKind;
use crate::runtime::{DappFunction, RuCapabilities};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppKind {
    Dapp,
    Xapp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Monostatic,
    Bistatic,
    Ranging,
    Spectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Validated,
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Requirements {
    pub input_kind: StreamKind,
    pub min_compute: f64,
    #[serde(default)]
    pub ru: RuCapabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub model_id: String,
    /// Monotone per model; higher is more recent.
    pub version: u32,
    pub function: AppKind,
    pub topology: Topology,
    pub target_application: String,
    pub requirements: Requirements,
    pub validation_status: ValidationStatus,
    /// Runtime binding; entries without one are listed but cannot be deployed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implementation: Option<DappFunction>,
}

impl CatalogEntry {
    pub fn model_ref(&self) -> ModelRef {
        ModelRef {
            model_id: self.model_id.clone(),
            version: self.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelRef {
    pub model_id: String,
    pub version: u32,
}

impl std::fmt::Display for ModelRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:v{}", self.model_id, self.version)
    }
}

/// Append-only model catalog. Entries are never modified; new versions
/// supersede old ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    #[serde(default)]
    models: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CatalogEntry>) -> Result<Self, OrchestratorError> {
        let mut c = Self::new();
        for e in entries {
            c.register(e)?;
        }
        Ok(c)
    }

    pub fn register(&mut self, entry: CatalogEntry) -> Result<(), OrchestratorError> {
        if entry.model_id.is_empty() {
            return Err(OrchestratorError::InvalidEntry {
                model_id: entry.model_id,
                reason: "empty model id".into(),
            });
        }
        if !(entry.requirements.min_compute.is_finite() && entry.requirements.min_compute > 0.0) {
            return Err(OrchestratorError::InvalidEntry {
                model_id: entry.model_id,
                reason: "min_compute must be positive".into(),
            });
        }
        if let Some(f) = &entry.implementation {
            if f.input_kind() != entry.requirements.input_kind {
                return Err(OrchestratorError::InvalidEntry {
                    model_id: entry.model_id,
                    reason: format!("implementation consumes {:?}", f.input_kind()),
                });
            }
        }
        if self.get(&entry.model_id, entry.version).is_some() {
            return Err(OrchestratorError::DuplicateVersion {
                model_id: entry.model_id,
                version: entry.version,
            });
        }
        self.models.push(entry);
        Ok(())
    }

    /// Registers a validated copy of a candidate as the next version.
    pub fn promote(&mut self, model_id: &str, version: u32) -> Result<ModelRef, OrchestratorError> {
        let src = self
            .get(model_id, version)
            .ok_or_else(|| OrchestratorError::UnknownModel(format!("{model_id}:v{version}")))?
            .clone();
        let next = self.latest_version(model_id).unwrap_or(version).checked_add(1).ok_or_else(|| {
            OrchestratorError::InvalidEntry {
                model_id: model_id.into(),
                reason: "version space exhausted".into(),
            }
        })?;
        let promoted = CatalogEntry {
            version: next,
            validation_status: ValidationStatus::Validated,
            ..src
        };
        let r = promoted.model_ref();
        self.register(promoted)?;
        Ok(r)
    }

    pub fn get(&self, model_id: &str, version: u32) -> Option<&CatalogEntry> {
        self.models.iter().find(|e| e.model_id == model_id && e.version == version)
    }

    pub fn latest_version(&self, model_id: &str) -> Option<u32> {
        self.models.iter().filter(|e| e.model_id == model_id).map(|e| e.version).max()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.models
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn query(&self, function: AppKind, topology: Topology, target_application: &str) -> Vec<&CatalogEntry> {
        self.models
            .iter()
            .filter(|e| e.function == function && e.topology == topology && e.target_application == target_application)
            .collect()
    }

    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string_pretty(self)
    }

    /// Parses and re-registers every entry so duplicates are rejected.
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let raw: Catalog = toml::from_str(text).map_err(|e| OrchestratorError::Parse(e.to_string()))?;
        Self::from_entries(raw.models)
    }
}
