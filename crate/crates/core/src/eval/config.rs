//! Scenario and suite configuration files (TOML, versioned schema).
//!
//! A file may name another with `extends = "common.toml"`; its tables are
//! merged underneath, keys in the extending file winning.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackSpec;
use crate::dataset::NormMethod;
use crate::graph::{GatConfig, GdnConfig};
use crate::grid::{GridEvent, SimConfig};
use crate::neural::AutoencoderConfig;

use super::EvalError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    /// Row label in comparison tables, e.g. a placement and magnitude.
    #[serde(default)]
    pub group: Option<String>,
    /// Network file; the bundled 68-bus system when absent.
    #[serde(default)]
    pub network: Option<PathBuf>,
    #[serde(default)]
    pub simulation: SimConfig,
    /// Angles are taken relative to this bus before detection.
    #[serde(default = "default_reference")]
    pub reference_bus: usize,
    #[serde(default = "default_norm")]
    pub normalization: NormMethod,
    #[serde(default)]
    pub events: Vec<GridEvent>,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    /// Attack-free scenarios the learned detectors are trained on.
    #[serde(default)]
    pub training: Vec<TrainingScenario>,
    #[serde(default)]
    pub detectors: DetectorSet,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_reference() -> usize {
    1
}

fn default_norm() -> NormMethod {
    NormMethod::PreEventCenterRmsScale { until: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingScenario {
    pub name: String,
    pub events: Vec<GridEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSet {
    #[serde(default)]
    pub kmeans: Option<ClusterSettings>,
    #[serde(default)]
    pub autoencoder: Option<AutoencoderSettings>,
    #[serde(default)]
    pub gdn: Option<GdnConfig>,
    #[serde(default)]
    pub gat: Option<GatConfig>,
}

impl DetectorSet {
    pub fn is_empty(&self) -> bool {
        self.kmeans.is_none() && self.autoencoder.is_none() && self.gdn.is_none() && self.gat.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSettings {
    /// Mean silhouette at or above which a window fires.
    pub threshold: f64,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        Self {
            threshold: crate::clustering::DEFAULT_SILHOUETTE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSettings {
    pub threshold: f64,
    pub model: AutoencoderConfig,
}

impl Default for AutoencoderSettings {
    fn default() -> Self {
        Self {
            threshold: crate::clustering::DEFAULT_SILHOUETTE_THRESHOLD,
            model: AutoencoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Initialisation and shuffling of the learned detectors.
    pub model: u64,
    /// k-means restarts.
    pub clustering: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { model: 7, clustering: 11 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Counting {
    /// One unit per non-overlapping evaluation window.
    Window,
    /// One unit per sample; window detectors repeat their verdict.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub window_seconds: f64,
    pub counting: Counting,
    /// Cut-off for the localization hit rate.
    pub localization_k: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            window_seconds: 1.0,
            counting: Counting::Window,
            localization_k: 3,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |field: &str, reason: String| {
            Err(EvalError::Config {
                field: field.to_string(),
                reason,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            );
        }
        if self.name.trim().is_empty() {
            return bad("name", "must not be empty".into());
        }
        if let Some(a) = &self.attack {
            a.validate().map_err(|e| EvalError::Config {
                field: "attack".into(),
                reason: e.to_string(),
            })?;
            if a.t2 > self.simulation.duration {
                return bad(
                    "attack.t2",
                    format!("attack ends at {} s past the {} s horizon", a.t2, self.simulation.duration),
                );
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(e.time >= 0.0 && e.time < self.simulation.duration) {
                return bad(&format!("events[{i}].time"), format!("{} s is outside the horizon", e.time));
            }
        }
        if self.detectors.is_empty() {
            return bad("detectors", "select at least one detector".into());
        }
        let learned = self.detectors.gdn.is_some() || self.detectors.gat.is_some();
        if learned && self.training.is_empty() {
            return bad("training", "GDN and GAT need attack-free training scenarios".into());
        }
        if !(self.evaluation.window_seconds > 0.0) {
            return bad("evaluation.window_seconds", "must be positive".into());
        }
        if self.evaluation.localization_k == 0 {
            return bad("evaluation.localization_k", "must be positive".into());
        }
        Ok(())
    }

    /// Overrides every seed, including the attack noise seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = Seeds { model: seed, clustering: seed };
        if let Some(a) = &mut self.attack {
            a.seed = seed;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub schema_version: u32,
    pub name: String,
    /// Scenario files, relative to the suite file.
    pub scenarios: Vec<PathBuf>,
    /// Attack-free scenario used to report false-positive rates.
    #[serde(default)]
    pub heldout: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn read_table(path: &Path, depth: usize) -> Result<toml::Table, EvalError> {
    if depth > 8 {
        return Err(EvalError::Config {
            field: "extends".into(),
            reason: format!("chain too deep at {}", path.display()),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::ConfigRead {
        path: path.display().to_string(),
        source,
    })?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| EvalError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let Some(parent) = table.remove("extends") else { return Ok(table) };
    let parent = parent.as_str().ok_or_else(|| EvalError::Config {
        field: "extends".into(),
        reason: "must be a file path".into(),
    })?;
    let parent_path = path.parent().unwrap_or(Path::new(".")).join(parent);
    let mut base = read_table(&parent_path, depth + 1)?;
    merge(&mut base, table);
    Ok(base)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn from_table<T: serde::de::DeserializeOwned>(table: toml::Table, path: &Path) -> Result<T, EvalError> {
    T::deserialize(toml::Value::Table(table)).map_err(|e| EvalError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Reads, merges and validates a scenario file. Relative network and output
/// paths are resolved against the file's directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, EvalError> {
    let path = path.as_ref();
    let mut cfg: ScenarioConfig = from_table(read_table(path, 0)?, path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    if let Some(n) = &cfg.network {
        if n.is_relative() {
            cfg.network = Some(dir.join(n));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, EvalError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| EvalError::Parse {
        path: "<inline>".into(),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a suite file and resolves its scenario paths.
pub fn load_suite(path: impl AsRef<Path>) -> Result<SuiteConfig, EvalError> {
    let path = path.as_ref();
    let mut cfg: SuiteConfig = from_table(read_table(path, 0)?, path)?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(EvalError::Config {
            field: "schema_version".into(),
            reason: format!("expected {SCHEMA_VERSION}, found {}", cfg.schema_version),
        });
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    for p in cfg.scenarios.iter_mut().chain(cfg.heldout.iter_mut()) {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
    Ok(cfg)
}
