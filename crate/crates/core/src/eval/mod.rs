//! Metrics, scenario orchestration, suites and report emission.

mod config;
mod metrics;
mod pipeline;
mod report;
mod suite;
mod svg;

pub use config::{
    load_scenario, load_suite, parse_scenario, AutoencoderSettings, ClusterSettings, Counting, DetectorSet,
    EvaluationConfig, ScenarioConfig, Seeds, SuiteConfig, TrainingScenario, SCHEMA_VERSION,
};
pub use metrics::{f1_score, localization_metrics, point_metrics, ConfusionCounts, LocalizationMetrics, PointMetrics};
pub use pipeline::{
    attack_span, evaluate_scenario, load_scenario_network, run_scenario, simulate_scenario, train_models, DetectorId,
    DetectorResult, ScenarioOutcome, ScenarioTraces, TrainedModels,
};
pub use report::{read_checkpoints, write_checkpoints, write_scenario_outputs, write_traces, DetectorSummary, ScenarioSummary};
pub use suite::{run_suite, CellResult, FailedCell, SuiteOutcome, SuiteSummary};
pub use svg::{bar_chart_svg, line_chart_svg, Series};

use thiserror::Error;

use crate::attack::AttackError;
use crate::clustering::ClusterError;
use crate::dataset::DatasetError;
use crate::graph::GraphError;
use crate::grid::GridError;
use crate::neural::NeuralError;

/// Pipeline stage an error came from, used to tag failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Simulate,
    Attack,
    Dataset,
    Cluster,
    Train,
    Detect,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Config,
        Stage::Simulate,
        Stage::Attack,
        Stage::Dataset,
        Stage::Cluster,
        Stage::Train,
        Stage::Detect,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Simulate => "simulate",
            Stage::Attack => "attack",
            Stage::Dataset => "dataset",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Detect => "detect",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predicted labels have {predicted} units, truth has {truth}")]
    Length { predicted: usize, truth: usize },
    #[error("no attacked buses to localize")]
    EmptyTruth,
    #[error("bus {0} is missing from the ranking")]
    UnrankedBus(usize),
    #[error("invalid config `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("cannot read config {path}")]
    ConfigRead { path: String, source: std::io::Error },
    #[error("I/O error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error("suite has no scenarios")]
    NoScenarios,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("training failed: {0}")]
    Train(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("scenario {scenario}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<EvalError>,
    },
}

impl EvalError {
    pub fn stage(&self) -> Stage {
        match self {
            EvalError::Length { .. } | EvalError::EmptyTruth | EvalError::UnrankedBus(_) => Stage::Evaluate,
            EvalError::Config { .. } | EvalError::ConfigRead { .. } | EvalError::Parse { .. } | EvalError::NoScenarios => {
                Stage::Config
            }
            EvalError::Io { .. } => Stage::Report,
            EvalError::Grid(GridError::Io { .. } | GridError::Parse(_) | GridError::Validation { .. }) => {
                Stage::Config
            }
            EvalError::Grid(_) => Stage::Simulate,
            EvalError::Attack(_) => Stage::Attack,
            EvalError::Dataset(_) => Stage::Dataset,
            EvalError::Cluster(_) => Stage::Cluster,
            EvalError::Train(_) => Stage::Train,
            EvalError::Graph(_) | EvalError::Neural(_) => Stage::Detect,
            EvalError::Scenario { source, .. } => source.stage(),
        }
    }

    pub(crate) fn in_scenario(self, name: &str) -> Self {
        match self {
            e @ EvalError::Scenario { .. } => e,
            e => EvalError::Scenario {
                scenario: name.to_string(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
