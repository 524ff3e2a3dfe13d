//! Graph-attention detectors: the attention layer, top-k graph learning, the
//! deviation-score forecaster (GDN) and the forecast/reconstruction model (GAT),
//! with thresholding and per-bus localization.

mod attention;
mod data;
mod gat;
mod gdn;
mod scores;
mod topk;

pub use attention::{attention_aggregate, attention_coefficients, GraphAttentionLayer};
pub use data::{ExampleIndex, SeriesSet};
pub use gat::{gat_score, train_gat, GatConfig, GatModel};
pub use gdn::{gdn_score, train_gdn, GdnConfig, GdnModel};
pub use scores::{localize, select_threshold, trailing_mean, AnomalyScoreSeries, RankedBus, RobustScaler, Threshold};
pub use topk::{learn_graph_topk, TopKGraph};

use thiserror::Error;

use crate::neural::NeuralError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("node {0} has an empty neighbourhood")]
    EmptyNeighbourhood(usize),
    #[error("top-k needs k < number of sensors (k = {k}, sensors = {sensors})")]
    TopK { k: usize, sensors: usize },
    #[error("trace of {samples} samples is shorter than one window of {window} plus a target")]
    TooShort { samples: usize, window: usize },
    #[error("no scores to select a threshold from")]
    NoScores,
    #[error("empty localization span")]
    EmptySpan,
    #[error("traces disagree: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}
