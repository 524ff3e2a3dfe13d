//! A small tensor and reverse-mode autodiff engine, with the layers, optimizer
//! and training loop used by the learned detectors, plus the autoencoder detector.

mod autoencoder;
mod checkpoint;
mod layers;
mod params;
mod tape;
mod tensor;
mod train;

pub use autoencoder::{
    autoencoder_window_detector, progressive_autoencoder, train_autoencoder, AutoencoderConfig, AutoencoderModel,
    ReconstructionReport,
};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::{Activation, BoundGru, Dense, Gru, Mlp};
pub use params::{Adam, ParamId, ParamStore};
pub use tape::{block_transpose, Neighbourhoods, Tape, Var};
pub use tensor::Tensor;
pub use train::{evaluate, fit, EarlyStopping, TrainConfig, TrainSummary};

use thiserror::Error;

use crate::clustering::ClusterError;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} in epoch {epoch}")]
    NonFinite { epoch: usize, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}
