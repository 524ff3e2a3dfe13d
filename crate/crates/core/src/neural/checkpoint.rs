use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NeuralError;
use crate::dataset::NormalizationStats;

pub const CHECKPOINT_FORMAT: &str = "anglewatch-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Self-describing model file: layer shapes and values, seed, model
/// configuration and the normalization frame the model was trained in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub normalization: Option<NormalizationStats>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &str, seed: u64, config: serde_json::Value, store: &ParamStore) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model.into(),
            seed,
            config,
            normalization: None,
            params: store
                .named()
                .map(|(name, t)| NamedTensor {
                    name: name.into(),
                    shape: t.shape(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Copies stored values into `store`, which must have the same names and shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), NeuralError> {
        if self.params.len() != store.len() {
            return Err(NeuralError::Checkpoint(format!(
                "{} tensors in file, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        for (nt, id) in self.params.iter().zip(ids) {
            let cur = store.value(id);
            if store.name(id) != nt.name || cur.shape() != nt.shape {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor `{}` {:?} does not match model tensor `{}` {:?}",
                    nt.name,
                    nt.shape,
                    store.name(id),
                    cur.shape()
                )));
            }
            *store.value_mut(id) = Tensor::new(nt.shape[0], nt.shape[1], nt.values.clone())?;
        }
        Ok(())
    }

    pub fn expect_model(&self, model: &str) -> Result<(), NeuralError> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.model != model {
            return Err(NeuralError::Checkpoint(format!("expected a {model} checkpoint, found {}", self.model)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|source| NeuralError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NeuralError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}
