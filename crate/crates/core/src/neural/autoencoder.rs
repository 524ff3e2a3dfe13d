//! Dense autoencoder over per-sample sensor vectors and its clustering detector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::layers::{Activation, Mlp};
use super::params::{Adam, ParamStore};
use super::tape::Tape;
use super::tensor::Tensor;
use super::train::{fit, TrainConfig, TrainSummary};
use super::NeuralError;
use crate::clustering::{silhouette_gate, DetectionVerdict};
use crate::dataset::WindowMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Encoder widths after the input; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 8],
            activation: Activation::Tanh,
            train: TrainConfig {
                max_epochs: 20,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub config: AutoencoderConfig,
    pub inputs: usize,
    pub seed: u64,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub store: ParamStore,
}

/// Squared reconstruction errors of one block of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    /// Squared Euclidean distance between each sample and its reconstruction.
    pub per_sample: Vec<f64>,
    /// Mean squared residual of each sensor over the samples.
    pub per_sensor: Vec<f64>,
}

impl AutoencoderModel {
    pub fn new(inputs: usize, config: AutoencoderConfig, seed: u64) -> Result<Self, NeuralError> {
        if config.hidden.is_empty() || inputs == 0 {
            return Err(NeuralError::Config("autoencoder needs inputs and at least one hidden width".into()));
        }
        let bottleneck = *config.hidden.last().expect("non-empty");
        if bottleneck >= inputs || config.hidden.contains(&0) {
            return Err(NeuralError::Config(format!(
                "bottleneck width {bottleneck} must be positive and below input width {inputs}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut enc = vec![inputs];
        enc.extend(&config.hidden);
        let mut dec: Vec<usize> = enc.clone();
        dec.reverse();
        let act = config.activation;
        let encoder = Mlp::new(&mut store, "encoder", &enc, act, act, &mut rng);
        let decoder = Mlp::new(&mut store, "decoder", &dec, act, Activation::Identity, &mut rng);
        Ok(Self {
            config,
            inputs,
            seed,
            encoder,
            decoder,
            store,
        })
    }

    fn check(&self, batch: &Tensor) -> Result<(), NeuralError> {
        if batch.cols() != self.inputs {
            return Err(NeuralError::Shape(format!(
                "batch width {} does not match model input width {}",
                batch.cols(),
                self.inputs
            )));
        }
        Ok(())
    }

    /// Reconstructs each row of `batch`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NeuralError> {
        self.check(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let z = self.encoder.forward(&mut tape, &self.store, x);
        let y = self.decoder.forward(&mut tape, &self.store, z);
        Ok(tape.value(y).clone())
    }

    /// Mean squared reconstruction error of `batch`.
    pub fn loss(&self, batch: &Tensor) -> Result<f64, NeuralError> {
        let y = self.forward(batch)?;
        let n = batch.len().max(1) as f64;
        Ok(batch.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }

    /// Gradients of the mean squared reconstruction error, in parameter order.
    pub fn gradients(&mut self, batch: &Tensor) -> Result<Vec<Tensor>, NeuralError> {
        self.check(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let z = self.encoder.forward(&mut tape, &self.store, x);
        let y = self.decoder.forward(&mut tape, &self.store, z);
        let l = tape.mse(y, x);
        tape.backward(l);
        self.store.zero_grad();
        tape.accumulate(&mut self.store);
        let grads = self.store.ids().map(|id| self.store.grad(id).clone()).collect();
        self.store.zero_grad();
        Ok(grads)
    }

    pub fn reconstruction_report(&self, samples: &Tensor) -> Result<ReconstructionReport, NeuralError> {
        let y = self.forward(samples)?;
        let (rows, cols) = (samples.rows(), samples.cols());
        let mut per_sample = vec![0.0; rows];
        let mut per_sensor = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let e = (samples.get(r, c) - y.get(r, c)).powi(2);
                per_sample[r] += e;
                per_sensor[c] += e;
            }
        }
        per_sensor.iter_mut().for_each(|v| *v /= rows.max(1) as f64);
        Ok(ReconstructionReport { per_sample, per_sensor })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut config = serde_json::to_value(&self.config).expect("config serialises");
        config["inputs"] = self.inputs.into();
        Checkpoint::new("autoencoder", self.seed, config, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NeuralError> {
        ck.expect_model("autoencoder")?;
        let inputs = ck.config["inputs"]
            .as_u64()
            .ok_or_else(|| NeuralError::Checkpoint("missing input width".into()))? as usize;
        let mut cfg = ck.config.clone();
        cfg.as_object_mut().map(|o| o.remove("inputs"));
        let config: AutoencoderConfig = serde_json::from_value(cfg)?;
        let mut model = Self::new(inputs, config, ck.seed)?;
        ck.load_into(&mut model.store)?;
        Ok(model)
    }
}

/// Trains (or continues training) on the rows of `data`. Every tenth row is
/// held out for early stopping.
pub fn train_autoencoder(model: &mut AutoencoderModel, data: &Tensor) -> Result<TrainSummary, NeuralError> {
    model.check(data)?;
    let cfg = model.config.train.clone();
    cfg.validate()?;
    if data.rows() == 0 {
        return Err(NeuralError::Config("no training samples".into()));
    }
    let period = (1.0 / cfg.validation_fraction).round().max(2.0) as usize;
    let (validation, train): (Vec<usize>, Vec<usize>) =
        (0..data.rows()).partition(|i| data.rows() >= period && i % period == period - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ model.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let (encoder, decoder) = (model.encoder.clone(), model.decoder.clone());
    fit(&mut model.store, &mut opt, &train, &validation, &cfg, &mut rng, |tape, store, idx| {
        let mut batch = Tensor::zeros(idx.len(), data.cols());
        for (k, &i) in idx.iter().enumerate() {
            batch.row_mut(k).copy_from_slice(data.row(i));
        }
        let x = tape.constant(batch);
        let z = encoder.forward(tape, store, x);
        let y = decoder.forward(tape, store, z);
        tape.mse(y, x)
    })
}

/// Clusters the per-sensor mean reconstruction errors of one window.
pub fn autoencoder_window_detector(
    model: &AutoencoderModel,
    window_id: usize,
    window: &WindowMatrix,
    threshold: f64,
    seed: u64,
) -> Result<DetectionVerdict, NeuralError> {
    let samples = Tensor::new(window.samples, window.num_sensors(), window.time_major())?;
    let report = model.reconstruction_report(&samples)?;
    Ok(silhouette_gate(window_id, &window.bus_ids, &report.per_sensor, 1, threshold, seed)?)
}

/// Scores every window with a model trained on all earlier windows, warm
/// starting from the previous step. The first window has no history and is quiet.
pub fn progressive_autoencoder(
    windows: &[WindowMatrix],
    config: &AutoencoderConfig,
    threshold: f64,
    seed: u64,
) -> Result<Vec<DetectionVerdict>, NeuralError> {
    let Some(first) = windows.first() else { return Ok(Vec::new()) };
    let n = first.num_sensors();
    let mut model = AutoencoderModel::new(n, config.clone(), seed)?;
    let mut seen: Vec<f64> = Vec::new();
    let mut verdicts = Vec::with_capacity(windows.len());
    verdicts.push(DetectionVerdict {
        window: 0,
        fired: false,
        flagged: Vec::new(),
        silhouette: 0.0,
        minority_size: 0,
        tie: false,
    });
    for (m, w) in windows.iter().enumerate().skip(1) {
        seen.extend(windows[m - 1].time_major());
        let data = Tensor::new(seen.len() / n, n, seen.clone())?;
        train_autoencoder(&mut model, &data)?;
        verdicts.push(autoencoder_window_detector(&model, m, w, threshold, seed)?);
    }
    Ok(verdicts)
}
