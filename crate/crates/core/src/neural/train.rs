use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Adam, ParamStore};
use super::tape::{Tape, Var};
use super::NeuralError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Factor applied to the learning rate after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 100,
            batch_size: 32,
            validation_fraction: 0.1,
            patience: 10,
            seed: 0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |what: &str| Err(NeuralError::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation: f64,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    snapshot: Option<Vec<super::Tensor>>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            snapshot: None,
        }
    }

    /// Records one validation round; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64, store: &ParamStore) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            self.snapshot = Some(store.snapshot());
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience || self.best == 0.0
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Puts the best parameters back into the store.
    pub fn restore(&self, store: &mut ParamStore) {
        if let Some(s) = &self.snapshot {
            store.restore(s);
        }
    }
}

/// Mini-batch training with early stopping on `validation`. `batch_loss` builds
/// the loss of the given example indices on a fresh tape. The best-validation
/// parameters are left in `store`.
pub fn fit(
    store: &mut ParamStore,
    optimizer: &mut Adam,
    train: &[usize],
    validation: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut batch_loss: impl FnMut(&mut Tape, &ParamStore, &[usize]) -> Var,
) -> Result<TrainSummary, NeuralError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NeuralError::Config("no training examples".into()));
    }
    let validation = if validation.is_empty() { train } else { validation };
    let mut order = train.to_vec();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut summary = TrainSummary {
        epochs: 0,
        best_epoch: 0,
        best_validation: f64::INFINITY,
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
    };
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, store, batch);
            let l = tape.value(loss).data()[0];
            if !l.is_finite() {
                return Err(NeuralError::NonFinite { epoch, loss: l });
            }
            total += l * batch.len() as f64;
            tape.backward(loss);
            tape.accumulate(store);
            optimizer.step(store);
        }
        optimizer.lr *= cfg.lr_decay;
        let train_loss = total / order.len() as f64;
        let val = evaluate(store, validation, cfg.batch_size, &mut batch_loss);
        if !val.is_finite() {
            return Err(NeuralError::NonFinite { epoch, loss: val });
        }
        summary.train_loss.push(train_loss);
        summary.validation_loss.push(val);
        summary.epochs = epoch;
        if stopper.observe(epoch, val, store) {
            break;
        }
    }
    stopper.restore(store);
    summary.best_epoch = stopper.best_epoch();
    summary.best_validation = stopper.best();
    Ok(summary)
}

/// Example-weighted mean loss over `indices`, without gradients.
pub fn evaluate(
    store: &ParamStore,
    indices: &[usize],
    batch_size: usize,
    batch_loss: &mut impl FnMut(&mut Tape, &ParamStore, &[usize]) -> Var,
) -> f64 {
    let mut total = 0.0;
    for batch in indices.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let loss = batch_loss(&mut tape, store, batch);
        total += tape.value(loss).data()[0] * batch.len() as f64;
    }
    total / indices.len().max(1) as f64
}
