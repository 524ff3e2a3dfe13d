//! Deviation-score detector: each sensor's next value is forecast from an
//! attention-weighted mix of its learned neighbours' windows.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizationStats;
use crate::neural::{
    block_transpose, fit, Activation, Adam, Checkpoint, Mlp, Neighbourhoods, ParamId, ParamStore, Tape, Tensor,
    TrainConfig, TrainSummary, Var,
};
use crate::trace::MeasurementTrace;

use super::data::{Augmenter, ExampleIndex, SeriesSet};
use super::scores::{fit_validation, AnomalyScoreSeries, ValidationRun, RobustScaler, Threshold};
use super::topk::{learn_graph_topk, TopKGraph};
use super::GraphError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdnConfig {
    pub window_seconds: f64,
    /// Width of sensor embeddings and of the attention features.
    pub embedding_dim: usize,
    pub top_k: usize,
    pub output_hidden: usize,
    pub slope: f64,
    /// Keep every n-th training target.
    pub train_stride: usize,
    pub threshold_factor: f64,
    /// Length of the trailing mean applied to the overall score before thresholding.
    pub smoothing_samples: usize,
    /// Range of random magnitude factors applied to training examples;
    /// `[1.0, 1.0]` disables augmentation.
    pub magnitude_augmentation: [f64; 2],
    pub train: TrainConfig,
}

impl Default for GdnConfig {
    fn default() -> Self {
        Self {
            window_seconds: 1.0,
            embedding_dim: 16,
            top_k: 15,
            output_hidden: 32,
            slope: 0.2,
            train_stride: 2,
            threshold_factor: 1.0,
            smoothing_samples: 50,
            magnitude_augmentation: [0.5, 1.5],
            train: TrainConfig {
                learning_rate: 2e-3,
                max_epochs: 150,
                patience: 20,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct GdnParams {
    embedding: ParamId,
    weight: ParamId,
    src_embedding: ParamId,
    src_feature: ParamId,
    dst_embedding: ParamId,
    dst_feature: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdnModel {
    pub config: GdnConfig,
    pub bus_ids: Vec<usize>,
    pub window: usize,
    pub seed: u64,
    pub store: ParamStore,
    params: GdnParams,
    output: Mlp,
    pub graph: TopKGraph,
    pub scaler: RobustScaler,
    pub threshold: Threshold,
    pub normalization: Option<NormalizationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GdnState {
    config: GdnConfig,
    bus_ids: Vec<usize>,
    window: usize,
    scaler: RobustScaler,
    threshold: Threshold,
}

fn validate(cfg: &GdnConfig, sensors: usize) -> Result<(), GraphError> {
    cfg.train.validate()?;
    if cfg.embedding_dim == 0 || cfg.output_hidden == 0 || cfg.train_stride == 0 || cfg.smoothing_samples == 0 {
        return Err(GraphError::Config("widths, stride and smoothing must be positive".into()));
    }
    super::data::check_augmentation(cfg.magnitude_augmentation)?;
    if cfg.top_k == 0 || cfg.top_k >= sensors {
        return Err(GraphError::TopK {
            k: cfg.top_k,
            sensors,
        });
    }
    if !(cfg.window_seconds > 0.0) {
        return Err(GraphError::Config("window_seconds must be positive".into()));
    }
    Ok(())
}

impl GdnModel {
    fn init(config: GdnConfig, bus_ids: Vec<usize>, window: usize, seed: u64) -> Self {
        let n = bus_ids.len();
        let d = config.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = GdnParams {
            embedding: store.add_glorot("embedding", n, d, &mut rng),
            weight: store.add_glorot("weight", window, d, &mut rng),
            src_embedding: store.add_glorot("attention.src_embedding", d, 1, &mut rng),
            src_feature: store.add_glorot("attention.src_feature", d, 1, &mut rng),
            dst_embedding: store.add_glorot("attention.dst_embedding", d, 1, &mut rng),
            dst_feature: store.add_glorot("attention.dst_feature", d, 1, &mut rng),
        };
        let output = Mlp::new(
            &mut store,
            "output",
            &[d, config.output_hidden, 1],
            Activation::Relu,
            Activation::Identity,
            &mut rng,
        );
        let graph = learn_graph_topk(store.value(params.embedding), config.top_k).expect("k validated");
        Self {
            config,
            bus_ids,
            window,
            seed,
            store,
            params,
            output,
            graph,
            scaler: RobustScaler {
                median: vec![0.0; n],
                iqr: vec![1.0; n],
                clamped: Vec::new(),
            },
            threshold: Threshold {
                value: f64::INFINITY,
                degenerate: false,
            },
            normalization: None,
        }
    }

    pub fn num_sensors(&self) -> usize {
        self.bus_ids.len()
    }

    /// Forecasts, `B x sensors`, from stacked time-major windows `(B * w) x sensors`.
    pub fn predict(&self, windows: &Tensor) -> Result<Tensor, GraphError> {
        let n = self.num_sensors();
        if windows.cols() != n || windows.rows() % self.window != 0 {
            return Err(GraphError::Shape(format!(
                "windows {:?} for {n} sensors and width {}",
                windows.shape(),
                self.window
            )));
        }
        let b = windows.rows() / self.window;
        let nbrs = Arc::new(Neighbourhoods::from_lists(&self.graph.neighbours).tiled(b));
        let mut tape = Tape::new();
        let out = forward(
            &mut tape,
            &self.store,
            self.params,
            &self.output,
            windows,
            b,
            n,
            nbrs,
            self.config.slope,
        );
        Ok(tape.value(out).clone().reshaped(b, n)?)
    }

    /// Absolute forecast errors for each target in `targets`, `rows x sensors`.
    fn errors(&self, series: &Tensor, targets: std::ops::Range<usize>) -> Result<Vec<f64>, GraphError> {
        let n = self.num_sensors();
        let mut out = Vec::with_capacity(targets.len() * n);
        let set = SeriesSet {
            bus_ids: self.bus_ids.clone(),
            sample_rate: 1.0,
            series: vec![series.clone()],
        };
        let all: Vec<ExampleIndex> = targets.map(|target| ExampleIndex { trace: 0, target }).collect();
        for chunk in all.chunks(256) {
            let pred = self.predict(&set.windows(chunk, self.window))?;
            let truth = set.targets(chunk);
            out.extend(pred.data().iter().zip(truth.data()).map(|(p, t)| (t - p).abs()));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let state = GdnState {
            config: self.config.clone(),
            bus_ids: self.bus_ids.clone(),
            window: self.window,
            scaler: self.scaler.clone(),
            threshold: self.threshold,
        };
        let mut ck = Checkpoint::new("gdn", self.seed, serde_json::to_value(state).expect("serialisable"), &self.store);
        ck.normalization = self.normalization.clone();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, GraphError> {
        ck.expect_model("gdn")?;
        let state: GdnState = serde_json::from_value(ck.config.clone()).map_err(crate::neural::NeuralError::from)?;
        validate(&state.config, state.bus_ids.len())?;
        let mut model = Self::init(state.config, state.bus_ids, state.window, ck.seed);
        ck.load_into(&mut model.store)?;
        model.graph = learn_graph_topk(model.store.value(model.params.embedding), model.config.top_k)?;
        model.scaler = state.scaler;
        model.threshold = state.threshold;
        model.normalization = ck.normalization.clone();
        Ok(model)
    }
}

#[allow(clippy::too_many_arguments)]
fn forward(
    tape: &mut Tape,
    store: &ParamStore,
    p: GdnParams,
    output: &Mlp,
    windows: &Tensor,
    batch: usize,
    sensors: usize,
    nbrs: Arc<Neighbourhoods>,
    slope: f64,
) -> Var {
    let x = tape.constant(block_transpose(windows, batch));
    let w = tape.param(store, p.weight);
    let wx = tape.matmul(x, w);
    let emb = tape.param(store, p.embedding);
    let tile: Vec<usize> = (0..batch * sensors).map(|r| r % sensors).collect();
    let v = tape.gather_rows(emb, Arc::new(tile));
    let logit = |tape: &mut Tape, e: ParamId, f: ParamId| {
        let ev = tape.param(store, e);
        let fv = tape.param(store, f);
        let a = tape.matmul(v, ev);
        let b = tape.matmul(wx, fv);
        tape.add(a, b)
    };
    let src = logit(tape, p.src_embedding, p.src_feature);
    let dst = logit(tape, p.dst_embedding, p.dst_feature);
    // Messages carry the sender's embedding so that pairwise gains can take either sign.
    let msg = tape.mul(wx, v);
    let z = tape.attend(msg, src, dst, nbrs, slope);
    let z = tape.relu(z);
    let h = tape.mul(v, z);
    output.forward(tape, store, h)
}

/// Trains on normal traces that share one normalization frame. Errors on the
/// validation blocks fit the per-sensor robust scaling and the threshold.
pub fn train_gdn(traces: &[MeasurementTrace], config: &GdnConfig, seed: u64) -> Result<(GdnModel, TrainSummary), GraphError> {
    let set = SeriesSet::from_traces(traces)?;
    let n = set.num_sensors();
    validate(config, n)?;
    let window = set.window_samples(config.window_seconds);
    let min_len = set.series.iter().map(Tensor::rows).min().unwrap_or(0);
    if min_len <= window {
        return Err(GraphError::TooShort {
            samples: min_len,
            window,
        });
    }
    let period = (1.0 / config.train.validation_fraction).round().max(2.0) as usize;
    let (train, val) = set.examples(window, config.train_stride, period);
    let mut model = GdnModel::init(config.clone(), set.bus_ids.clone(), window, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ config.train.seed.rotate_left(17));
    let mut opt = Adam::new(config.train.learning_rate);
    let (params, output, slope, k) = (model.params, model.output.clone(), config.slope, config.top_k);
    let train_ids: Vec<usize> = (0..train.len()).collect();
    let val_ids: Vec<usize> = (train.len()..train.len() + val.len()).collect();
    let all: Vec<ExampleIndex> = train.iter().chain(&val).copied().collect();
    let mut augment = Augmenter::new(config.magnitude_augmentation, train.len(), seed);
    let summary = fit(&mut model.store, &mut opt, &train_ids, &val_ids, &config.train, &mut rng, |tape, store, idx| {
        let ex: Vec<ExampleIndex> = idx.iter().map(|&i| all[i]).collect();
        let b = ex.len();
        let graph = learn_graph_topk(store.value(params.embedding), k).expect("k validated");
        let nbrs = Arc::new(Neighbourhoods::from_lists(&graph.neighbours).tiled(b));
        let mut windows = set.windows(&ex, window);
        let mut targets = set.targets(&ex);
        augment.apply(idx, &mut windows, &mut targets);
        let pred = forward(tape, store, params, &output, &windows, b, n, nbrs, slope);
        let pred = tape.reshape(pred, b, n);
        let target = tape.constant(targets);
        tape.mse(pred, target)
    })?;
    model.graph = learn_graph_topk(model.store.value(params.embedding), k)?;

    let mut runs = Vec::new();
    for (trace, series) in set.series.iter().enumerate() {
        let targets: Vec<usize> = val.iter().filter(|e| e.trace == trace).map(|e| e.target).collect();
        for run in contiguous_runs(&targets) {
            let start = run.start.saturating_sub(config.smoothing_samples - 1).max(window);
            runs.push(ValidationRun {
                errors: model.errors(series, start..run.end)?,
                lead: run.start - start,
            });
        }
    }
    (model.scaler, model.threshold) = fit_validation(&runs, n, config.smoothing_samples, config.threshold_factor)?;
    Ok((model, summary))
}

pub(crate) fn contiguous_runs(sorted: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let start = sorted[i];
        let mut end = start + 1;
        i += 1;
        while i < sorted.len() && sorted[i] == end {
            end += 1;
            i += 1;
        }
        runs.push(start..end);
    }
    runs
}

/// Deviation scores `|e - median| / iqr` of absolute forecast errors, and
/// their maximum over sensors.
pub fn gdn_score(model: &GdnModel, trace: &MeasurementTrace) -> Result<AnomalyScoreSeries, GraphError> {
    if trace.bus_ids() != model.bus_ids.as_slice() {
        return Err(GraphError::Mismatch("trace bus layout differs from the model".into()));
    }
    let t = trace.num_samples();
    let w = model.window;
    if t <= w {
        return Err(GraphError::TooShort { samples: t, window: w });
    }
    let n = model.num_sensors();
    let series = Tensor::new(t, n, trace.values().to_vec())?;
    let errors = model.errors(&series, w..t)?;
    let mut per_sensor = vec![0.0; w * n];
    per_sensor.extend(errors.iter().enumerate().map(|(i, &e)| model.scaler.score(i % n, e)));
    Ok(AnomalyScoreSeries::new(
        model.bus_ids.clone(),
        trace.times().to_vec(),
        w,
        per_sensor,
        model.threshold.value,
    )
    .with_smoothing(model.config.smoothing_samples))
}
