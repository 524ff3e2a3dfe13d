//! Forecast and reconstruction detector with feature-wise and time-wise graph
//! attention feeding a recurrent encoder.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizationStats;
use crate::neural::{
    block_transpose, fit, Activation, Adam, Checkpoint, Dense, Gru, Neighbourhoods, ParamId, ParamStore, Tape,
    Tensor, TrainConfig, TrainSummary, Var,
};
use crate::trace::MeasurementTrace;

use super::data::{Augmenter, ExampleIndex, SeriesSet};
use super::gdn::contiguous_runs;
use super::scores::{fit_validation, AnomalyScoreSeries, ValidationRun, RobustScaler, Threshold};
use super::GraphError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatConfig {
    pub window_seconds: f64,
    pub hidden: usize,
    pub slope: f64,
    /// Weight of the forecast error in the per-sensor score; the rest goes to reconstruction.
    pub gamma: f64,
    pub train_stride: usize,
    pub threshold_factor: f64,
    /// Range of random magnitude factors applied to training examples;
    /// `[1.0, 1.0]` disables augmentation.
    pub magnitude_augmentation: [f64; 2],
    /// Length of the trailing mean applied to the overall score before thresholding.
    pub smoothing_samples: usize,
    pub train: TrainConfig,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            window_seconds: 1.0,
            hidden: 32,
            slope: 0.2,
            gamma: 0.5,
            train_stride: 5,
            threshold_factor: 1.0,
            magnitude_augmentation: [0.5, 1.5],
            smoothing_samples: 50,
            train: TrainConfig {
                max_epochs: 40,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GatParts {
    feature_weight: ParamId,
    feature_src: ParamId,
    feature_dst: ParamId,
    time_weight: ParamId,
    time_src: ParamId,
    time_dst: ParamId,
    gru: Gru,
    forecast: Dense,
    reconstruction: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatModel {
    pub config: GatConfig,
    pub bus_ids: Vec<usize>,
    pub window: usize,
    pub seed: u64,
    pub store: ParamStore,
    parts: GatParts,
    pub scaler: RobustScaler,
    pub threshold: Threshold,
    pub normalization: Option<NormalizationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GatState {
    config: GatConfig,
    bus_ids: Vec<usize>,
    window: usize,
    scaler: RobustScaler,
    threshold: Threshold,
}

fn validate(cfg: &GatConfig) -> Result<(), GraphError> {
    cfg.train.validate()?;
    if cfg.hidden == 0 || cfg.train_stride == 0 || cfg.smoothing_samples == 0 {
        return Err(GraphError::Config("hidden width, stride and smoothing must be positive".into()));
    }
    super::data::check_augmentation(cfg.magnitude_augmentation)?;
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(GraphError::Config("gamma must lie in [0, 1]".into()));
    }
    if !(cfg.window_seconds > 0.0) {
        return Err(GraphError::Config("window_seconds must be positive".into()));
    }
    Ok(())
}

/// Forecast (`B x n`) and window reconstruction (`B x (w * n)`) outputs.
struct Outputs {
    forecast: Var,
    reconstruction: Var,
}

fn forward(tape: &mut Tape, store: &ParamStore, p: &GatParts, windows: &Tensor, batch: usize, slope: f64) -> Outputs {
    let n = windows.cols();
    let w = windows.rows() / batch;
    let x = tape.constant(windows.clone());

    // Feature attention: sensors are nodes, their windows the node features.
    let xf = tape.constant(block_transpose(windows, batch));
    let fw = tape.param(store, p.feature_weight);
    let fh = tape.matmul(xf, fw);
    let fs = tape.param(store, p.feature_src);
    let fd = tape.param(store, p.feature_dst);
    let src = tape.matmul(fh, fs);
    let dst = tape.matmul(fh, fd);
    let nb = Arc::new(Neighbourhoods::complete_blocks(batch, n, true));
    let f = tape.attend(fh, src, dst, nb, slope);
    let f = tape.relu(f);
    let f = tape.block_transpose(f, batch);

    // Time attention: time steps are nodes.
    let tw = tape.param(store, p.time_weight);
    let th = tape.matmul(x, tw);
    let ts = tape.param(store, p.time_src);
    let td = tape.param(store, p.time_dst);
    let src = tape.matmul(th, ts);
    let dst = tape.matmul(th, td);
    let nb = Arc::new(Neighbourhoods::complete_blocks(batch, w, true));
    let t = tape.attend(th, src, dst, nb, slope);
    let t = tape.relu(t);

    let joined = tape.concat_cols(&[x, f, t]);
    let gru = p.gru.bind(tape, store);
    let proj = gru.project(tape, joined);
    let mut h = tape.constant(Tensor::zeros(batch, p.gru.hidden));
    for k in 0..w {
        let rows: Vec<usize> = (0..batch).map(|b| b * w + k).collect();
        let xp = tape.gather_rows(proj, Arc::new(rows));
        h = gru.step(tape, xp, h);
    }
    Outputs {
        forecast: p.forecast.forward(tape, store, h),
        reconstruction: p.reconstruction.forward(tape, store, h),
    }
}

fn joint_loss(tape: &mut Tape, store: &ParamStore, p: &GatParts, windows: &Tensor, targets: &Tensor, slope: f64) -> Var {
    let b = targets.rows();
    let out = forward(tape, store, p, windows, b, slope);
    let target = tape.constant(targets.clone());
    let lf = tape.mse(out.forecast, target);
    let flat = tape.constant(windows.clone().reshaped(b, windows.len() / b).expect("same size"));
    let lr = tape.mse(out.reconstruction, flat);
    tape.add(lf, lr)
}

impl GatModel {
    fn init(config: GatConfig, bus_ids: Vec<usize>, window: usize, seed: u64) -> Self {
        let n = bus_ids.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let parts = GatParts {
            feature_weight: store.add_glorot("feature.weight", window, window, &mut rng),
            feature_src: store.add_glorot("feature.src", window, 1, &mut rng),
            feature_dst: store.add_glorot("feature.dst", window, 1, &mut rng),
            time_weight: store.add_glorot("time.weight", n, n, &mut rng),
            time_src: store.add_glorot("time.src", n, 1, &mut rng),
            time_dst: store.add_glorot("time.dst", n, 1, &mut rng),
            gru: Gru::new(&mut store, "gru", 3 * n, config.hidden, &mut rng),
            forecast: Dense::new(&mut store, "forecast", config.hidden, n, Activation::Identity, &mut rng),
            reconstruction: Dense::new(
                &mut store,
                "reconstruction",
                config.hidden,
                window * n,
                Activation::Identity,
                &mut rng,
            ),
        };
        Self {
            config,
            bus_ids,
            window,
            seed,
            store,
            parts,
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

    /// Untrained model with an infinite threshold.
    pub fn new(config: GatConfig, bus_ids: Vec<usize>, window: usize, seed: u64) -> Result<Self, GraphError> {
        validate(&config)?;
        if window == 0 || bus_ids.is_empty() {
            return Err(GraphError::Config("window and sensor count must be positive".into()));
        }
        Ok(Self::init(config, bus_ids, window, seed))
    }

    /// Training objective on a batch: forecast MSE plus reconstruction MSE.
    /// `windows` stacks `B` windows of `window x sensors`; `targets` is `B x sensors`.
    /// Parameters are read from `store`, which must share this model's layout.
    pub fn loss(&self, tape: &mut Tape, store: &ParamStore, windows: &Tensor, targets: &Tensor) -> Var {
        joint_loss(tape, store, &self.parts, windows, targets, self.config.slope)
    }

    pub fn num_sensors(&self) -> usize {
        self.bus_ids.len()
    }

    /// Next-step forecasts (`B x n`) and reconstructed windows (`B x (w * n)`)
    /// for stacked time-major windows `(B * w) x n`.
    pub fn predict(&self, windows: &Tensor) -> Result<(Tensor, Tensor), GraphError> {
        let n = self.num_sensors();
        if windows.cols() != n || windows.rows() % self.window != 0 || windows.rows() == 0 {
            return Err(GraphError::Shape(format!(
                "windows {:?} for {n} sensors and width {}",
                windows.shape(),
                self.window
            )));
        }
        let b = windows.rows() / self.window;
        let mut tape = Tape::new();
        let out = forward(&mut tape, &self.store, &self.parts, windows, b, self.config.slope);
        Ok((tape.value(out.forecast).clone(), tape.value(out.reconstruction).clone()))
    }

    /// Absolute forecast and reconstruction errors of each sample in `samples`,
    /// both `rows x n`. The forecast of sample `t` uses the window ending at
    /// `t - 1`; the reconstruction is the last row of the window ending at `t`.
    pub fn component_errors(
        &self,
        series: &Tensor,
        samples: std::ops::Range<usize>,
    ) -> Result<(Vec<f64>, Vec<f64>), GraphError> {
        let n = self.num_sensors();
        let w = self.window;
        let set = SeriesSet {
            bus_ids: self.bus_ids.clone(),
            sample_rate: 1.0,
            series: vec![series.clone()],
        };
        let mut forecast = Vec::with_capacity(samples.len() * n);
        let mut recon = Vec::with_capacity(samples.len() * n);
        let targets: Vec<ExampleIndex> = (samples.start..=samples.end)
            .map(|target| ExampleIndex { trace: 0, target })
            .collect();
        let mut fc_rows: Vec<Vec<f64>> = Vec::with_capacity(targets.len());
        let mut last_rows: Vec<Vec<f64>> = Vec::with_capacity(targets.len());
        for chunk in targets.chunks(128) {
            let (f, r) = self.predict(&set.windows(chunk, w))?;
            for b in 0..chunk.len() {
                fc_rows.push(f.row(b).to_vec());
                last_rows.push(r.row(b)[(w - 1) * n..].to_vec());
            }
        }
        for (i, t) in samples.enumerate() {
            let x = series.row(t);
            forecast.extend(x.iter().zip(&fc_rows[i]).map(|(a, b)| (a - b).abs()));
            recon.extend(x.iter().zip(&last_rows[i + 1]).map(|(a, b)| (a - b).abs()));
        }
        Ok((forecast, recon))
    }

    fn combined_errors(&self, series: &Tensor, samples: std::ops::Range<usize>) -> Result<Vec<f64>, GraphError> {
        let g = self.config.gamma;
        let (f, r) = self.component_errors(series, samples)?;
        Ok(f.iter().zip(&r).map(|(a, b)| g * a + (1.0 - g) * b).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let state = GatState {
            config: self.config.clone(),
            bus_ids: self.bus_ids.clone(),
            window: self.window,
            scaler: self.scaler.clone(),
            threshold: self.threshold,
        };
        let mut ck = Checkpoint::new("gat", self.seed, serde_json::to_value(state).expect("serialisable"), &self.store);
        ck.normalization = self.normalization.clone();
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, GraphError> {
        ck.expect_model("gat")?;
        let state: GatState = serde_json::from_value(ck.config.clone()).map_err(crate::neural::NeuralError::from)?;
        validate(&state.config)?;
        let mut model = Self::init(state.config, state.bus_ids, state.window, ck.seed);
        ck.load_into(&mut model.store)?;
        model.scaler = state.scaler;
        model.threshold = state.threshold;
        model.normalization = ck.normalization.clone();
        Ok(model)
    }
}

/// Trains on normal traces with the joint forecast plus reconstruction loss.
pub fn train_gat(traces: &[MeasurementTrace], config: &GatConfig, seed: u64) -> Result<(GatModel, TrainSummary), GraphError> {
    validate(config)?;
    let set = SeriesSet::from_traces(traces)?;
    let n = set.num_sensors();
    let window = set.window_samples(config.window_seconds);
    let min_len = set.series.iter().map(Tensor::rows).min().unwrap_or(0);
    if min_len <= window + 1 {
        return Err(GraphError::TooShort {
            samples: min_len,
            window,
        });
    }
    let period = (1.0 / config.train.validation_fraction).round().max(2.0) as usize;
    let (train, val) = set.examples(window, config.train_stride, period);
    let mut model = GatModel::init(config.clone(), set.bus_ids.clone(), window, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ config.train.seed.rotate_left(17));
    let mut opt = Adam::new(config.train.learning_rate);
    let parts = model.parts.clone();
    let slope = config.slope;
    let train_ids: Vec<usize> = (0..train.len()).collect();
    let val_ids: Vec<usize> = (train.len()..train.len() + val.len()).collect();
    let all: Vec<ExampleIndex> = train.iter().chain(&val).copied().collect();
    let mut augment = Augmenter::new(config.magnitude_augmentation, train.len(), seed);
    let summary = fit(&mut model.store, &mut opt, &train_ids, &val_ids, &config.train, &mut rng, |tape, store, idx| {
        let ex: Vec<ExampleIndex> = idx.iter().map(|&i| all[i]).collect();
        let b = ex.len();
        let mut windows = set.windows(&ex, window);
        let mut targets = set.targets(&ex);
        augment.apply(idx, &mut windows, &mut targets);
        debug_assert_eq!(windows.rows(), b * window);
        joint_loss(tape, store, &parts, &windows, &targets, slope)
    })?;

    let mut runs = Vec::new();
    for (trace, series) in set.series.iter().enumerate() {
        let targets: Vec<usize> = val
            .iter()
            .filter(|e| e.trace == trace && e.target + 1 < series.rows())
            .map(|e| e.target)
            .collect();
        for run in contiguous_runs(&targets) {
            let start = run.start.saturating_sub(config.smoothing_samples - 1).max(window);
            runs.push(ValidationRun {
                errors: model.combined_errors(series, start..run.end)?,
                lead: run.start - start,
            });
        }
    }
    (model.scaler, model.threshold) = fit_validation(&runs, n, config.smoothing_samples, config.threshold_factor)?;
    Ok((model, summary))
}

/// Per-sensor `gamma * forecast + (1 - gamma) * reconstruction` absolute errors,
/// robust-normalized, with their maximum as the overall score.
pub fn gat_score(model: &GatModel, trace: &MeasurementTrace) -> Result<AnomalyScoreSeries, GraphError> {
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
    let errors = model.combined_errors(&series, w..t)?;
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
