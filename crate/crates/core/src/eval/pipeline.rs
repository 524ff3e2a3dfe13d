//! One scenario end to end: simulate, attack, normalize, detect, score.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attack::{attack_label_mask, AttackSpec, AttackTap, LabelMask};
use crate::clustering::{kmeans_window_detector, DetectionVerdict};
use crate::dataset::{to_angle_differences, windows, NormalizationStats};
use crate::graph::{gat_score, gdn_score, localize, train_gat, train_gdn, AnomalyScoreSeries, GatModel, GdnModel, RankedBus};
use crate::grid::{load_network, parse_network, simulate, steady_state, BusNetwork, GridEvent, MeasurementTap, Simulation};
use crate::neural::{progressive_autoencoder, TrainSummary};
use crate::trace::MeasurementTrace;

use super::config::{Counting, ScenarioConfig};
use super::metrics::{localization_metrics, point_metrics, LocalizationMetrics, PointMetrics};
use super::EvalError;

const BUNDLED_NETWORK: &str = include_str!("../../data/ieee68.toml");

pub fn load_scenario_network(cfg: &ScenarioConfig) -> Result<BusNetwork, EvalError> {
    Ok(match &cfg.network {
        Some(path) => load_network(path)?,
        None => parse_network(BUNDLED_NETWORK)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorId {
    Kmeans,
    Autoencoder,
    Gdn,
    Gat,
}

impl DetectorId {
    pub const ALL: [DetectorId; 4] = [DetectorId::Kmeans, DetectorId::Autoencoder, DetectorId::Gdn, DetectorId::Gat];

    pub fn key(self) -> &'static str {
        match self {
            DetectorId::Kmeans => "kmeans",
            DetectorId::Autoencoder => "autoencoder",
            DetectorId::Gdn => "gdn",
            DetectorId::Gat => "gat",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DetectorId::Kmeans => "k-means",
            DetectorId::Autoencoder => "Autoencoder",
            DetectorId::Gdn => "GDN",
            DetectorId::Gat => "GAT",
        }
    }
}

/// Simulated run of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioTraces {
    pub simulation: Simulation,
    /// Measured angles relative to the reference bus, reference column dropped.
    pub differences: MeasurementTrace,
    /// Ground truth over the columns of `differences`.
    pub mask: LabelMask,
}

fn run_events(
    net: &BusNetwork,
    cfg: &ScenarioConfig,
    name: &str,
    events: &[GridEvent],
    attack: Option<&AttackSpec>,
) -> Result<ScenarioTraces, EvalError> {
    let tap = match attack {
        Some(spec) => {
            let op = steady_state(net)?;
            Some(AttackTap::new(spec, net, &op, cfg.simulation.angle_unit)?)
        }
        None => None,
    };
    let mut simulation = simulate(net, events, &cfg.simulation, tap.as_ref().map(|t| t as &dyn MeasurementTap))?;
    simulation.measured.scenario = name.to_string();
    simulation.truth.scenario = name.to_string();
    let differences = to_angle_differences(&simulation.measured, cfg.reference_bus)?;
    let mask = match attack {
        Some(spec) => attack_label_mask(spec, differences.times(), simulation.measured.bus_ids())?.select(differences.bus_ids()),
        None => LabelMask::clean(differences.num_samples(), differences.bus_ids()),
    };
    Ok(ScenarioTraces {
        simulation,
        differences,
        mask,
    })
}

/// Runs the scenario's events with its attack tapped into the measurements.
pub fn simulate_scenario(cfg: &ScenarioConfig, net: &BusNetwork) -> Result<ScenarioTraces, EvalError> {
    run_events(net, cfg, &cfg.name, &cfg.events, cfg.attack.as_ref())
}

/// Normalization and learned detectors shared by every scenario with the same
/// training setup.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    /// Fitted on the training traces; `None` without training scenarios.
    pub normalization: Option<NormalizationStats>,
    pub gdn: Option<GdnModel>,
    pub gat: Option<GatModel>,
    /// Training curves keyed by detector; empty for models loaded from checkpoints.
    pub summaries: BTreeMap<String, TrainSummary>,
}

impl TrainedModels {
    pub fn none() -> Self {
        Self {
            normalization: None,
            gdn: None,
            gat: None,
            summaries: BTreeMap::new(),
        }
    }
}

/// Cache key covering every field that influences [`train_models`].
pub(crate) fn training_key(cfg: &ScenarioConfig) -> String {
    serde_json::json!({
        "network": cfg.network,
        "simulation": cfg.simulation,
        "reference": cfg.reference_bus,
        "normalization": cfg.normalization,
        "training": cfg.training,
        "gdn": cfg.detectors.gdn,
        "gat": cfg.detectors.gat,
        "seed": cfg.seeds.model,
    })
    .to_string()
}

/// Simulates the training scenarios, fits the normalization on them and trains
/// the configured graph detectors.
pub fn train_models(cfg: &ScenarioConfig, net: &BusNetwork) -> Result<TrainedModels, EvalError> {
    if cfg.training.is_empty() {
        return Ok(TrainedModels::none());
    }
    let raw: Vec<MeasurementTrace> = cfg
        .training
        .iter()
        .map(|t| run_events(net, cfg, &t.name, &t.events, None).map(|r| r.differences))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&MeasurementTrace> = raw.iter().collect();
    let stats = NormalizationStats::fit(&refs, cfg.normalization)?;
    let normal: Vec<MeasurementTrace> = raw.iter().map(|t| stats.apply(t)).collect::<Result<_, _>>()?;
    let train_err = |e: crate::graph::GraphError| EvalError::Train(Box::new(e));
    let mut out = TrainedModels::none();
    if let Some(g) = &cfg.detectors.gdn {
        let (mut model, summary) = train_gdn(&normal, g, cfg.seeds.model).map_err(train_err)?;
        model.normalization = Some(stats.clone());
        out.gdn = Some(model);
        out.summaries.insert(DetectorId::Gdn.key().into(), summary);
    }
    if let Some(g) = &cfg.detectors.gat {
        let (mut model, summary) = train_gat(&normal, g, cfg.seeds.model).map_err(train_err)?;
        model.normalization = Some(stats.clone());
        out.gat = Some(model);
        out.summaries.insert(DetectorId::Gat.key().into(), summary);
    }
    out.normalization = Some(stats);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DetectorResult {
    pub detector: DetectorId,
    /// Verdict per evaluation window.
    pub window_fired: Vec<bool>,
    /// Verdict per sample; window detectors repeat their window verdict.
    pub sample_fired: Vec<bool>,
    /// Metrics under the configured counting.
    pub metrics: PointMetrics,
    pub verdicts: Option<Vec<DetectionVerdict>>,
    pub scores: Option<AnomalyScoreSeries>,
    pub ranking: Option<Vec<RankedBus>>,
    pub localization: Option<LocalizationMetrics>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub config: ScenarioConfig,
    pub traces: ScenarioTraces,
    /// Normalized angle differences seen by every detector.
    pub normalized: MeasurementTrace,
    pub window_starts: Vec<f64>,
    pub window_truth: Vec<bool>,
    pub sample_truth: Vec<bool>,
    pub detectors: Vec<DetectorResult>,
}

impl ScenarioOutcome {
    pub fn result(&self, id: DetectorId) -> Option<&DetectorResult> {
        self.detectors.iter().find(|d| d.detector == id)
    }
}

/// Samples from the first to the last attacked one, if any.
pub fn attack_span(mask: &LabelMask) -> Option<Range<usize>> {
    let any = mask.any();
    let first = any.iter().position(|&a| a)?;
    let last = any.iter().rposition(|&a| a)?;
    Some(first..last + 1)
}

fn expand(window_fired: &[bool], per_window: usize, samples: usize) -> Vec<bool> {
    let mut out: Vec<bool> = window_fired
        .iter()
        .flat_map(|&f| std::iter::repeat(f).take(per_window))
        .collect();
    out.resize(samples, false);
    out
}

/// Runs every configured detector over a simulated scenario.
pub fn evaluate_scenario(
    cfg: &ScenarioConfig,
    traces: ScenarioTraces,
    models: &TrainedModels,
) -> Result<ScenarioOutcome, EvalError> {
    let stats = match &models.normalization {
        Some(s) => s.clone(),
        None => NormalizationStats::fit(&[&traces.differences], cfg.normalization)?,
    };
    let normalized = stats.apply(&traces.differences)?;
    let width = cfg.evaluation.window_seconds;
    let wins = windows(&normalized, width, width, &traces.mask)?;
    let per_window = wins.first().map_or(1, |w| w.samples);
    let samples = normalized.num_samples();
    let window_truth: Vec<bool> = wins.iter().map(|w| w.attacked).collect();
    let sample_truth = traces.mask.any().to_vec();
    let span = attack_span(&traces.mask);
    let attacked = traces.mask.attacked_buses();

    let finish = |detector: DetectorId,
                  window_fired: Vec<bool>,
                  sample_fired: Vec<bool>|
     -> Result<DetectorResult, EvalError> {
        let metrics = match cfg.evaluation.counting {
            Counting::Window => point_metrics(&window_fired, &window_truth)?,
            Counting::Sample => point_metrics(&sample_fired, &sample_truth)?,
        };
        Ok(DetectorResult {
            detector,
            window_fired,
            sample_fired,
            metrics,
            verdicts: None,
            scores: None,
            ranking: None,
            localization: None,
        })
    };
    let from_verdicts = |detector: DetectorId, verdicts: Vec<DetectionVerdict>| -> Result<DetectorResult, EvalError> {
        let fired: Vec<bool> = verdicts.iter().map(|v| v.fired).collect();
        let per_sample = expand(&fired, per_window, samples);
        let mut r = finish(detector, fired, per_sample)?;
        r.verdicts = Some(verdicts);
        Ok(r)
    };
    let from_scores = |detector: DetectorId, scores: AnomalyScoreSeries| -> Result<DetectorResult, EvalError> {
        let fired = scores.window_verdicts(per_window);
        let mut r = finish(detector, fired, scores.fired.clone())?;
        if let (Some(span), false) = (&span, attacked.is_empty()) {
            let ranking = localize(&scores, span.clone())?;
            let ids: Vec<usize> = ranking.iter().map(|b| b.bus).collect();
            r.localization = Some(localization_metrics(&ids, &attacked, cfg.evaluation.localization_k)?);
            r.ranking = Some(ranking);
        }
        r.scores = Some(scores);
        Ok(r)
    };

    let mut detectors = Vec::new();
    if let Some(k) = &cfg.detectors.kmeans {
        let verdicts = wins
            .iter()
            .enumerate()
            .map(|(i, w)| kmeans_window_detector(i, w, k.threshold, cfg.seeds.clustering))
            .collect::<Result<Vec<_>, _>>()?;
        detectors.push(from_verdicts(DetectorId::Kmeans, verdicts)?);
    }
    if let Some(a) = &cfg.detectors.autoencoder {
        let verdicts = progressive_autoencoder(&wins, &a.model, a.threshold, cfg.seeds.model)?;
        detectors.push(from_verdicts(DetectorId::Autoencoder, verdicts)?);
    }
    if cfg.detectors.gdn.is_some() {
        let model = models.gdn.as_ref().ok_or_else(|| EvalError::Config {
            field: "detectors.gdn".into(),
            reason: "no trained GDN model".into(),
        })?;
        detectors.push(from_scores(DetectorId::Gdn, gdn_score(model, &normalized)?)?);
    }
    if cfg.detectors.gat.is_some() {
        let model = models.gat.as_ref().ok_or_else(|| EvalError::Config {
            field: "detectors.gat".into(),
            reason: "no trained GAT model".into(),
        })?;
        detectors.push(from_scores(DetectorId::Gat, gat_score(model, &normalized)?)?);
    }
    Ok(ScenarioOutcome {
        config: cfg.clone(),
        window_starts: wins.iter().map(|w| w.start_time).collect(),
        traces,
        normalized,
        window_truth,
        sample_truth,
        detectors,
    })
}

/// Trains, simulates and evaluates one scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(ScenarioOutcome, TrainedModels), EvalError> {
    let run = || -> Result<_, EvalError> {
        cfg.validate()?;
        let net = load_scenario_network(cfg)?;
        let models = train_models(cfg, &net)?;
        let traces = simulate_scenario(cfg, &net)?;
        Ok((evaluate_scenario(cfg, traces, &models)?, models))
    };
    run().map_err(|e| e.in_scenario(&cfg.name))
}
