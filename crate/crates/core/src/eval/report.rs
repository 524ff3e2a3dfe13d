//! Per-scenario output files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_trace, NormalizationStats};
use crate::graph::{GatModel, GdnModel};
use crate::neural::Checkpoint;
use crate::trace::MeasurementTrace;

use super::metrics::{ConfusionCounts, LocalizationMetrics};
use super::config::ScenarioConfig;
use super::pipeline::{DetectorResult, ScenarioOutcome, ScenarioTraces, TrainedModels};
use super::svg::{line_chart_svg, Series};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub false_positive_rate: f64,
    pub fired_windows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localization: Option<LocalizationMetrics>,
    /// Highest-ranked buses, up to the localization cut-off.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub top_buses: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub attack: String,
    pub targets: Vec<usize>,
    pub seeds: super::Seeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_seed: Option<u64>,
    pub counting: super::Counting,
    pub windows: usize,
    pub attacked_windows: usize,
    pub detectors: BTreeMap<String, DetectorSummary>,
}

impl DetectorSummary {
    fn new(r: &DetectorResult, k: usize) -> Self {
        Self {
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            f1: r.metrics.f1,
            counts: r.metrics.counts,
            false_positive_rate: r.metrics.false_positive_rate(),
            fired_windows: r.window_fired.iter().filter(|&&f| f).count(),
            threshold: r.scores.as_ref().map(|s| s.threshold),
            localization: r.localization,
            top_buses: r
                .ranking
                .as_ref()
                .map(|rk| rk.iter().take(k).map(|b| b.bus).collect())
                .unwrap_or_default(),
        }
    }
}

impl ScenarioSummary {
    pub fn new(outcome: &ScenarioOutcome) -> Self {
        let cfg = &outcome.config;
        Self {
            name: cfg.name.clone(),
            group: cfg.group.clone(),
            attack: cfg.attack.as_ref().map_or("none", |a| a.kind.name()).to_string(),
            targets: cfg.attack.as_ref().map(|a| a.targets.clone()).unwrap_or_default(),
            seeds: cfg.seeds,
            attack_seed: cfg.attack.as_ref().map(|a| a.seed),
            counting: cfg.evaluation.counting,
            windows: outcome.window_truth.len(),
            attacked_windows: outcome.window_truth.iter().filter(|&&t| t).count(),
            detectors: outcome
                .detectors
                .iter()
                .map(|r| (r.detector.key().to_string(), DetectorSummary::new(r, cfg.evaluation.localization_k)))
                .collect(),
        }
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

pub(crate) fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), EvalError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(header).map_err(&err)?;
    for r in rows {
        w.write_record(r).map_err(&err)?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|e| EvalError::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    write_text(path, &text)
}

fn strings<const N: usize>(cols: [&str; N]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn angle_plot(trace: &MeasurementTrace, buses: &[usize], title: &str) -> String {
    let series: Vec<Series> = buses
        .iter()
        .filter_map(|&b| trace.column_of(b).map(|c| (b, c)))
        .map(|(b, c)| Series {
            name: format!("bus {b}"),
            x: trace.times().to_vec(),
            y: trace.column(c),
            dashed: false,
        })
        .collect();
    line_chart_svg(title, "time (s)", "normalized angle difference", &series)
}

/// Writes the config and the measured and true traces, before any detector runs.
pub fn write_traces(cfg: &ScenarioConfig, traces: &ScenarioTraces, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    write_trace(&traces.simulation.measured, dir.join("trace_measured.csv"))?;
    write_trace(&traces.simulation.truth, dir.join("trace_true.csv"))?;
    Ok(())
}

/// Writes window verdicts, metrics, scores, rankings, the learned GDN graph and
/// plots of one evaluated scenario under `dir`. Traces come from [`write_traces`].
pub fn write_scenario_outputs(outcome: &ScenarioOutcome, models: &TrainedModels, dir: &Path) -> Result<ScenarioSummary, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let cfg = &outcome.config;

    let mut header = strings(["window", "start", "attacked"]);
    header.extend(outcome.detectors.iter().map(|d| d.detector.key().to_string()));
    let rows: Vec<Vec<String>> = (0..outcome.window_truth.len())
        .map(|i| {
            let mut r = vec![i.to_string(), outcome.window_starts[i].to_string(), (outcome.window_truth[i] as u8).to_string()];
            r.extend(outcome.detectors.iter().map(|d| (d.window_fired[i] as u8).to_string()));
            r
        })
        .collect();
    write_csv(&dir.join("windows.csv"), &header, &rows)?;

    let rows: Vec<Vec<String>> = outcome
        .detectors
        .iter()
        .map(|d| {
            let m = &d.metrics;
            vec![
                d.detector.key().to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
                m.counts.tp.to_string(),
                m.counts.fp.to_string(),
                m.counts.fn_.to_string(),
                m.counts.tn.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("metrics.csv"),
        &strings(["detector", "precision", "recall", "f1", "tp", "fp", "fn", "tn"]),
        &rows,
    )?;

    for d in &outcome.detectors {
        let key = d.detector.key();
        if let Some(verdicts) = &d.verdicts {
            let rows: Vec<Vec<String>> = verdicts
                .iter()
                .map(|v| {
                    let flagged: Vec<String> = v.flagged.iter().map(|b| b.to_string()).collect();
                    vec![v.window.to_string(), (v.fired as u8).to_string(), v.silhouette.to_string(), flagged.join(" ")]
                })
                .collect();
            write_csv(&dir.join(format!("verdicts_{key}.csv")), &strings(["window", "fired", "silhouette", "flagged"]), &rows)?;
        }
        if let Some(s) = &d.scores {
            let rows: Vec<Vec<String>> = (0..s.num_samples())
                .map(|k| {
                    vec![
                        s.times[k].to_string(),
                        s.overall[k].to_string(),
                        s.smoothed[k].to_string(),
                        (s.fired[k] as u8).to_string(),
                    ]
                })
                .collect();
            write_csv(&dir.join(format!("scores_{key}.csv")), &strings(["t", "score", "smoothed", "fired"]), &rows)?;
            let mut header = vec!["t".to_string()];
            header.extend(s.bus_ids.iter().map(|b| format!("bus_{b}")));
            let n = s.bus_ids.len();
            let rows: Vec<Vec<String>> = (0..s.num_samples())
                .map(|k| {
                    let mut r = vec![s.times[k].to_string()];
                    r.extend(s.per_sensor[k * n..(k + 1) * n].iter().map(|v| v.to_string()));
                    r
                })
                .collect();
            write_csv(&dir.join(format!("scores_{key}_buses.csv")), &header, &rows)?;
            let plot = line_chart_svg(
                &format!("{} anomaly score, {}", d.detector.label(), cfg.name),
                "time (s)",
                "score",
                &[
                    Series {
                        name: "smoothed score".into(),
                        x: s.times.clone(),
                        y: s.smoothed.clone(),
                        dashed: false,
                    },
                    Series {
                        name: "threshold".into(),
                        x: vec![s.times[0], *s.times.last().expect("non-empty")],
                        y: vec![s.threshold; 2],
                        dashed: true,
                    },
                ],
            );
            write_text(&dir.join(format!("scores_{key}.svg")), &plot)?;
        }
        if let Some(r) = &d.ranking {
            let rows: Vec<Vec<String>> = r
                .iter()
                .enumerate()
                .map(|(i, b)| vec![(i + 1).to_string(), b.bus.to_string(), b.score.to_string()])
                .collect();
            write_csv(&dir.join(format!("ranking_{key}.csv")), &strings(["rank", "bus", "score"]), &rows)?;
        }
    }
    if let Some(gdn) = &models.gdn {
        gdn.graph.write_csv(&gdn.bus_ids, dir.join("gdn_graph.csv"))?;
    }
    let mut shown: Vec<usize> = cfg.attack.as_ref().map(|a| a.targets.clone()).unwrap_or_default();
    shown.retain(|b| *b != cfg.reference_bus);
    for b in outcome.normalized.bus_ids() {
        if shown.len() >= 4 {
            break;
        }
        if !shown.contains(b) {
            shown.push(*b);
        }
    }
    write_text(&dir.join("angles.svg"), &angle_plot(&outcome.normalized, &shown, &cfg.name))?;

    let summary = ScenarioSummary::new(outcome);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Saves each trained model as a JSON checkpoint under `dir`.
pub fn write_checkpoints(models: &TrainedModels, dir: &Path) -> Result<Vec<std::path::PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let mut written = Vec::new();
    if let Some(m) = &models.gdn {
        let p = dir.join("gdn.json");
        m.to_checkpoint().save(&p)?;
        written.push(p);
    }
    if let Some(m) = &models.gat {
        let p = dir.join("gat.json");
        m.to_checkpoint().save(&p)?;
        written.push(p);
    }
    if !models.summaries.is_empty() {
        let p = dir.join("training.json");
        write_json(&p, &models.summaries)?;
        written.push(p);
    }
    Ok(written)
}

/// Loads whichever of `gdn.json` and `gat.json` exist under `dir`. The
/// normalization comes from the checkpoints, which must agree.
pub fn read_checkpoints(dir: &Path) -> Result<TrainedModels, EvalError> {
    let mut models = TrainedModels::none();
    let gdn = dir.join("gdn.json");
    if gdn.exists() {
        models.gdn = Some(GdnModel::from_checkpoint(&Checkpoint::load(&gdn)?)?);
    }
    let gat = dir.join("gat.json");
    if gat.exists() {
        models.gat = Some(GatModel::from_checkpoint(&Checkpoint::load(&gat)?)?);
    }
    let norms: Vec<&NormalizationStats> = models
        .gdn
        .iter()
        .filter_map(|m| m.normalization.as_ref())
        .chain(models.gat.iter().filter_map(|m| m.normalization.as_ref()))
        .collect();
    if norms.is_empty() {
        return Err(EvalError::Config {
            field: "models".into(),
            reason: format!("no checkpoints with normalization under {}", dir.display()),
        });
    }
    if norms.windows(2).any(|w| w[0] != w[1]) {
        return Err(EvalError::Config {
            field: "models".into(),
            reason: "checkpoints were trained with different normalizations".into(),
        });
    }
    models.normalization = Some(norms[0].clone());
    Ok(models)
}
