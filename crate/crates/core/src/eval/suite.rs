//! Batches of scenarios sharing trained models, with comparison tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{load_scenario, ScenarioConfig, SuiteConfig};
use super::pipeline::{evaluate_scenario, load_scenario_network, simulate_scenario, train_models, training_key, DetectorId, TrainedModels};
use super::report::{write_checkpoints, write_csv, write_json, write_scenario_outputs, write_text, write_traces, ScenarioSummary};
use super::svg::bar_chart_svg;
use super::EvalError;

/// Column order of comparison tables.
const ATTACK_ORDER: [&str; 4] = ["poison", "ramp", "rtw", "step"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: String,
    pub group: String,
    pub attack: String,
    pub detector: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A cell whose pipeline stopped; the rest of the suite still ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub scenario: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub name: String,
    pub scenarios: Vec<ScenarioSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout: Option<ScenarioSummary>,
    pub table: Vec<CellResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failed: Vec<FailedCell>,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub summary: SuiteSummary,
    pub out_dir: PathBuf,
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Loads every scenario of the suite, applying an optional seed override.
pub(crate) fn load_cells(suite: &SuiteConfig, seed: Option<u64>) -> Result<(Vec<ScenarioConfig>, Option<ScenarioConfig>), EvalError> {
    let load = |p: &PathBuf| -> Result<ScenarioConfig, EvalError> {
        let mut c = load_scenario(p)?;
        if let Some(s) = seed {
            c.override_seed(s);
        }
        Ok(c)
    };
    let cells = suite.scenarios.iter().map(load).collect::<Result<Vec<_>, _>>()?;
    let heldout = suite.heldout.as_ref().map(load).transpose()?;
    if cells.is_empty() && heldout.is_none() {
        return Err(EvalError::NoScenarios);
    }
    let mut names: Vec<&str> = cells.iter().chain(&heldout).map(|c| c.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(EvalError::Config {
            field: "scenarios".into(),
            reason: format!("duplicate scenario name `{}`", w[0]),
        });
    }
    Ok((cells, heldout))
}

fn table_rows(scenarios: &[ScenarioSummary]) -> Vec<CellResult> {
    let mut rows = Vec::new();
    for s in scenarios {
        for (det, d) in &s.detectors {
            rows.push(CellResult {
                scenario: s.name.clone(),
                group: s.group.clone().unwrap_or_else(|| "ungrouped".into()),
                attack: s.attack.clone(),
                detector: det.clone(),
                precision: d.precision,
                recall: d.recall,
                f1: d.f1,
            });
        }
    }
    let rank = |a: &str| ATTACK_ORDER.iter().position(|x| *x == a).unwrap_or(ATTACK_ORDER.len());
    let det_rank = |d: &str| DetectorId::ALL.iter().position(|x| x.key() == d).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        (a.group.as_str(), det_rank(&a.detector), rank(&a.attack), a.attack.as_str())
            .cmp(&(b.group.as_str(), det_rank(&b.detector), rank(&b.attack), b.attack.as_str()))
    });
    rows
}

fn write_tables(rows: &[CellResult], dir: &Path) -> Result<(), EvalError> {
    let mut groups: BTreeMap<&str, Vec<&CellResult>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.group.as_str()).or_default().push(r);
    }
    for (group, cells) in groups {
        let mut attacks: Vec<&str> = cells.iter().map(|c| c.attack.as_str()).collect();
        attacks.sort_by_key(|a| (ATTACK_ORDER.iter().position(|x| x == a).unwrap_or(ATTACK_ORDER.len()), *a));
        attacks.dedup();
        let mut detectors: Vec<&str> = Vec::new();
        for c in &cells {
            if !detectors.contains(&c.detector.as_str()) {
                detectors.push(&c.detector);
            }
        }
        let mut header = vec!["detector".to_string()];
        for a in &attacks {
            for m in ["precision", "recall", "f1"] {
                header.push(format!("{a}_{m}"));
            }
        }
        let mut table = Vec::new();
        let mut bars = Vec::new();
        for d in &detectors {
            let mut row = vec![d.to_string()];
            let mut f1s = Vec::new();
            for a in &attacks {
                match cells.iter().find(|c| c.detector == *d && c.attack == *a) {
                    Some(c) => {
                        row.extend([format!("{:.4}", c.precision), format!("{:.4}", c.recall), format!("{:.4}", c.f1)]);
                        f1s.push(c.f1);
                    }
                    None => {
                        row.extend([String::new(), String::new(), String::new()]);
                        f1s.push(0.0);
                    }
                }
            }
            table.push(row);
            let label = DetectorId::ALL.iter().find(|x| x.key() == *d).map_or(d.to_string(), |x| x.label().to_string());
            bars.push((label, f1s));
        }
        let name = safe_name(group);
        write_csv(&dir.join(format!("table_{name}.csv")), &header, &table)?;
        let cats: Vec<String> = attacks.iter().map(|a| a.to_string()).collect();
        write_text(
            &dir.join(format!("bars_{name}.svg")),
            &bar_chart_svg(&format!("F1 by attack, {group}"), "F1", &cats, &bars),
        )?;
    }
    let long: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.scenario.clone(),
                r.group.clone(),
                r.attack.clone(),
                r.detector.clone(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("table.csv"),
        &["scenario", "group", "attack", "detector", "precision", "recall", "f1"].map(String::from),
        &long,
    )
}

type Trained = Result<Arc<TrainedModels>, FailedCell>;

fn failure(name: &str, e: EvalError) -> FailedCell {
    FailedCell {
        scenario: name.to_string(),
        stage: e.stage().as_str().to_string(),
        error: e.to_string(),
    }
}

/// Runs a suite: trains models once per distinct training setup, evaluates the
/// cells on `workers` threads and writes every report under `out_dir`. A cell
/// that fails is recorded in the summary and the others continue.
pub fn run_suite(suite: &SuiteConfig, workers: usize, seed: Option<u64>, out_dir: &Path) -> Result<SuiteOutcome, EvalError> {
    let (cells, heldout) = load_cells(suite, seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Config {
            field: "workers".into(),
            reason: e.to_string(),
        })?;
    std::fs::create_dir_all(out_dir).map_err(|e| EvalError::io(out_dir, e))?;

    let all: Vec<(&ScenarioConfig, bool)> = cells.iter().map(|c| (c, false)).chain(heldout.iter().map(|c| (c, true))).collect();
    let keys: Vec<String> = all.iter().map(|(c, _)| training_key(c)).collect();
    let mut distinct = keys.clone();
    distinct.sort();
    distinct.dedup();

    let results: Vec<(Result<ScenarioSummary, FailedCell>, bool)> = pool.install(|| {
        let trained: Vec<(String, Trained)> = distinct
            .par_iter()
            .enumerate()
            .map(|(i, key)| {
                let owner = all[keys.iter().position(|k| k == key).expect("key from list")].0;
                let train = || -> Result<TrainedModels, EvalError> {
                    let net = load_scenario_network(owner)?;
                    let models = train_models(owner, &net)?;
                    write_checkpoints(&models, &out_dir.join("models").join(format!("setup_{i}")))?;
                    Ok(models)
                };
                (key.clone(), train().map(Arc::new).map_err(|e| failure(&owner.name, e)))
            })
            .collect();
        all.par_iter()
            .zip(keys.par_iter())
            .map(|((cfg, is_heldout), key)| {
                let models = match &trained.iter().find(|(k, _)| k == key).expect("trained").1 {
                    Ok(m) => m.clone(),
                    Err(f) => {
                        let mut f = f.clone();
                        f.scenario = cfg.name.clone();
                        f.error = format!("shared training failed: {}", f.error);
                        return (Err(f), *is_heldout);
                    }
                };
                let run = || -> Result<ScenarioSummary, EvalError> {
                    let dir = out_dir.join("cells").join(safe_name(&cfg.name));
                    let net = load_scenario_network(cfg)?;
                    let traces = simulate_scenario(cfg, &net)?;
                    write_traces(cfg, &traces, &dir)?;
                    let outcome = evaluate_scenario(cfg, traces, &models)?;
                    write_scenario_outputs(&outcome, &models, &dir)
                };
                (run().map_err(|e| failure(&cfg.name, e)), *is_heldout)
            })
            .collect()
    });

    let mut scenarios = Vec::new();
    let mut held = None;
    let mut failed = Vec::new();
    for (r, is_heldout) in results {
        match r {
            Ok(s) if is_heldout => held = Some(s),
            Ok(s) => scenarios.push(s),
            Err(f) => failed.push(f),
        }
    }
    scenarios.sort_by(|a, b| a.name.cmp(&b.name));
    failed.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    let table = table_rows(&scenarios);
    write_tables(&table, out_dir)?;
    let summary = SuiteSummary {
        name: suite.name.clone(),
        scenarios,
        heldout: held,
        table,
        failed,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(SuiteOutcome {
        summary,
        out_dir: out_dir.to_path_buf(),
    })
}
