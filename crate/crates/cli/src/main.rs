use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anglewatch::attack::{apply_attack, attack_label_mask};
use anglewatch::dataset::{read_trace, write_trace};
use anglewatch::eval::{
    evaluate_scenario, load_scenario, load_scenario_network, load_suite, read_checkpoints, run_suite, simulate_scenario,
    train_models, write_checkpoints, write_scenario_outputs, write_traces, EvalError, ScenarioConfig, Stage,
};
use anglewatch::grid::simulate;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Attack simulation and detection benchmark for PMU voltage-angle data.
#[derive(Parser)]
#[command(name = "anglewatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario (or suite) TOML file.
    #[arg(short, long)]
    config: PathBuf,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for suite cells.
    #[arg(short, long, default_value_t = 1)]
    workers: usize,
    /// Output directory; defaults to the config's `output_dir`, then `out/<name>`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario's events and write the measured and true traces.
    Simulate(Common),
    /// Apply the scenario's attack offline to a trace (simulated when absent).
    Attack {
        #[command(flatten)]
        common: Common,
        /// Clean trace CSV to tamper with.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train the graph detectors and write checkpoints.
    Train(Common),
    /// Score the scenario with previously trained checkpoints.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Directory holding gdn.json and/or gat.json.
        #[arg(long)]
        models: PathBuf,
    },
    /// Train, simulate, detect and report one scenario.
    Evaluate(Common),
    /// Run every scenario of a suite file and write comparison tables.
    Suite(Common),
}

/// Error carrying the pipeline stage that failed.
#[derive(Debug)]
struct Failed(Stage);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed", self.0)
    }
}

impl std::error::Error for Failed {}

trait Staged<T> {
    fn staged(self) -> Result<T>;
}

impl<T, E: Into<EvalError>> Staged<T> for std::result::Result<T, E> {
    fn staged(self) -> Result<T> {
        self.map_err(|e| {
            let e: EvalError = e.into();
            let stage = e.stage();
            anyhow::Error::new(e).context(Failed(stage))
        })
    }
}

fn scenario(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = load_scenario(&common.config).staged()?;
    if let Some(s) = common.seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ScenarioConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&cfg.name))
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| EvalError::Io {
            path: dir.display().to_string(),
            source: e,
        })
        .staged()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = scenario(&common)?;
            let dir = out_dir(&common, &cfg);
            create(&dir)?;
            let net = load_scenario_network(&cfg).staged()?;
            let traces = simulate_scenario(&cfg, &net).staged()?;
            write_trace(&traces.simulation.measured, dir.join("trace_measured.csv")).staged()?;
            write_trace(&traces.simulation.truth, dir.join("trace_true.csv")).staged()?;
            println!("wrote traces for {} to {}", cfg.name, dir.display());
        }
        Command::Attack { common, trace } => {
            let cfg = scenario(&common)?;
            let spec = cfg
                .attack
                .clone()
                .ok_or_else(|| EvalError::Config {
                    field: "attack".into(),
                    reason: "scenario has no attack".into(),
                })
                .staged()?;
            let dir = out_dir(&common, &cfg);
            create(&dir)?;
            let clean = match trace {
                Some(p) => read_trace(&p).staged()?,
                None => {
                    let net = load_scenario_network(&cfg).staged()?;
                    simulate(&net, &cfg.events, &cfg.simulation, None).staged()?.measured
                }
            };
            let attacked = apply_attack(&clean, &spec).staged()?;
            let mask = attack_label_mask(&spec, clean.times(), clean.bus_ids()).staged()?;
            write_trace(&attacked, dir.join("trace_attacked.csv")).staged()?;
            let labels: String = std::iter::once("t,attacked\n".to_string())
                .chain(clean.times().iter().zip(mask.any()).map(|(t, a)| format!("{t},{}\n", *a as u8)))
                .collect();
            std::fs::write(dir.join("labels.csv"), labels).context("writing labels.csv")?;
            println!("wrote {} attack on {:?} to {}", spec.kind.name(), spec.targets, dir.display());
        }
        Command::Train(common) => {
            let cfg = scenario(&common)?;
            let dir = out_dir(&common, &cfg);
            let net = load_scenario_network(&cfg).staged()?;
            let models = train_models(&cfg, &net).staged()?;
            for p in write_checkpoints(&models, &dir).staged()? {
                println!("wrote {}", p.display());
            }
        }
        Command::Detect { common, models } => {
            let cfg = scenario(&common)?;
            let dir = out_dir(&common, &cfg);
            let models = read_checkpoints(&models).staged()?;
            let net = load_scenario_network(&cfg).staged()?;
            let traces = simulate_scenario(&cfg, &net).staged()?;
            write_traces(&cfg, &traces, &dir).staged()?;
            let outcome = evaluate_scenario(&cfg, traces, &models).staged()?;
            print_summary(&write_scenario_outputs(&outcome, &models, &dir).staged()?, &dir);
        }
        Command::Evaluate(common) => {
            let cfg = scenario(&common)?;
            let dir = out_dir(&common, &cfg);
            let net = load_scenario_network(&cfg).staged()?;
            let models = train_models(&cfg, &net).staged()?;
            let traces = simulate_scenario(&cfg, &net).staged()?;
            write_traces(&cfg, &traces, &dir).staged()?;
            let outcome = evaluate_scenario(&cfg, traces, &models).staged()?;
            write_checkpoints(&models, &dir.join("models")).staged()?;
            print_summary(&write_scenario_outputs(&outcome, &models, &dir).staged()?, &dir);
        }
        Command::Suite(common) => {
            let suite = load_suite(&common.config).staged()?;
            let dir = common
                .out
                .clone()
                .or_else(|| suite.output_dir.clone())
                .unwrap_or_else(|| Path::new("out").join(&suite.name));
            let outcome = run_suite(&suite, common.workers, common.seed, &dir).staged()?;
            for row in &outcome.summary.table {
                println!(
                    "{:<12} {:<7} {:<12} P {:.3} R {:.3} F1 {:.3}",
                    row.group, row.attack, row.detector, row.precision, row.recall, row.f1
                );
            }
            if let Some(h) = &outcome.summary.heldout {
                for (det, d) in &h.detectors {
                    println!("heldout      {det:<12} fired on {:.1}% of windows", 100.0 * d.false_positive_rate);
                }
            }
            println!("reports in {}", dir.display());
            if let Some(first) = outcome.summary.failed.first() {
                for f in &outcome.summary.failed {
                    eprintln!("cell {} failed in {}: {}", f.scenario, f.stage, f.error);
                }
                let stage = Stage::ALL.into_iter().find(|s| s.as_str() == first.stage).unwrap_or(Stage::Evaluate);
                return Err(anyhow::Error::new(Failed(stage)))
                    .context(format!("{} of the suite's cells failed", outcome.summary.failed.len()));
            }
        }
    }
    Ok(())
}

fn print_summary(summary: &anglewatch::eval::ScenarioSummary, dir: &Path) {
    for (det, d) in &summary.detectors {
        let top = if d.top_buses.is_empty() {
            String::new()
        } else {
            format!(" top {:?}", d.top_buses)
        };
        println!("{:<12} P {:.3} R {:.3} F1 {:.3}{top}", det, d.precision, d.recall, d.f1);
    }
    println!("reports in {}", dir.display());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.downcast_ref::<Failed>().map_or("io", |f| f.0.as_str());
            eprintln!("error[{stage}]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
