//! False-data attacks on angle measurements and their ground-truth masks.
//!
//! All four attacks act only on target buses and only for `t1 <= t <= t2`:
//!
//! | kind   | attacked value                                   |
//! |--------|--------------------------------------------------|
//! | step   | `c * phi`                                        |
//! | poison | `phi + c`, `c ~ N(mean, std^2)` per bus and sample |
//! | ramp   | `(1 + m (t - t1)) * phi`                         |
//! | rtw    | `(1 + beta (t - t1) (phi - phi_nom)) * phi`        |
//!
//! The riding-the-wave attack can also be run in its literal product form
//! `beta (t - t1) (phi - phi_nom) * phi` via [`AttackKind::Rtw::literal`].

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{AngleUnit, BusNetwork, MeasurementTap, OperatingPoint};
use crate::trace::{MeasurementTrace, Provenance};

/// Identifier recorded in outputs for the poison noise generator.
pub const POISON_RNG: &str = "chacha8-boxmuller-v1";

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("attack window [{t1}, {t2}] is invalid: {reason}")]
    Window { t1: f64, t2: f64, reason: String },
    #[error("attack has no target buses")]
    NoTargets,
    #[error("target bus {0} listed twice")]
    DuplicateTarget(usize),
    #[error("target bus {0} is not in the trace")]
    UnknownBus(usize),
    #[error("invalid attack parameter `{0}`")]
    Parameter(&'static str),
    #[error("time grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttackKind {
    Step {
        c: f64,
    },
    Poison {
        mean: f64,
        std: f64,
    },
    Ramp {
        slope: f64,
    },
    Rtw {
        beta: f64,
        /// Nominal angle per target bus; defaults to the pre-event value.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nominal: Option<Vec<f64>>,
        /// Use `c(t) * phi` instead of `(1 + c(t)) * phi`.
        #[serde(default)]
        literal: bool,
    },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Step { .. } => "step",
            AttackKind::Poison { .. } => "poison",
            AttackKind::Ramp { .. } => "ramp",
            AttackKind::Rtw { .. } => "rtw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    pub targets: Vec<usize>,
    pub t1: f64,
    pub t2: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, targets: Vec<usize>, t1: f64, t2: f64, seed: u64) -> Self {
        Self {
            kind,
            targets,
            t1,
            t2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.t1 >= 0.0 && self.t1.is_finite() && self.t2.is_finite() && self.t1 < self.t2) {
            return Err(AttackError::Window {
                t1: self.t1,
                t2: self.t2,
                reason: "need 0 <= t1 < t2".into(),
            });
        }
        if self.targets.is_empty() {
            return Err(AttackError::NoTargets);
        }
        for (i, b) in self.targets.iter().enumerate() {
            if self.targets[..i].contains(b) {
                return Err(AttackError::DuplicateTarget(*b));
            }
        }
        match &self.kind {
            AttackKind::Step { c } if !c.is_finite() => return Err(AttackError::Parameter("c")),
            AttackKind::Poison { mean, .. } if !mean.is_finite() => return Err(AttackError::Parameter("mean")),
            AttackKind::Poison { std, .. } if !(*std >= 0.0 && std.is_finite()) => {
                return Err(AttackError::Parameter("std"))
            }
            AttackKind::Ramp { slope } if !slope.is_finite() => return Err(AttackError::Parameter("slope")),
            AttackKind::Rtw { beta, .. } if !beta.is_finite() => return Err(AttackError::Parameter("beta")),
            AttackKind::Rtw { nominal: Some(n), .. } if n.len() != self.targets.len() => {
                return Err(AttackError::Parameter("nominal"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn in_window(&self, t: f64) -> bool {
        let eps = 1e-9;
        t >= self.t1 - eps && t <= self.t2 + eps
    }

    /// Attacked value of one measurement. `target` indexes `self.targets`;
    /// callers guarantee `in_window(t)`.
    pub fn distort(&self, target: usize, sample: usize, t: f64, phi: f64, nominal: f64) -> f64 {
        let elapsed = t - self.t1;
        match &self.kind {
            AttackKind::Step { c } => c * phi,
            AttackKind::Poison { mean, std } => {
                phi + mean + std * standard_normal(self.seed, self.targets[target], sample)
            }
            AttackKind::Ramp { slope } => (1.0 + slope * elapsed) * phi,
            AttackKind::Rtw { beta, literal, nominal: given } => {
                let nom = given.as_ref().map_or(nominal, |n| n[target]);
                let c = beta * elapsed * (phi - nom);
                if *literal {
                    c * phi
                } else {
                    (1.0 + c) * phi
                }
            }
        }
    }
}

/// Deterministic N(0, 1) draw keyed by (seed, bus, sample).
pub fn standard_normal(seed: u64, bus: usize, sample: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(bus as u64);
    rng.set_word_pos(sample as u128 * 4);
    let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn target_columns(spec: &AttackSpec, bus_ids: &[usize]) -> Result<Vec<usize>, AttackError> {
    spec.targets
        .iter()
        .map(|&b| bus_ids.iter().position(|&x| x == b).ok_or(AttackError::UnknownBus(b)))
        .collect()
}

/// Applies an attack to a recorded trace (open loop).
///
/// The RTW nominal angle of each target defaults to its first sample.
pub fn apply_attack(trace: &MeasurementTrace, spec: &AttackSpec) -> Result<MeasurementTrace, AttackError> {
    spec.validate()?;
    let cols = target_columns(spec, trace.bus_ids())?;
    let times = trace.times();
    let end = times[times.len() - 1] + trace.dt();
    if spec.t1 < times[0] - 1e-9 || spec.t2 > end + 1e-9 {
        return Err(AttackError::Window {
            t1: spec.t1,
            t2: spec.t2,
            reason: format!("outside trace span [{}, {}]", times[0], end),
        });
    }
    let nominal: Vec<f64> = cols.iter().map(|&c| trace.get(0, c)).collect();
    let n = trace.num_buses();
    let mut out = trace.clone().with_provenance(Provenance::Attacked);
    let first = trace.sample_at_or_after(spec.t1);
    let values = out.values_mut();
    for k in first..times.len() {
        let t = times[k];
        if !spec.in_window(t) {
            break;
        }
        for (ti, &c) in cols.iter().enumerate() {
            let v = &mut values[k * n + c];
            *v = spec.distort(ti, k, t, *v, nominal[ti]);
        }
    }
    Ok(out)
}

/// Closed-loop form of an attack: rewrites live measurements inside the simulator.
pub struct AttackTap {
    spec: AttackSpec,
    columns: Vec<usize>,
    nominal: Vec<f64>,
}

impl AttackTap {
    /// RTW nominal angles default to the operating-point angles, expressed in the
    /// measurement unit.
    pub fn new(spec: &AttackSpec, net: &BusNetwork, op: &OperatingPoint, unit: AngleUnit) -> Result<Self, AttackError> {
        spec.validate()?;
        let columns: Vec<usize> = spec
            .targets
            .iter()
            .map(|&b| net.bus_index(b).ok_or(AttackError::UnknownBus(b)))
            .collect::<Result<_, _>>()?;
        let nominal = columns.iter().map(|&c| op.angles[c] * unit.per_radian()).collect();
        Ok(Self {
            spec: spec.clone(),
            columns,
            nominal,
        })
    }
}

impl MeasurementTap for AttackTap {
    fn tap(&self, sample: usize, time: f64, angles: &mut [f64]) {
        if !self.spec.in_window(time) {
            return;
        }
        for (ti, &c) in self.columns.iter().enumerate() {
            angles[c] = self.spec.distort(ti, sample, time, angles[c], self.nominal[ti]);
        }
    }
}

/// Ground truth: which (sample, bus) cells carry attacked data.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    bus_ids: Vec<usize>,
    cells: Vec<bool>,
    any: Vec<bool>,
}

impl LabelMask {
    /// All-false mask for attack-free runs.
    pub fn clean(samples: usize, bus_ids: &[usize]) -> Self {
        Self {
            bus_ids: bus_ids.to_vec(),
            cells: vec![false; samples * bus_ids.len()],
            any: vec![false; samples],
        }
    }

    pub fn num_samples(&self) -> usize {
        self.any.len()
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    pub fn get(&self, sample: usize, column: usize) -> bool {
        self.cells[sample * self.bus_ids.len() + column]
    }

    /// Per-sample flag: true when any bus is attacked.
    pub fn any(&self) -> &[bool] {
        &self.any
    }

    pub fn column_count(&self, column: usize) -> usize {
        (0..self.num_samples()).filter(|&k| self.get(k, column)).count()
    }

    /// Bus ids with at least one attacked sample.
    pub fn attacked_buses(&self) -> Vec<usize> {
        (0..self.bus_ids.len())
            .filter(|&c| self.column_count(c) > 0)
            .map(|c| self.bus_ids[c])
            .collect()
    }

    /// Restricts the mask to the given bus columns (e.g. after dropping a reference bus).
    pub fn select(&self, bus_ids: &[usize]) -> Self {
        let n = self.bus_ids.len();
        let cols: Vec<Option<usize>> = bus_ids.iter().map(|b| self.bus_ids.iter().position(|x| x == b)).collect();
        let mut cells = Vec::with_capacity(self.num_samples() * bus_ids.len());
        let mut any = vec![false; self.num_samples()];
        for k in 0..self.num_samples() {
            for c in &cols {
                let v = c.is_some_and(|c| self.cells[k * n + c]);
                any[k] |= v;
                cells.push(v);
            }
        }
        Self {
            bus_ids: bus_ids.to_vec(),
            cells,
            any,
        }
    }
}

pub fn attack_label_mask(spec: &AttackSpec, times: &[f64], bus_ids: &[usize]) -> Result<LabelMask, AttackError> {
    if times.is_empty() {
        return Err(AttackError::EmptyGrid);
    }
    spec.validate()?;
    let cols = target_columns(spec, bus_ids)?;
    let mut mask = LabelMask::clean(times.len(), bus_ids);
    let n = bus_ids.len();
    for (k, &t) in times.iter().enumerate() {
        if spec.in_window(t) {
            for &c in &cols {
                mask.cells[k * n + c] = true;
            }
            mask.any[k] = true;
        }
    }
    Ok(mask)
}
