use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::steady::susceptance_matrix;
use super::{steady_state, synchronous_speed, BusKind, BusNetwork, GridError};
use crate::trace::{MeasurementTrace, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    #[default]
    LoadChange,
}

/// A step change in demand. Positive magnitude means more load (less injection).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEvent {
    #[serde(default)]
    pub kind: EventKind,
    pub bus: usize,
    pub magnitude: f64,
    pub time: f64,
}

impl GridEvent {
    pub fn load_change(bus: usize, magnitude: f64, time: f64) -> Self {
        Self {
            kind: EventKind::LoadChange,
            bus,
            magnitude,
            time,
        }
    }
}

/// Unit of the angle channel in measurement traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

impl AngleUnit {
    /// Multiplier from radians to this unit.
    pub fn per_radian(self) -> f64 {
        match self {
            AngleUnit::Radians => 1.0,
            AngleUnit::Degrees => 180.0 / std::f64::consts::PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Measurement rate (Hz).
    pub sample_rate: f64,
    /// Horizon (s); samples are taken at k / sample_rate for k < duration * sample_rate.
    pub duration: f64,
    /// RK4 step (s). Must divide the sample interval.
    pub step: f64,
    /// AGC reads the (possibly tampered) measured angles instead of the true ones.
    pub measurement_feedback: bool,
    /// AGC integral gain (1/s), scaled by each area's frequency bias.
    pub agc_gain: f64,
    /// Any |state| above this aborts the run.
    pub divergence_bound: f64,
    /// Unit of recorded (and tapped) angles. Dynamics always run in radians.
    pub angle_unit: AngleUnit,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sample_rate: 50.0,
            duration: 30.0,
            step: 0.02,
            measurement_feedback: true,
            agc_gain: 0.3,
            divergence_bound: 1e3,
            angle_unit: AngleUnit::Radians,
        }
    }
}

impl SimConfig {
    pub fn num_samples(&self) -> Result<usize, GridError> {
        self.check()?;
        Ok((self.duration * self.sample_rate).round() as usize)
    }

    fn substeps(&self) -> usize {
        ((1.0 / self.sample_rate) / self.step).round() as usize
    }

    fn check(&self) -> Result<(), GridError> {
        let bad = |field, reason: &str| Err(GridError::Config { field, reason: reason.into() });
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad("sample_rate", "must be positive");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration", "must be positive");
        }
        let interval = 1.0 / self.sample_rate;
        if !(self.step > 0.0) || self.step > interval * (1.0 + 1e-9) {
            return bad("step", "must be positive and no longer than the sample interval");
        }
        let ratio = interval / self.step;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return bad("step", "sample interval must be an integer multiple of the step");
        }
        let samples = self.duration * self.sample_rate;
        if (samples - samples.round()).abs() > 1e-6 || samples.round() < 1.0 {
            return bad("duration", "must hold a whole number of samples");
        }
        if !(self.agc_gain >= 0.0) {
            return bad("agc_gain", "must be non-negative");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound", "must be positive");
        }
        Ok(())
    }
}

/// Hook that rewrites measured angles before they are recorded and fed to AGC.
///
/// `angles` is in network bus order and in the configured [`AngleUnit`].
pub trait MeasurementTap {
    fn tap(&self, sample: usize, time: f64, angles: &mut [f64]);
}

impl<F: Fn(usize, f64, &mut [f64])> MeasurementTap for F {
    fn tap(&self, sample: usize, time: f64, angles: &mut [f64]) {
        self(sample, time, angles)
    }
}

/// Output of one closed-loop run.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// What the sensors reported (tampered when a tap was active).
    pub measured: MeasurementTrace,
    pub truth: MeasurementTrace,
    pub areas: Vec<usize>,
    /// Samples x areas: mean true rotor-speed deviation of each area (pu).
    pub area_frequency: Vec<f64>,
    /// Samples x areas: area frequency as estimated by AGC from angles (pu).
    pub agc_frequency: Vec<f64>,
    /// Samples x areas: AGC set-point offset (pu).
    pub agc_setpoint: Vec<f64>,
}

impl Simulation {
    fn area_series(buf: &[f64], areas: usize, a: usize) -> Vec<f64> {
        buf.iter().skip(a).step_by(areas).copied().collect()
    }

    pub fn frequency_of_area(&self, a: usize) -> Vec<f64> {
        Self::area_series(&self.area_frequency, self.areas.len(), a)
    }

    pub fn setpoint_of_area(&self, a: usize) -> Vec<f64> {
        Self::area_series(&self.agc_setpoint, self.areas.len(), a)
    }
}

/// Linearised multi-machine model in deviation form.
struct Model {
    ng: usize,
    gen_bus: Vec<usize>,
    other_bus: Vec<usize>,
    b_gg: DMatrix<f64>,
    b_gl: DMatrix<f64>,
    b_lg: DMatrix<f64>,
    ll: Option<Cholesky<f64, Dyn>>,
    inertia: Vec<f64>,
    damping: Vec<f64>,
    droop: Vec<f64>,
    tg: Vec<f64>,
    participation: Vec<f64>,
    gen_area: Vec<usize>,
    bus_area: Vec<usize>,
    area_bias: Vec<f64>,
    area_buses: Vec<usize>,
    area_gens: Vec<usize>,
    omega_s: f64,
}

impl Model {
    fn new(net: &BusNetwork) -> Result<Self, GridError> {
        let areas = net.areas();
        let area_pos = |a: usize| areas.binary_search(&a).unwrap();
        let gen_bus: Vec<usize> = net.generators().iter().map(|g| net.bus_index(g.bus).unwrap()).collect();
        let other_bus: Vec<usize> = (0..net.num_buses())
            .filter(|&i| net.buses()[i].kind != BusKind::Generator)
            .collect();
        let b = susceptance_matrix(net);
        let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| b[(rows[i], cols[j])]);
        let ll = if other_bus.is_empty() {
            None
        } else {
            let m = pick(&other_bus, &other_bus);
            Some(m.cholesky().ok_or_else(|| GridError::Singular {
                component: other_bus.iter().map(|&i| net.buses()[i].id).collect(),
            })?)
        };
        let gens = net.generators();
        let gen_area: Vec<usize> = gens.iter().map(|g| area_pos(g.area)).collect();
        let mut area_bias = vec![0.0; areas.len()];
        let mut area_gens = vec![0; areas.len()];
        for (g, &a) in gens.iter().zip(&gen_area) {
            area_bias[a] += g.droop_gain + g.damping;
            area_gens[a] += 1;
        }
        let bus_area: Vec<usize> = net.bus_areas().iter().map(|&a| area_pos(a)).collect();
        let mut area_buses = vec![0; areas.len()];
        for &a in &bus_area {
            area_buses[a] += 1;
        }
        Ok(Self {
            ng: gens.len(),
            b_gg: pick(&gen_bus, &gen_bus),
            b_gl: pick(&gen_bus, &other_bus),
            b_lg: pick(&other_bus, &gen_bus),
            gen_bus,
            other_bus,
            ll,
            inertia: gens.iter().map(|g| g.inertia).collect(),
            damping: gens.iter().map(|g| g.damping).collect(),
            droop: gens.iter().map(|g| g.droop_gain).collect(),
            tg: gens.iter().map(|g| g.governor_time_constant).collect(),
            participation: gens.iter().map(|g| g.participation).collect(),
            gen_area,
            bus_area,
            area_bias,
            area_buses,
            area_gens,
            omega_s: synchronous_speed(),
        })
    }

    /// Angle deviations of the non-generator buses for given rotor-angle and
    /// load deviations (Kron elimination of the algebraic buses).
    fn load_angles(&self, d_delta: &[f64], d_pl: &DVector<f64>) -> DVector<f64> {
        match &self.ll {
            None => DVector::zeros(0),
            Some(ch) => {
                let rhs = d_pl - &self.b_lg * DVector::from_column_slice(d_delta);
                ch.solve(&rhs)
            }
        }
    }

    fn electrical_power(&self, d_delta: &[f64], d_pl: &DVector<f64>) -> DVector<f64> {
        let dd = DVector::from_column_slice(d_delta);
        let mut pe = &self.b_gg * &dd;
        if self.ll.is_some() {
            pe += &self.b_gl * self.load_angles(d_delta, d_pl);
        }
        pe
    }

    /// State layout: [d_delta (ng), omega rad/s (ng), d_pm (ng)].
    fn derivative(&self, x: &[f64], d_pl: &DVector<f64>, d_pgen: &[f64], z: &[f64], out: &mut [f64]) {
        let ng = self.ng;
        let (dd, rest) = x.split_at(ng);
        let (om, dpm) = rest.split_at(ng);
        let pe = self.electrical_power(dd, d_pl);
        for i in 0..ng {
            let f = om[i] / self.omega_s;
            out[i] = om[i];
            out[ng + i] = (dpm[i] - pe[i] - d_pgen[i] - self.damping[i] * f) / self.inertia[i];
            let pref = self.participation[i] * z[self.gen_area[i]];
            out[2 * ng + i] = (pref - dpm[i] - self.droop[i] * f) / self.tg[i];
        }
    }

    fn rk4(&self, x: &mut [f64], h: f64, d_pl: &DVector<f64>, d_pgen: &[f64], z: &[f64]) {
        let n = x.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.derivative(x, d_pl, d_pgen, z, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.derivative(&tmp, d_pl, d_pgen, z, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.derivative(&tmp, d_pl, d_pgen, z, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        self.derivative(&tmp, d_pl, d_pgen, z, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Runs the closed-loop surrogate from the DC operating point.
///
/// Samples are recorded at `k / sample_rate`. At each sample the true bus angles
/// pass through `tap` (when given); AGC then estimates per-bus frequency by a
/// backward difference of the angles it is allowed to see, averages them per
/// area and integrates the area error into the generator set-points.
pub fn simulate(
    net: &BusNetwork,
    events: &[GridEvent],
    cfg: &SimConfig,
    tap: Option<&dyn MeasurementTap>,
) -> Result<Simulation, GridError> {
    let samples = cfg.num_samples()?;
    for (i, ev) in events.iter().enumerate() {
        if !(ev.time >= 0.0 && ev.time.is_finite()) {
            return Err(GridError::Event(format!("event {i} has invalid time {}", ev.time)));
        }
        if net.bus_index(ev.bus).is_none() {
            return Err(GridError::Event(format!("event {i} references unknown bus {}", ev.bus)));
        }
        if !ev.magnitude.is_finite() {
            return Err(GridError::Event(format!("event {i} has non-finite magnitude")));
        }
        if i > 0 && ev.time < events[i - 1].time {
            return Err(GridError::Event("events must be sorted by time".into()));
        }
    }

    let op = steady_state(net)?;
    let model = Model::new(net)?;
    let ng = model.ng;
    let nb = net.num_buses();
    let na = model.area_bias.len();
    let substeps = cfg.substeps();
    let h = 1.0 / cfg.sample_rate / substeps as f64;
    let h_sample = 1.0 / cfg.sample_rate;
    let unit = cfg.angle_unit.per_radian();

    let mut x = vec![0.0; 3 * ng];
    let mut z = vec![0.0; na];
    let mut d_pl = DVector::zeros(model.other_bus.len());
    let mut d_pgen = vec![0.0; ng];
    let other_pos: std::collections::HashMap<usize, usize> =
        model.other_bus.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let gen_pos: std::collections::HashMap<usize, usize> =
        model.gen_bus.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    let mut next_event = 0;
    let mut apply_events = |t: f64, d_pl: &mut DVector<f64>, d_pgen: &mut [f64]| {
        while next_event < events.len() && events[next_event].time <= t + 1e-9 * h {
            let ev = &events[next_event];
            let bi = net.bus_index(ev.bus).unwrap();
            match ev.kind {
                EventKind::LoadChange => {
                    if let Some(&k) = other_pos.get(&bi) {
                        d_pl[k] -= ev.magnitude;
                    } else {
                        d_pgen[gen_pos[&bi]] += ev.magnitude;
                    }
                }
            }
            next_event += 1;
        }
    };

    let mut truth = Vec::with_capacity(samples * nb);
    let mut measured = Vec::with_capacity(samples * nb);
    let mut area_frequency = Vec::with_capacity(samples * na);
    let mut agc_frequency = Vec::with_capacity(samples * na);
    let mut agc_setpoint = Vec::with_capacity(samples * na);
    let mut prev_input: Option<Vec<f64>> = None;
    let mut angles = vec![0.0; nb];
    let mut t = 0.0;

    let mut diverged: Option<(f64, f64)> = None;
    for k in 0..samples {
        let t_k = k as f64 / cfg.sample_rate;
        apply_events(t_k, &mut d_pl, &mut d_pgen);

        let d_theta_l = model.load_angles(&x[..ng], &d_pl);
        for (g, &bi) in model.gen_bus.iter().enumerate() {
            angles[bi] = (op.angles[bi] + x[g]) * unit;
        }
        for (l, &bi) in model.other_bus.iter().enumerate() {
            angles[bi] = (op.angles[bi] + d_theta_l[l]) * unit;
        }
        let mut meas = angles.clone();
        if let Some(tap) = tap {
            tap.tap(k, t_k, &mut meas);
        }
        let input = if cfg.measurement_feedback { &meas } else { &angles };

        let mut f_est = vec![0.0; na];
        if let Some(prev) = &prev_input {
            for bi in 0..nb {
                let a = model.bus_area[bi];
                f_est[a] += (input[bi] - prev[bi]) / (unit * h_sample * model.omega_s);
            }
            for a in 0..na {
                f_est[a] /= model.area_buses[a].max(1) as f64;
                z[a] -= cfg.agc_gain * model.area_bias[a] * f_est[a] * h_sample;
            }
        }
        prev_input = Some(input.clone());

        let mut f_true = vec![0.0; na];
        for g in 0..ng {
            f_true[model.gen_area[g]] += x[ng + g] / model.omega_s;
        }
        for a in 0..na {
            f_true[a] /= model.area_gens[a] as f64;
        }

        truth.extend_from_slice(&angles);
        measured.extend_from_slice(&meas);
        area_frequency.extend_from_slice(&f_true);
        agc_frequency.extend_from_slice(&f_est);
        agc_setpoint.extend_from_slice(&z);

        if k + 1 == samples {
            break;
        }
        for s in 0..substeps {
            if s > 0 {
                apply_events(t, &mut d_pl, &mut d_pgen);
            }
            model.rk4(&mut x, h, &d_pl, &d_pgen, &z);
            t = t_k + (s + 1) as f64 * h;
        }
        let magnitude = x.iter().chain(z.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        if !magnitude.is_finite() || magnitude > cfg.divergence_bound {
            diverged = Some((t, magnitude));
            break;
        }
    }

    let recorded = truth.len() / nb;
    let times = MeasurementTrace::uniform_times(recorded, cfg.sample_rate);
    let ids = net.bus_ids();
    let provenance = if tap.is_some() { Provenance::Attacked } else { Provenance::True };
    let sim = Simulation {
        measured: MeasurementTrace::new("", provenance, times.clone(), ids.clone(), measured)
            .expect("simulator produces a consistent grid"),
        truth: MeasurementTrace::new("", Provenance::True, times, ids, truth).expect("consistent grid"),
        areas: net.areas(),
        area_frequency,
        agc_frequency,
        agc_setpoint,
    };
    match diverged {
        Some((time, magnitude)) => Err(GridError::Diverged {
            time,
            magnitude,
            partial: Box::new(sim),
        }),
        None => Ok(sim),
    }
}
