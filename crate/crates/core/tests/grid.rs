use std::path::Path;

use anglewatch::attack::{AttackKind, AttackSpec, AttackTap};
use anglewatch::eval::{load_scenario, load_scenario_network, load_suite, simulate_scenario};
use anglewatch::grid::{
    load_network, parse_network, simulate, steady_state, synchronous_speed, AngleUnit, BusNetwork, GridError, GridEvent,
    SimConfig,
};
use proptest::prelude::*;

const TWO_BUS: &str = r#"
name = "toy2"
[[buses]]
id = 1
kind = "generator"
injection = 0.5
[[buses]]
id = 2
kind = "load"
injection = -0.5
[[lines]]
from = 1
to = 2
susceptance = 5.0
[[generators]]
bus = 1
inertia = 0.0265
damping = 1.0
droop_gain = 20.0
governor_time_constant = 0.5
participation = 1.0
area = 1
"#;

fn bundled() -> BusNetwork {
    load_network(concat!(env!("CARGO_MANIFEST_DIR"), "/data/ieee68.toml")).unwrap()
}

/// Dense Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn bundled_network_shape() {
    let net = bundled();
    assert_eq!(net.num_buses(), 68);
    assert_eq!(net.generators().len(), 16);
    assert_eq!(net.areas().len(), 5);
}

#[test]
fn dc_flow_agrees_with_an_independent_solve() {
    let net = bundled();
    let op = steady_state(&net).unwrap();
    let n = net.num_buses();
    let mut b = vec![vec![0.0; n]; n];
    for l in net.lines() {
        let (i, j) = (net.bus_index(l.from).unwrap(), net.bus_index(l.to).unwrap());
        b[i][i] += l.susceptance;
        b[j][j] += l.susceptance;
        b[i][j] -= l.susceptance;
        b[j][i] -= l.susceptance;
    }
    let r = net.bus_index(op.reference_bus).unwrap();
    let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
    let reduced: Vec<Vec<f64>> = keep.iter().map(|&i| keep.iter().map(|&j| b[i][j]).collect()).collect();
    let rhs: Vec<f64> = keep.iter().map(|&i| op.injections[i]).collect();
    let theta = solve(reduced, rhs);
    assert_eq!(op.angles[r], 0.0);
    for (k, &i) in keep.iter().enumerate() {
        assert!((theta[k] - op.angles[i]).abs() < 1e-9);
    }
    let residual = (0..n)
        .map(|i| ((0..n).map(|j| b[i][j] * op.angles[j]).sum::<f64>() - op.injections[i]).abs())
        .fold(0.0, f64::max);
    assert!(residual < 1e-9, "residual {residual}");
    assert!(op.residual < 1e-9);
    for (i, bus) in net.buses().iter().enumerate() {
        if i != r {
            assert_eq!(op.injections[i], bus.injection);
        }
    }
}

#[test]
fn two_bus_angle_difference() {
    let op = steady_state(&parse_network(TWO_BUS).unwrap()).unwrap();
    assert!((op.angles[0] - op.angles[1] - 0.1).abs() < 1e-15);
    let flat = parse_network(&TWO_BUS.replace("injection = 0.5", "injection = 0.0").replace("injection = -0.5", "injection = 0.0"))
        .unwrap();
    assert_eq!(steady_state(&flat).unwrap().angles, vec![0.0, 0.0]);
}

#[test]
fn malformed_networks_name_the_field() {
    let err = parse_network(&TWO_BUS.replace("to = 2", "to = 99")).unwrap_err();
    assert!(matches!(err, GridError::Validation { ref field, .. } if field == "lines[0].to"), "{err}");
    assert!(matches!(parse_network("[[buses]"), Err(GridError::Parse(_))));
}

#[test]
fn bundled_equilibrium_holds_for_thirty_seconds() {
    let net = bundled();
    let sim = simulate(&net, &[], &SimConfig::default(), None).unwrap();
    let op = steady_state(&net).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..sim.truth.num_samples() {
        for (a, b) in sim.truth.row(k).iter().zip(&op.angles) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "drift {worst}");
}

/// Continuous-time single-machine model with continuous AGC, integrated by
/// fine-step RK4. Returns the frequency deviation (pu) at each whole sample.
fn single_machine_frequency(load: f64, at: f64, duration: f64, rate: f64, agc_gain: f64) -> Vec<f64> {
    let (m, d, droop, tg) = (0.0265, 1.0, 20.0, 0.5);
    let ws = synchronous_speed();
    let bias = droop + d;
    let deriv = |x: [f64; 3], pl: f64| {
        let [omega, pm, z] = x;
        let f = omega / ws;
        [(pm - pl - d * f) / m, (z - pm - droop * f) / tg, -agc_gain * bias * f]
    };
    let per_sample = 200;
    let h = 1.0 / rate / per_sample as f64;
    let mut x = [0.0; 3];
    let mut out = Vec::new();
    let samples = (duration * rate).round() as usize;
    for k in 0..samples {
        out.push(x[0] / ws);
        for s in 0..per_sample {
            let t = k as f64 / rate + s as f64 * h;
            let pl = if t >= at - 1e-12 { load } else { 0.0 };
            let k1 = deriv(x, pl);
            let k2 = deriv(std::array::from_fn(|i| x[i] + 0.5 * h * k1[i]), pl);
            let k3 = deriv(std::array::from_fn(|i| x[i] + 0.5 * h * k2[i]), pl);
            let k4 = deriv(std::array::from_fn(|i| x[i] + h * k3[i]), pl);
            for i in 0..3 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    out
}

#[test]
fn two_bus_load_change_follows_the_reference_model() {
    let net = parse_network(TWO_BUS).unwrap();
    let cfg = SimConfig::default();
    let sim = simulate(&net, &[GridEvent::load_change(2, 0.1, 1.0)], &cfg, None).unwrap();
    let got = sim.frequency_of_area(0);
    let want = single_machine_frequency(0.1, 1.0, cfg.duration, cfg.sample_rate, cfg.agc_gain);
    let dip = want.iter().cloned().fold(0.0, f64::min);
    assert!(dip < -1e-3);
    // AGC is sampled in the simulator and continuous here; allow 5% of the dip.
    for (k, (a, b)) in got.iter().zip(&want).enumerate() {
        assert!((a - b).abs() < 0.05 * dip.abs(), "sample {k}: {a} vs {b}");
    }
    let at_25 = (25.0 * cfg.sample_rate) as usize;
    assert!(got[at_25].abs() < 1e-3 && want[at_25].abs() < 1e-3);
}

#[test]
fn attacked_measurements_move_the_agc_setpoint() {
    let net = parse_network(TWO_BUS).unwrap();
    let op = steady_state(&net).unwrap();
    let cfg = SimConfig::default();
    let events = [GridEvent::load_change(2, 0.1, 1.0)];
    let clean = simulate(&net, &events, &cfg, None).unwrap();
    let again = simulate(&net, &events, &cfg, None).unwrap();
    let spec = AttackSpec::new(AttackKind::Step { c: 1.03 }, vec![1], 2.0, 22.0, 0);
    let tap = AttackTap::new(&spec, &net, &op, cfg.angle_unit).unwrap();
    let attacked = simulate(&net, &events, &cfg, Some(&tap)).unwrap();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (zc, za) = (clean.setpoint_of_area(0), attacked.setpoint_of_area(0));
    // Residual: late-horizon wander of the clean set-point once restored.
    let tail = (25.0 * cfg.sample_rate) as usize;
    let settled = *zc.last().unwrap();
    let residual = zc[tail..].iter().map(|z| (z - settled).abs()).fold(0.0, f64::max);
    assert_eq!(diff(&zc, &again.setpoint_of_area(0)), 0.0);
    let shift = diff(&zc, &za);
    assert!(shift > 10.0 * residual && shift > 0.0, "shift {shift}, residual {residual}");
    // Before the attack both runs are identical.
    let t1 = (2.0 * cfg.sample_rate) as usize;
    assert_eq!(diff(&zc[..t1], &za[..t1]), 0.0);
}

#[test]
fn simulation_is_deterministic() {
    let net = bundled();
    let cfg = SimConfig { duration: 5.0, ..SimConfig::default() };
    let ev = [GridEvent::load_change(41, 1.0, 1.0)];
    let a = simulate(&net, &ev, &cfg, None).unwrap();
    let b = simulate(&net, &ev, &cfg, None).unwrap();
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.agc_setpoint, b.agc_setpoint);
}

#[test]
fn shipped_scenarios_keep_angles_bounded() {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data/scenarios"));
    let suite = load_suite(dir.join("suite.toml")).unwrap();
    let mut paths = suite.scenarios.clone();
    paths.extend(suite.heldout.clone());
    for p in paths {
        let cfg = load_scenario(&p).unwrap();
        let net = load_scenario_network(&cfg).unwrap();
        let traces = simulate_scenario(&cfg, &net).unwrap();
        let per_rad = cfg.simulation.angle_unit.per_radian();
        for trace in [&traces.simulation.truth, &traces.simulation.measured] {
            let worst = trace.values().iter().fold(0.0f64, |m, v| m.max(v.abs())) / per_rad;
            assert!(worst < 10.0, "{}: {worst} rad", cfg.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn load_changes_are_restored(bus_pick in 0usize..68, magnitude in -0.2f64..0.2) {
        let net = bundled();
        let bus = net.bus_ids()[bus_pick];
        let cfg = SimConfig { angle_unit: AngleUnit::Degrees, ..SimConfig::default() };
        let sim = simulate(&net, &[GridEvent::load_change(bus, magnitude, 1.0)], &cfg, None).unwrap();
        let rate = cfg.sample_rate as usize;
        for a in 0..net.areas().len() {
            let f = sim.frequency_of_area(a);
            prop_assert!(f.last().unwrap().abs() < 1e-3);
            // Nine seconds after the event the 5 s envelope keeps shrinking.
            let envelope: Vec<f64> = f[10 * rate..]
                .chunks(5 * rate)
                .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                .collect();
            for w in envelope.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "area {a}: envelope {envelope:?}");
            }
        }
    }
}
