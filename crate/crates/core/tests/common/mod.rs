//! Oracles shared by several test targets.
#![allow(dead_code)]

use anglewatch::neural::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Reference (precision, recall, F1) cells, by
/// placement/magnitude, detector and attack (poison, ramp, rtw, step).
pub const REPORTED: [(&str, &str, [(f64, f64, f64); 4]); 8] = [
    ("near-small", "gdn", [(0.58, 0.94, 0.72), (0.66, 0.93, 0.78), (0.68, 0.91, 0.78), (0.71, 0.94, 0.81)]),
    ("near-small", "gat", [(1.0, 1.0, 1.0), (1.0, 1.0, 1.0), (0.96, 1.0, 0.98), (0.95, 1.0, 0.97)]),
    ("near-large", "gdn", [(0.60, 0.91, 0.73), (0.75, 0.64, 0.69), (0.80, 0.70, 0.75), (0.85, 0.69, 0.77)]),
    ("near-large", "gat", [(1.0, 1.0, 1.0), (0.52, 1.0, 0.69), (0.53, 1.0, 0.69), (0.53, 1.0, 0.69)]),
    ("far-small", "gdn", [(0.58, 0.95, 0.72), (0.65, 0.88, 0.75), (0.82, 0.84, 0.83), (0.80, 0.84, 0.82)]),
    ("far-small", "gat", [(1.0, 1.0, 1.0), (1.0, 1.0, 1.0), (1.0, 1.0, 1.0), (1.0, 1.0, 1.0)]),
    ("far-large", "gdn", [(0.68, 0.77, 0.72), (0.82, 0.78, 0.80), (0.92, 0.90, 0.91), (0.84, 0.96, 0.90)]),
    ("far-large", "gat", [(1.0, 1.0, 1.0), (0.52, 1.0, 0.69), (0.53, 1.0, 0.69), (0.52, 1.0, 0.69)]),
];

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Compares tape gradients with central differences for every parameter entry.
/// Returns the worst relative error.
pub fn worst_relative_error(store: &mut ParamStore, build: impl Fn(&mut Tape, &ParamStore) -> Var) -> f64 {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.backward(loss);
    store.zero_grad();
    tape.accumulate(store);
    let ids: Vec<ParamId> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = store.grad(id).clone();
        for k in 0..analytic.len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + STEP;
            let mut t = Tape::new();
            let l = build(&mut t, store);
            let up = t.value(l).data()[0];
            store.value_mut(id).data_mut()[k] = orig - STEP;
            let mut t = Tape::new();
            let l = build(&mut t, store);
            let down = t.value(l).data()[0];
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[k];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(rel);
        }
    }
    store.zero_grad();
    worst
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Minimum within-cluster sum of squares over every partition into `k` non-empty groups.
pub fn brute_force_optimum(points: &[f64], k: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            sums[l] += points[i];
            counts[l] += 1;
        }
        if counts.contains(&0) {
            continue;
        }
        let j: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (points[i] - sums[l] / counts[l] as f64).powi(2))
            .sum();
        best = best.min(j);
    }
    best
}

/// Silhouette evaluated straight from its definition.
pub fn direct_silhouette(points: &[f64], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<f64> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).map(|j| (points[i] - points[j]).abs()).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c == labels[i] {
                continue;
            }
            let d: Vec<f64> = (0..n).filter(|&j| labels[j] == c).map(|j| (points[i] - points[j]).abs()).collect();
            if !d.is_empty() {
                b = b.min(d.iter().sum::<f64>() / d.len() as f64);
            }
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

