//! k-means, silhouette scores and the windowed clustering detector.
//!
//! Points are passed flat: `points[i * dim..(i + 1) * dim]` is point `i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::WindowMatrix;

pub const MAX_ITERATIONS: usize = 300;
/// Independent k-means++ restarts; the lowest objective wins.
pub const RESTARTS: usize = 10;
pub const DEFAULT_SILHOUETTE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("point data length {len} is not a multiple of dimension {dim}")]
    Shape { len: usize, dim: usize },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("silhouette needs at least two non-empty clusters")]
    SingleCluster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Within-cluster sum of squared distances.
    pub objective: f64,
    pub iterations: usize,
    pub reseeds: usize,
}

impl Clustering {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == c).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn point(points: &[f64], dim: usize, i: usize) -> &[f64] {
    &points[i * dim..(i + 1) * dim]
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn objective(points: &[f64], dim: usize, assignments: &[usize], centroids: &[f64]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(point(points, dim, i), &centroids[c * dim..(c + 1) * dim]))
        .sum()
}

fn check_points(points: &[f64], dim: usize, k: usize) -> Result<usize, ClusterError> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(ClusterError::Shape { len: points.len(), dim });
    }
    if k == 0 {
        return Err(ClusterError::ZeroClusters);
    }
    let n = points.len() / dim;
    if n < k {
        return Err(ClusterError::TooFewPoints { points: n, k });
    }
    if let Some(i) = points.iter().position(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite(i / dim));
    }
    Ok(n)
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a given seed.
///
/// Ties in assignment keep the current cluster, otherwise go to the lowest index.
/// A cluster left empty is re-seeded at the point farthest from its centroid.
/// At a fixpoint, single-point transfers that lower the objective are tried
/// before stopping. The best restart is then refined by swap search.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64) -> Result<Clustering, ClusterError> {
    let n = check_points(points, dim, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, dim, n, k, seed_plus_plus(points, dim, n, k, &mut rng));
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    // Swap search: relocate one centroid onto one data point and re-run.
    let mut rounds = 0;
    let mut improved = k > 1;
    while improved && rounds < MAX_ITERATIONS {
        improved = false;
        rounds += 1;
        for c in 0..k {
            for i in 0..n {
                let mut start = best.centroids.clone();
                start[c * dim..(c + 1) * dim].copy_from_slice(point(points, dim, i));
                let run = lloyd(points, dim, n, k, start);
                if run.objective < best.objective - 1e-12 * (1.0 + best.objective) {
                    best = run;
                    improved = true;
                }
            }
        }
    }
    Ok(best)
}

fn seed_plus_plus(points: &[f64], dim: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(point(points, dim, first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(points, dim, i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = centroids.len();
        centroids.extend_from_slice(point(points, dim, pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(points, dim, i), &centroids[c..c + dim]));
        }
    }
    centroids
}

fn lloyd(points: &[f64], dim: usize, n: usize, k: usize, mut centroids: Vec<f64>) -> Clustering {
    let mut assignments = vec![usize::MAX; n];
    let mut reseeds = 0;
    let mut iterations = 0;
    let mut previous = f64::INFINITY;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let p = point(points, dim, i);
            let cur = assignments[i];
            let mut best = cur;
            let mut best_d = if cur == usize::MAX {
                f64::INFINITY
            } else {
                sq_dist(p, &centroids[cur * dim..(cur + 1) * dim])
            };
            for c in 0..k {
                let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            if best != cur {
                assignments[i] = best;
                changed = true;
            }
        }
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
            // Farthest point from its own centroid, taken from a cluster that can spare it.
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(point(points, dim, a), &centroids[assignments[a] * dim..(assignments[a] + 1) * dim]);
                    let db = sq_dist(point(points, dim, b), &centroids[assignments[b] * dim..(assignments[b] + 1) * dim]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("n >= k leaves a cluster with spare points");
            assignments[far] = empty;
            centroids[empty * dim..(empty + 1) * dim].copy_from_slice(point(points, dim, far));
            reseeds += 1;
            changed = true;
        }
        update_centroids(points, dim, k, &assignments, &mut centroids);
        if !changed && transfer_one(points, dim, k, &mut assignments, &centroids) {
            update_centroids(points, dim, k, &assignments, &mut centroids);
            changed = true;
        }
        let j = objective(points, dim, &assignments, &centroids);
        debug_assert!(j <= previous * (1.0 + 1e-12) + 1e-12, "objective rose from {previous} to {j}");
        previous = j;
        if !changed {
            break;
        }
    }
    Clustering {
        k,
        objective: objective(points, dim, &assignments, &centroids),
        assignments,
        centroids,
        dim,
        iterations,
        reseeds,
    }
}

fn update_centroids(points: &[f64], dim: usize, k: usize, assignments: &[usize], centroids: &mut [f64]) {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point(points, dim, i)) {
            *s += v;
        }
    }
    for c in 0..k {
        for j in 0..dim {
            centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
        }
    }
}

/// Moves the single point whose transfer to another cluster lowers the objective
/// the most, accounting for both centroids shifting. Returns whether a move was made.
fn transfer_one(points: &[f64], dim: usize, k: usize, assignments: &mut [usize], centroids: &[f64]) -> bool {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, &own) in assignments.iter().enumerate() {
        if counts[own] < 2 {
            continue;
        }
        let p = point(points, dim, i);
        let m = counts[own] as f64;
        let loss = m / (m - 1.0) * sq_dist(p, &centroids[own * dim..(own + 1) * dim]);
        for c in (0..k).filter(|&c| c != own) {
            let m = counts[c] as f64;
            let gain = loss - m / (m + 1.0) * sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
            if gain > 1e-12 * (1.0 + loss) && best.map_or(true, |b| gain > b.2) {
                best = Some((i, c, gain));
            }
        }
    }
    match best {
        Some((i, c, _)) => {
            assignments[i] = c;
            true
        }
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteReport {
    pub scores: Vec<f64>,
    pub mean: f64,
}

/// Per-point silhouette `(b - a) / max(a, b)` with Euclidean distances.
/// Points alone in their cluster score 0.
pub fn silhouette_mean(points: &[f64], dim: usize, assignments: &[usize]) -> Result<SilhouetteReport, ClusterError> {
    let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
    let n = check_points(points, dim, 1)?;
    assert_eq!(n, assignments.len(), "one assignment per point");
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if n < 2 || sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut scores = Vec::with_capacity(n);
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            scores.push(0.0);
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        let p = point(points, dim, i);
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += sq_dist(p, point(points, dim, j)).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        scores.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    Ok(SilhouetteReport { scores, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub window: usize,
    pub fired: bool,
    /// Bus ids in the minority cluster when fired, sorted.
    pub flagged: Vec<usize>,
    pub silhouette: f64,
    pub minority_size: usize,
    /// The two clusters had equal size.
    pub tie: bool,
}

impl DetectionVerdict {
    fn quiet(window: usize, silhouette: f64) -> Self {
        Self {
            window,
            fired: false,
            flagged: Vec::new(),
            silhouette,
            minority_size: 0,
            tie: false,
        }
    }
}

/// Two-way clustering of per-sensor feature vectors gated by mean silhouette.
///
/// Points are reordered by bus id first, so the verdict does not depend on
/// sensor order. Equal-size clusters are broken toward the one whose members
/// lie farther, on average, from the other cluster's centroid.
pub fn silhouette_gate(
    window: usize,
    bus_ids: &[usize],
    points: &[f64],
    dim: usize,
    threshold: f64,
    seed: u64,
) -> Result<DetectionVerdict, ClusterError> {
    let n = check_points(points, dim, 2)?;
    assert_eq!(n, bus_ids.len(), "one bus id per point");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| bus_ids[i]);
    let ids: Vec<usize> = order.iter().map(|&i| bus_ids[i]).collect();
    let sorted: Vec<f64> = order.iter().flat_map(|&i| point(points, dim, i).iter().copied()).collect();

    let first = point(&sorted, dim, 0);
    if (1..n).all(|i| point(&sorted, dim, i) == first) {
        return Ok(DetectionVerdict::quiet(window, 0.0));
    }
    let cl = kmeans(&sorted, dim, 2, seed)?;
    let sil = silhouette_mean(&sorted, dim, &cl.assignments)?.mean;
    if !(sil >= threshold) {
        return Ok(DetectionVerdict::quiet(window, sil));
    }
    let sizes = cl.sizes();
    let tie = sizes[0] == sizes[1];
    let minority = if tie {
        let spread = |c: usize| {
            let other = cl.centroid(1 - c);
            let m = cl.members(c);
            m.iter().map(|&i| sq_dist(point(&sorted, dim, i), other).sqrt()).sum::<f64>() / m.len() as f64
        };
        let (s0, s1) = (spread(0), spread(1));
        // Exact symmetry falls back to the cluster holding the lowest bus id.
        if s0 > s1 || (s0 == s1 && cl.assignments[0] == 0) {
            0
        } else {
            1
        }
    } else if sizes[0] < sizes[1] {
        0
    } else {
        1
    };
    let flagged: Vec<usize> = cl.members(minority).into_iter().map(|i| ids[i]).collect();
    Ok(DetectionVerdict {
        window,
        fired: true,
        minority_size: flagged.len(),
        flagged,
        silhouette: sil,
        tie,
    })
}

/// Clusters the sensors of one window, each described by its raw samples.
pub fn kmeans_window_detector(
    window_id: usize,
    window: &WindowMatrix,
    threshold: f64,
    seed: u64,
) -> Result<DetectionVerdict, ClusterError> {
    silhouette_gate(window_id, &window.bus_ids, &window.data, window.samples, threshold, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_groups() {
        let cl = kmeans(&[0.0, 0.1, 9.9, 10.0], 1, 2, 7).unwrap();
        assert_eq!(cl.assignments[0], cl.assignments[1]);
        assert_eq!(cl.assignments[2], cl.assignments[3]);
        assert_ne!(cl.assignments[0], cl.assignments[2]);
        assert!((cl.objective - 0.01).abs() < 1e-12);
    }

    #[test]
    fn identical_points_reseed_once() {
        let cl = kmeans(&[3.0; 6], 1, 2, 1).unwrap();
        assert_eq!(cl.objective, 0.0);
        assert_eq!(cl.sizes().iter().filter(|&&s| s > 0).count(), 2);
        let run = lloyd(&[3.0; 6], 1, 6, 2, vec![3.0, 3.0]);
        assert_eq!(run.reseeds, 1);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [1.0, 2.0, 3.0, 6.0];
        let cl = kmeans(&pts, 1, 1, 0).unwrap();
        assert_eq!(cl.centroids, vec![3.0]);
        assert!((cl.objective - 14.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_errors() {
        assert_eq!(kmeans(&[1.0], 1, 2, 0), Err(ClusterError::TooFewPoints { points: 1, k: 2 }));
        assert_eq!(kmeans(&[1.0, 2.0, 3.0], 2, 1, 0), Err(ClusterError::Shape { len: 3, dim: 2 }));
        assert_eq!(kmeans(&[1.0, f64::NAN], 1, 1, 0), Err(ClusterError::NonFinite(1)));
    }

    #[test]
    fn silhouette_values() {
        let r = silhouette_mean(&[0.0, 1.0, 10.0, 11.0], 1, &[0, 0, 1, 1]).unwrap();
        let inner = (9.5 - 1.0) / 9.5;
        let outer = (10.5 - 1.0) / 10.5;
        assert!((r.mean - (inner + outer) / 2.0).abs() < 1e-12);
        assert!((r.mean - 0.8997).abs() < 1e-4);

        let zero = silhouette_mean(&[0.0, 0.0, 5.0, 5.0], 1, &[0, 0, 1, 1]).unwrap();
        assert_eq!(zero.mean, 1.0);
        let inter = silhouette_mean(&[0.0, 1.0, 2.0, 3.0], 1, &[0, 1, 0, 1]).unwrap();
        assert!(inter.mean < 0.5);
        let single = silhouette_mean(&[0.0, 4.0, 5.0], 1, &[0, 1, 1]).unwrap();
        assert_eq!(single.scores[0], 0.0);
        assert_eq!(silhouette_mean(&[0.0, 1.0], 1, &[0, 0]), Err(ClusterError::SingleCluster));
    }

    fn window(series: Vec<Vec<f64>>) -> WindowMatrix {
        let samples = series[0].len();
        let ids: Vec<usize> = (1..=series.len()).collect();
        WindowMatrix {
            start_sample: 0,
            start_time: 0.0,
            width: samples as f64 / 50.0,
            bus_ids: ids,
            data: series.concat(),
            samples,
            attacked: false,
            attacked_buses: Vec::new(),
        }
    }

    #[test]
    fn detector_flags_offset_sensor() {
        let mut series: Vec<Vec<f64>> = (0..68).map(|_| vec![0.0; 50]).collect();
        series[40] = vec![10.0; 50];
        let w = window(series);
        let v = kmeans_window_detector(0, &w, 0.8, 3).unwrap();
        assert!(v.fired);
        assert_eq!(v.flagged, vec![41]);
        assert!(v.silhouette > 0.98);
        assert!(!kmeans_window_detector(0, &w, 1.1, 3).unwrap().fired);

        let flat = window((0..68).map(|_| vec![0.0; 50]).collect());
        assert!(!kmeans_window_detector(0, &flat, 0.8, 3).unwrap().fired);
    }

    #[test]
    fn tie_breaks_toward_spread_cluster() {
        let pts = [0.0, 0.0, 0.0, 0.0, 10.0, 3.0, 10.0, -3.0];
        let v = silhouette_gate(0, &[1, 2, 3, 4], &pts, 2, 0.5, 0).unwrap();
        assert!(v.fired && v.tie);
        assert_eq!(v.flagged, vec![3, 4]);
    }
}
