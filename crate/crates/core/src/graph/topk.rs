use std::io::Write;
use std::path::Path;

use crate::neural::Tensor;

use super::GraphError;

/// Directed graph where each sensor points to its `k` most similar sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKGraph {
    pub k: usize,
    pub neighbours: Vec<Vec<usize>>,
    pub similarities: Vec<Vec<f64>>,
    /// Sensors whose embedding has zero norm; their similarities are -1.
    pub zero_norm: Vec<usize>,
}

/// Picks, for every row of `embeddings`, the `k` other rows with the highest
/// cosine similarity. Ties go to the lower index.
pub fn learn_graph_topk(embeddings: &Tensor, k: usize) -> Result<TopKGraph, GraphError> {
    let n = embeddings.rows();
    if k == 0 || k >= n {
        return Err(GraphError::TopK { k, sensors: n });
    }
    let norms: Vec<f64> = (0..n).map(|i| embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let zero_norm: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    let mut neighbours = Vec::with_capacity(n);
    let mut similarities = Vec::with_capacity(n);
    let mut cand: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                -1.0
            } else {
                let dot: f64 = embeddings.row(i).iter().zip(embeddings.row(j)).map(|(a, b)| a * b).sum();
                dot / (norms[i] * norms[j])
            };
            cand.push((j, s));
        }
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        neighbours.push(cand[..k].iter().map(|c| c.0).collect());
        similarities.push(cand[..k].iter().map(|c| c.1).collect());
    }
    Ok(TopKGraph {
        k,
        neighbours,
        similarities,
        zero_norm,
    })
}

impl TopKGraph {
    /// Writes `sensor,neighbor,similarity` rows using the given bus ids.
    pub fn write_csv(&self, bus_ids: &[usize], path: impl AsRef<Path>) -> Result<(), GraphError> {
        let path = path.as_ref();
        let io = |source| GraphError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = String::from("sensor,neighbor,similarity\n");
        for (i, (nb, sim)) in self.neighbours.iter().zip(&self.similarities).enumerate() {
            for (j, s) in nb.iter().zip(sim) {
                out.push_str(&format!("{},{},{:.17e}\n", bus_ids[i], bus_ids[*j], s));
            }
        }
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(out.as_bytes()).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_prefer_low_indices() {
        let e = Tensor::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let g = learn_graph_topk(&e, 1).unwrap();
        assert_eq!(g.neighbours, vec![vec![1], vec![0], vec![0], vec![0]]);
        let same = Tensor::filled(5, 3, 2.0);
        let g = learn_graph_topk(&same, 2).unwrap();
        assert_eq!(g.neighbours[0], vec![1, 2]);
        assert_eq!(g.neighbours[1], vec![0, 2]);
        assert!(learn_graph_topk(&same, 5).is_err());
    }

    #[test]
    fn clusters_stay_together() {
        let e = Tensor::new(4, 2, vec![1.0, 0.1, 2.0, 0.2, -0.1, 1.0, -0.3, 3.0]).unwrap();
        let g = learn_graph_topk(&e, 1).unwrap();
        assert_eq!(g.neighbours, vec![vec![1], vec![0], vec![3], vec![2]]);
    }

    #[test]
    fn zero_norm_flagged() {
        let e = Tensor::new(3, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = learn_graph_topk(&e, 1).unwrap();
        assert_eq!(g.zero_norm, vec![0]);
        assert_eq!(g.similarities[0], vec![-1.0]);
        assert_eq!(g.neighbours[1], vec![2]);
    }
}
