use std::sync::Arc;

use crate::neural::{Neighbourhoods, Tape, Tensor};

use super::GraphError;

/// Single-head graph attention: `alpha_ij = softmax_j leaky(a_src . W h_i + a_dst . W h_j)`
/// over `j` in the neighbourhood of `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphAttentionLayer {
    /// `in x out`.
    pub weight: Tensor,
    /// Attention vector halves applied to the node itself and to its neighbour.
    pub attn_src: Vec<f64>,
    pub attn_dst: Vec<f64>,
    pub slope: f64,
    pub neighbourhoods: Vec<Vec<usize>>,
}

impl GraphAttentionLayer {
    fn check(&self, features: &Tensor) -> Result<(), GraphError> {
        let out = self.weight.cols();
        if features.cols() != self.weight.rows() {
            return Err(GraphError::Shape(format!(
                "feature width {} does not match weight rows {}",
                features.cols(),
                self.weight.rows()
            )));
        }
        if self.attn_src.len() != out || self.attn_dst.len() != out {
            return Err(GraphError::Shape(format!("attention vector halves must have length {out}")));
        }
        if self.neighbourhoods.len() != features.rows() {
            return Err(GraphError::Shape(format!(
                "{} neighbourhoods for {} nodes",
                self.neighbourhoods.len(),
                features.rows()
            )));
        }
        for (i, n) in self.neighbourhoods.iter().enumerate() {
            if n.is_empty() {
                return Err(GraphError::EmptyNeighbourhood(i));
            }
            if n.iter().any(|&j| j >= features.rows()) {
                return Err(GraphError::Shape(format!("neighbour of node {i} out of range")));
            }
        }
        Ok(())
    }
}

/// Dense `n x n` attention matrix; entries outside each neighbourhood are zero.
pub fn attention_coefficients(layer: &GraphAttentionLayer, features: &Tensor) -> Result<Tensor, GraphError> {
    layer.check(features)?;
    let n = features.rows();
    let mut tape = Tape::new();
    let h = tape.constant(features.clone());
    let w = tape.constant(layer.weight.clone());
    let wh = tape.matmul(h, w);
    let a_src = tape.constant(Tensor::new(layer.attn_src.len(), 1, layer.attn_src.clone()).map_err(GraphError::from)?);
    let a_dst = tape.constant(Tensor::new(layer.attn_dst.len(), 1, layer.attn_dst.clone()).map_err(GraphError::from)?);
    let src = tape.matmul(wh, a_src);
    let dst = tape.matmul(wh, a_dst);
    let nbrs = Arc::new(Neighbourhoods::from_lists(&layer.neighbourhoods));
    let out = tape.attend(wh, src, dst, nbrs.clone(), layer.slope);
    let alpha = tape.attention_weights(out).expect("attention node");
    let mut dense = Tensor::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for &j in nbrs.of(i) {
            let v = dense.get(i, j) + alpha[k];
            dense.set(i, j, v);
            k += 1;
        }
    }
    Ok(dense)
}

/// `h'_i = relu(sum_j alpha_ij W h_j)`.
pub fn attention_aggregate(layer: &GraphAttentionLayer, features: &Tensor, alpha: &Tensor) -> Result<Tensor, GraphError> {
    if features.cols() != layer.weight.rows() {
        return Err(GraphError::Shape(format!(
            "feature width {} does not match weight rows {}",
            features.cols(),
            layer.weight.rows()
        )));
    }
    if alpha.shape() != [features.rows(), features.rows()] {
        return Err(GraphError::Shape(format!(
            "attention matrix {:?} for {} nodes",
            alpha.shape(),
            features.rows()
        )));
    }
    let wh = features.matmul(&layer.weight)?;
    Ok(alpha.matmul(&wh)?.map(|v| v.max(0.0)))
}
