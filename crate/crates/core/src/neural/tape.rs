//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Each operation appends a node holding its output; [`Tape::backward`] walks
//! the nodes in reverse. Shape errors inside the tape are programming errors
//! and panic; model entry points validate user input beforehand.

use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Neighbour lists in compressed row form: node `i` attends to `of(i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbourhoods {
    offsets: Vec<usize>,
    cols: Vec<usize>,
}

impl Neighbourhoods {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for l in lists {
            cols.extend_from_slice(l);
            offsets.push(cols.len());
        }
        Self { offsets, cols }
    }

    /// `blocks` disjoint complete graphs of `size` nodes each.
    pub fn complete_blocks(blocks: usize, size: usize, include_self: bool) -> Self {
        let mut lists = Vec::with_capacity(blocks * size);
        for b in 0..blocks {
            for i in 0..size {
                lists.push((0..size).filter(|&j| include_self || j != i).map(|j| b * size + j).collect());
            }
        }
        Self::from_lists(&lists)
    }

    /// Repeats this graph over `blocks` copies, offsetting node indices.
    pub fn tiled(&self, blocks: usize) -> Self {
        let n = self.num_nodes();
        let mut lists = Vec::with_capacity(blocks * n);
        for b in 0..blocks {
            for i in 0..n {
                lists.push(self.of(i).iter().map(|&j| b * n + j).collect());
            }
        }
        Self::from_lists(&lists)
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn lists(&self) -> Vec<Vec<usize>> {
        (0..self.num_nodes()).map(|i| self.of(i).to_vec()).collect()
    }
}

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    BlockTranspose(Var, usize),
    Reshape(Var),
    Mse(Var, Var),
    MeanAll(Var),
    Attend {
        wh: Var,
        src: Var,
        dst: Var,
        nbrs: Arc<Neighbourhoods>,
        slope: f64,
        alpha: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Transposes each of `blocks` stacked row blocks: `(b*r) x c` becomes `(b*c) x r`.
pub fn block_transpose(t: &Tensor, blocks: usize) -> Tensor {
    let r = t.rows() / blocks;
    let c = t.cols();
    assert_eq!(r * blocks, t.rows(), "rows divisible by block count");
    let mut out = Tensor::zeros(blocks * c, r);
    let src = t.data();
    let dst = out.data_mut();
    for b in 0..blocks {
        for i in 0..r {
            for j in 0..c {
                dst[(b * c + j) * r + i] = src[(b * r + i) * c + j];
            }
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shapes");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf(None))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf(Some(id)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols(), tb.rows(), "matmul inner dimensions");
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        gemm(ta, false, tb, false, &mut out, 0.0);
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!(tr.shape(), [1, ta.cols()], "bias row shape");
        let mut out = ta.clone();
        let c = ta.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % c];
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| leaky(x, slope));
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat row counts");
            let c = t.cols();
            for i in 0..rows {
                out.row_mut(i)[off..off + c].copy_from_slice(t.row(i));
            }
            off += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let t = self.value(a);
        assert!(lo <= hi && hi <= t.cols(), "column slice bounds");
        let out = Tensor::from_fn(t.rows(), hi - lo, |i, j| t.get(i, lo + j));
        self.push(out, Op::SliceCols(a, lo))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Tensor::zeros(idx.len(), c);
        for (k, &r) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(t.row(r));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    pub fn block_transpose(&mut self, a: Var, blocks: usize) -> Var {
        let out = block_transpose(self.value(a), blocks);
        self.push(out, Op::BlockTranspose(a, blocks))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols).expect("reshape size");
        self.push(out, Op::Reshape(a))
    }

    /// Mean of squared differences, as a `1 x 1` tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mse shapes");
        let n = ta.len().max(1) as f64;
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(Tensor::scalar(s / n), Op::Mse(a, b))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(a))
    }

    /// Graph attention: for node `i`, logits `leaky(src_i + dst_j)` over its
    /// neighbours `j` are softmax-normalised into weights that average rows of `wh`.
    /// `src` and `dst` are `n x 1`.
    pub fn attend(&mut self, wh: Var, src: Var, dst: Var, nbrs: Arc<Neighbourhoods>, slope: f64) -> Var {
        let (tw, ts, td) = (self.value(wh), self.value(src), self.value(dst));
        let n = tw.rows();
        assert_eq!(nbrs.num_nodes(), n, "one neighbourhood per node");
        assert_eq!(ts.shape(), [n, 1], "source logits shape");
        assert_eq!(td.shape(), [n, 1], "target logits shape");
        let f = tw.cols();
        let mut alpha = vec![0.0; nbrs.cols.len()];
        let mut out = Tensor::zeros(n, f);
        for i in 0..n {
            let (lo, hi) = (nbrs.offsets[i], nbrs.offsets[i + 1]);
            assert!(hi > lo, "node {i} has no neighbours");
            let si = ts.data()[i];
            let mut max = f64::NEG_INFINITY;
            for (k, &j) in nbrs.cols[lo..hi].iter().enumerate() {
                let l = leaky(si + td.data()[j], slope);
                alpha[lo + k] = l;
                max = max.max(l);
            }
            let mut z = 0.0;
            for a in &mut alpha[lo..hi] {
                *a = (*a - max).exp();
                z += *a;
            }
            let row = out.row_mut(i);
            for (k, &j) in nbrs.cols[lo..hi].iter().enumerate() {
                let a = alpha[lo + k] / z;
                alpha[lo + k] = a;
                for (o, v) in row.iter_mut().zip(tw.row(j)) {
                    *o += a * v;
                }
            }
        }
        self.push(
            out,
            Op::Attend {
                wh,
                src,
                dst,
                nbrs,
                slope,
                alpha,
            },
        )
    }

    /// Attention weights of an [`Tape::attend`] node, aligned with its neighbour lists.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attend { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Back-propagates from a `1 x 1` output.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).shape(), [1, 1], "loss must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    /// Adds gradients of parameter leaves into the store.
    pub fn accumulate(&self, store: &mut ParamStore) {
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Leaf(Some(id)), Some(g)) = (&node.op, g) {
                store.add_grad(*id, g);
            }
        }
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                gemm(g, false, tb, true, &mut da, 0.0);
                let mut db = Tensor::zeros(tb.rows(), tb.cols());
                gemm(ta, true, g, false, &mut db, 0.0);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, zip_map(g, val(*b), |x, y| x * y));
                acc(grads, *b, zip_map(g, val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                let c = g.cols();
                let mut dr = Tensor::zeros(1, c);
                for r in 0..g.rows() {
                    for (d, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(grads, *a, g.clone());
                acc(grads, *row, dr);
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::Tanh(a) => acc(grads, *a, zip_map(g, y, |d, t| d * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(grads, *a, zip_map(g, y, |d, s| d * s * (1.0 - s))),
            Op::Relu(a) => acc(grads, *a, zip_map(g, y, |d, o| if o > 0.0 { d } else { 0.0 })),
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                acc(grads, *a, zip_map(g, x, |d, v| if v > 0.0 { d } else { d * slope }))
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = val(p).cols();
                    let d = Tensor::from_fn(g.rows(), c, |r, j| g.get(r, off + j));
                    acc(grads, p, d);
                    off += c;
                }
            }
            Op::SliceCols(a, lo) => {
                let ta = val(*a);
                let mut d = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*lo..*lo + g.cols()].copy_from_slice(g.row(r));
                }
                acc(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let mut d = Tensor::zeros(ta.rows(), ta.cols());
                for (k, &r) in idx.iter().enumerate() {
                    for (o, v) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(grads, *a, d);
            }
            Op::BlockTranspose(a, blocks) => acc(grads, *a, block_transpose(g, *blocks)),
            Op::Reshape(a) => {
                let ta = val(*a);
                acc(grads, *a, g.clone().reshaped(ta.rows(), ta.cols()).expect("same size"));
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let k = 2.0 * g.data()[0] / ta.len().max(1) as f64;
                let d = zip_map(ta, tb, |x, y| k * (x - y));
                acc(grads, *b, d.map(|x| -x));
                acc(grads, *a, d);
            }
            Op::MeanAll(a) => {
                let ta = val(*a);
                let k = g.data()[0] / ta.len().max(1) as f64;
                acc(grads, *a, Tensor::filled(ta.rows(), ta.cols(), k));
            }
            Op::Attend {
                wh,
                src,
                dst,
                nbrs,
                slope,
                alpha,
            } => {
                let (tw, ts, td) = (val(*wh), val(*src), val(*dst));
                let n = tw.rows();
                let mut dwh = Tensor::zeros(tw.rows(), tw.cols());
                let mut ds = Tensor::zeros(n, 1);
                let mut dd = Tensor::zeros(n, 1);
                let mut dalpha = Vec::new();
                for i in 0..n {
                    let (lo, hi) = (nbrs.offsets[i], nbrs.offsets[i + 1]);
                    let gi = g.row(i);
                    dalpha.clear();
                    let mut weighted = 0.0;
                    for (k, &j) in nbrs.cols[lo..hi].iter().enumerate() {
                        let a = alpha[lo + k];
                        let dot: f64 = gi.iter().zip(tw.row(j)).map(|(x, y)| x * y).sum();
                        dalpha.push(dot);
                        weighted += a * dot;
                        for (o, v) in dwh.row_mut(j).iter_mut().zip(gi) {
                            *o += a * v;
                        }
                    }
                    let si = ts.data()[i];
                    for (k, &j) in nbrs.cols[lo..hi].iter().enumerate() {
                        let s = si + td.data()[j];
                        let dl = if s > 0.0 { 1.0 } else { *slope };
                        let dlogit = alpha[lo + k] * (dalpha[k] - weighted) * dl;
                        ds.data_mut()[i] += dlogit;
                        dd.data_mut()[j] += dlogit;
                    }
                }
                acc(grads, *wh, dwh);
                acc(grads, *src, ds);
                acc(grads, *dst, dd);
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(g) => {
            for (x, y) in g.data_mut().iter_mut().zip(d.data()) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(d),
    }
}
