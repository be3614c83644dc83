//! Minimal reverse-mode differentiation over 2D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! as borrowed leaves, so building a graph never copies weights.
//! [`Graph::backward`] takes one or more seed gradients (the derivatives of a
//! scalar objective with respect to output nodes) and returns gradients for
//! every node that depends on a parameter or a variable leaf.
//!
//! The op set is closed: matmul (with optional transposes), add, bias add,
//! scale, layer norm, GELU, row softmax, column slice, row/column concat,
//! row mixing (gather, mean-pool, bilinear sampling and nearest upsampling
//! are all sparse row mixes) and reshape.

use std::borrow::Cow;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, matmul, Tensor, View};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Sparse row weights: output row `q` is `Σ w · input.row(r)` over `rows[q]`.
pub type RowMix = Vec<Vec<(usize, f64)>>;

enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    AddRow { a: NodeId, bias: NodeId },
    Scale { a: NodeId, s: f64 },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    SliceCols { a: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Mix { a: NodeId, rows: RowMix },
    Reshape(NodeId),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<Option<NodeId>>,
}

pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl Gradients {
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.param_nodes[id.0].and_then(|n| self.nodes[n.0].as_ref())
    }

    /// Parameter gradients in store order; unused parameters get `None`.
    pub fn into_param_grads(mut self) -> Vec<Option<Tensor>> {
        self.param_nodes.iter().map(|n| n.and_then(|n| self.nodes[n.0].take())).collect()
    }
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    const K: f64 = 0.044_715;
    let u = C * (x + K * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x);
    (y, dy)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node { value: Cow::Borrowed(self.params.value(id)), op: Op::Leaf, needs_grad: true });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, needs_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient (used for input-gradient checks).
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, needs_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let va = View::of(self.value(a));
        let vb = View::of(self.value(b));
        let va = if ta { va.t() } else { va };
        let vb = if tb { vb.t() } else { vb };
        let out = matmul(va, vb);
        self.push(out, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let mut out = x.clone();
        out.add_assign(y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds the `1 × cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let x = self.value(a);
        let b = self.value(bias);
        assert_eq!((1, x.cols), b.shape(), "bias shape mismatch");
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, v) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow { a, bias }, &[a, bias])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale { a, s }, &[a])
    }

    /// Per-row normalization with `1 × cols` gain and shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        assert_eq!((g.len(), b.len()), (cols, cols), "layer norm parameter shape mismatch");
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        self.push(out, Op::LayerNorm { a, gamma, beta, xhat, rstd }, &[a, gamma, beta])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| gelu(x).0);
        self.push(out, Op::Gelu(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.cols, "column slice out of range");
        let mut out = Tensor::zeros(x.rows, len);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let v = self.value(*p);
                assert_eq!(v.rows, rows, "concat_cols row mismatch");
                out.row_mut(r)[c0..c0 + v.cols].copy_from_slice(v.row(r));
                c0 += v.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&v.data);
        }
        let rows = data.len() / cols.max(1);
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Output row `q` is the weighted sum of the input rows listed in `rows[q]`.
    pub fn mix_rows(&mut self, a: NodeId, rows: RowMix) -> NodeId {
        let x = self.value(a);
        let mut out = Tensor::zeros(rows.len(), x.cols);
        for (q, terms) in rows.iter().enumerate() {
            let dst = &mut out.data[q * x.cols..(q + 1) * x.cols];
            for &(r, w) in terms {
                assert!(r < x.rows, "row index {r} out of range");
                for (o, v) in dst.iter_mut().zip(x.row(r)) {
                    *o += w * v;
                }
            }
        }
        self.push(out, Op::Mix { a, rows }, &[a])
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        self.mix_rows(a, idx.iter().map(|&i| vec![(i, 1.0)]).collect())
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).rows;
        self.mix_rows(a, vec![(0..n).map(|r| (r, 1.0 / n as f64)).collect()])
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape changes element count");
        let out = Tensor::from_vec(rows, cols, x.data.clone());
        self.push(out, Op::Reshape(a), &[a])
    }

    /// `x · W + b` for a `1 × out` bias row.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Back-propagates the seed gradients (one per output node, each shaped
    /// like that node's value).
    pub fn backward(&self, seeds: &[(NodeId, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            assert_eq!(self.value(*id).shape(), g.shape(), "seed gradient shape mismatch");
            accumulate(&mut grads, *id, g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_op(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { nodes: grads, param_nodes: self.param_nodes.clone() }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backward_op(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let va = View::of(self.value(*a));
                let vb = View::of(self.value(*b));
                let ap = if *ta { va.t() } else { va };
                let bp = if *tb { vb.t() } else { vb };
                let vg = View::of(g);
                if self.wants(*a) {
                    let buf = grad_buf(grads, *a, self.value(*a));
                    if *ta {
                        gemm(bp, vg.t(), 1.0, &mut buf.data);
                    } else {
                        gemm(vg, bp.t(), 1.0, &mut buf.data);
                    }
                }
                if self.wants(*b) {
                    let buf = grad_buf(grads, *b, self.value(*b));
                    if *tb {
                        gemm(vg.t(), ap, 1.0, &mut buf.data);
                    } else {
                        gemm(ap.t(), vg, 1.0, &mut buf.data);
                    }
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if self.wants(*x) {
                        accumulate(grads, *x, g.clone());
                    }
                }
            }
            Op::AddRow { a, bias } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*bias) {
                    let mut s = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in s.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *bias, s);
                }
            }
            Op::Scale { a, s } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.map(|v| v * s));
                }
            }
            Op::LayerNorm { a, gamma, beta, xhat, rstd } => {
                let (rows, cols) = g.shape();
                let gm = &self.value(*gamma).data;
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut dg = Tensor::zeros(1, cols);
                    let mut db = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gv = g.data[r * cols + c];
                            dg.data[c] += gv * xhat[r * cols + c];
                            db.data[c] += gv;
                        }
                    }
                    if self.wants(*gamma) {
                        accumulate(grads, *gamma, dg);
                    }
                    if self.wants(*beta) {
                        accumulate(grads, *beta, db);
                    }
                }
                if self.wants(*a) {
                    let mut dx = Tensor::zeros(rows, cols);
                    let n = cols as f64;
                    for r in 0..rows {
                        let mut sum_g = 0.0;
                        let mut sum_gx = 0.0;
                        for c in 0..cols {
                            let gh = g.data[r * cols + c] * gm[c];
                            sum_g += gh;
                            sum_gx += gh * xhat[r * cols + c];
                        }
                        for c in 0..cols {
                            let gh = g.data[r * cols + c] * gm[c];
                            dx.data[r * cols + c] = rstd[r] / n * (n * gh - sum_g - xhat[r * cols + c] * sum_gx);
                        }
                    }
                    accumulate(grads, *a, dx);
                }
            }
            Op::Gelu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    let data = x.data.iter().zip(&g.data).map(|(&x, &gv)| gv * gelu(x).1).collect();
                    accumulate(grads, *a, Tensor::from_vec(x.rows, x.cols, data));
                }
            }
            Op::SoftmaxRows(a) => {
                if self.wants(*a) {
                    let y = &self.nodes[i].value;
                    let mut dx = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(grads, *a, dx);
                }
            }
            Op::SliceCols { a, start } => {
                if self.wants(*a) {
                    let buf = grad_buf(grads, *a, self.value(*a));
                    for r in 0..g.rows {
                        for (o, v) in buf.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let cols = self.value(*p).cols;
                    if self.wants(*p) {
                        let buf = grad_buf(grads, *p, self.value(*p));
                        for r in 0..g.rows {
                            for (o, v) in buf.row_mut(r).iter_mut().zip(&g.row(r)[c0..c0 + cols]) {
                                *o += v;
                            }
                        }
                    }
                    c0 += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut o0 = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.wants(*p) {
                        let buf = grad_buf(grads, *p, self.value(*p));
                        for (o, v) in buf.data.iter_mut().zip(&g.data[o0..o0 + n]) {
                            *o += v;
                        }
                    }
                    o0 += n;
                }
            }
            Op::Mix { a, rows } => {
                if self.wants(*a) {
                    let buf = grad_buf(grads, *a, self.value(*a));
                    let cols = g.cols;
                    for (q, terms) in rows.iter().enumerate() {
                        let src = g.row(q);
                        for &(r, w) in terms {
                            for (o, v) in buf.data[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                *o += w * v;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    let x = self.value(*a);
                    accumulate(grads, *a, Tensor::from_vec(x.rows, x.cols, g.data.clone()));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn grad_buf<'g>(grads: &'g mut [Option<Tensor>], id: NodeId, like: &Tensor) -> &'g mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(like.rows, like.cols))
}
