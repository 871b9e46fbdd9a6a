//! Recording backend and reverse-mode differentiation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backend::Backend;
use super::kernels::{self, AttnShape};
use super::ops;
use super::tensor::{Precision, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logarithms in losses.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Sigmoid(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        means: Vec<f64>,
        rstds: Vec<f64>,
    },
    Embed {
        table: NodeId,
        ids: Vec<usize>,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    SelectRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    ConcatRows(NodeId, NodeId),
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        shape: AttnShape,
        probs: Vec<f64>,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    /// Negative sum of selected flat entries.
    NllPick {
        x: NodeId,
        picks: Vec<usize>,
    },
    Bce {
        p: NodeId,
        labels: Vec<f64>,
        weights: Vec<f64>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of primitive operations. Nodes are appended in execution order, so
/// the node list is already a topological order.
#[derive(Debug)]
pub struct Graph {
    precision: Precision,
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
    rng: ChaCha8Rng,
}

/// Gradients of one loss with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Self::with_seed(precision, 0)
    }

    /// `seed` drives dropout masks.
    pub fn with_seed(precision: Precision, seed: u64) -> Self {
        Graph {
            precision,
            nodes: Vec::new(),
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.push((name.into(), id));
        id
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul(self.value(a), self.value(b), self.precision)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let v = ops::scale(self.value(x), s, self.precision);
        self.push(v, Op::Scale(x, s), &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::softmax(self.value(x), self.precision)?;
        Ok(self.push(v, Op::Softmax(x), &[x]))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::log_softmax(self.value(x), self.precision)?;
        Ok(self.push(v, Op::LogSoftmax(x), &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let v = Tensor::scalar(self.precision.round(s));
        self.push(v, Op::Sum(x), &[x])
    }

    /// `-sum(x[picks])` over flat indices; with `x` a log-probability matrix
    /// this is the negative log-likelihood of the picked entries.
    pub fn nll_pick(&mut self, x: NodeId, picks: Vec<usize>) -> Result<NodeId> {
        let data = self.value(x).data();
        let mut s = 0.0;
        for &i in &picks {
            let v = data.get(i).ok_or_else(|| {
                Error::OutOfRange(format!("nll_pick: index {i} of {}", data.len()))
            })?;
            s -= v;
        }
        let v = Tensor::scalar(self.precision.round(s));
        Ok(self.push(v, Op::NllPick { x, picks }, &[x]))
    }

    /// Summed binary cross-entropy of probabilities `p` against `labels`,
    /// each term scaled by `weights`. Log arguments are clamped at
    /// [`LOG_CLAMP`].
    pub fn bce(&mut self, p: NodeId, labels: Vec<f64>, weights: Vec<f64>) -> Result<NodeId> {
        let probs = self.value(p).data();
        if probs.len() != labels.len() || labels.len() != weights.len() {
            return Err(Error::ShapeMismatch {
                op: "bce",
                lhs: vec![probs.len()],
                rhs: vec![labels.len(), weights.len()],
            });
        }
        let s = bce_value(probs, &labels, &weights);
        let v = Tensor::scalar(self.precision.round(s));
        Ok(self.push(v, Op::Bce { p, labels, weights }, &[p]))
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Vec<f64>>],
        id: NodeId,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].value.numel();
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.expect_matrix("matmul").unwrap();
                let n = bv.cols();
                if self.nodes[a.0].requires_grad {
                    let da = kernels::matmul_grad_a(g, bv.data(), m, k, n);
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = kernels::matmul_grad_b(av.data(), g, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                let db = g.iter().zip(av).map(|(x, y)| x * y).collect();
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                let n = self.value(*b).numel();
                self.accumulate_with(grads, *b, |acc| {
                    for row in g.chunks(n) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, g.iter().map(|v| v * s).collect());
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xv)
                    .map(|(d, &v)| d * kernels::gelu_grad(v))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let dx = g.iter().zip(y).map(|(d, &s)| d * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                means,
                rstds,
            } => {
                let xv = self.value(*x);
                let (rows, cols) = xv.expect_matrix("layer_norm").unwrap();
                let (dx, dg, db) = kernels::layer_norm_backward(
                    xv.data(),
                    self.value(*gamma).data(),
                    means,
                    rstds,
                    g,
                    rows,
                    cols,
                );
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dg);
                self.accumulate(grads, *beta, db);
            }
            Op::Embed { table, ids } => {
                let d = self.value(*table).cols();
                self.accumulate_with(grads, *table, |acc| {
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut acc[id * d..(id + 1) * d];
                        for (a, v) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *a += v;
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let cols = self.value(*x).cols();
                let off = start * cols;
                self.accumulate_with(grads, *x, |acc| {
                    for (a, v) in acc[off..off + g.len()].iter_mut().zip(g) {
                        *a += v;
                    }
                });
            }
            Op::SelectRows { x, idx } => {
                let cols = self.value(*x).cols();
                self.accumulate_with(grads, *x, |acc| {
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut acc[src * cols..(src + 1) * cols];
                        for (a, v) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *a += v;
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).numel();
                self.accumulate(grads, *a, g[..na].to_vec());
                self.accumulate(grads, *b, g[na..].to_vec());
            }
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            } => {
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                    *shape,
                );
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let s = kernels::dot(yr, gr);
                    for c in 0..cols {
                        dr[c] = yr[c] * (gr[c] - s);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let s: f64 = gr.iter().sum();
                    for c in 0..cols {
                        dr[c] = gr[c] - yr[c].exp() * s;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::NllPick { x, picks } => {
                let g0 = g[0];
                self.accumulate_with(grads, *x, |acc| {
                    for &i in picks {
                        acc[i] -= g0;
                    }
                });
            }
            Op::Bce { p, labels, weights } => {
                let probs = self.value(*p).data();
                let dp = probs
                    .iter()
                    .zip(labels)
                    .zip(weights)
                    .map(|((&pr, &y), &w)| g[0] * w * bce_grad(pr, y))
                    .collect();
                self.accumulate(grads, *p, dp);
            }
            Op::Dropout { x, mask } => {
                let dx = g.iter().zip(mask).map(|(d, m)| d * m).collect();
                self.accumulate(grads, *x, dx);
            }
        }
    }
}

/// Summed weighted binary cross-entropy with clamped log arguments.
pub fn bce_value(probs: &[f64], labels: &[f64], weights: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((&p, &y), &w) in probs.iter().zip(labels).zip(weights) {
        s -= w * (y * p.max(LOG_CLAMP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLAMP).ln());
    }
    s
}

fn bce_grad(p: f64, y: f64) -> f64 {
    let mut d = 0.0;
    if p > LOG_CLAMP {
        d -= y / p;
    }
    if 1.0 - p > LOG_CLAMP {
        d += (1.0 - y) / (1.0 - p);
    }
    d
}

impl Backend for Graph {
    type Value = NodeId;

    fn precision(&self) -> Precision {
        self.precision
    }

    fn tensor<'a>(&'a self, v: &'a NodeId) -> &'a Tensor {
        self.value(*v)
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(*a), self.value(*b), self.precision)?;
        Ok(self.push(v, Op::MatMul(*a, *b), &[*a, *b]))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let v = ops::add(self.value(*a), self.value(*b), self.precision)?;
        Ok(self.push(v, Op::Add(*a, *b), &[*a, *b]))
    }

    fn add_bias(&mut self, x: &NodeId, bias: &NodeId) -> Result<NodeId> {
        let v = ops::add_bias(self.value(*x), self.value(*bias), self.precision)?;
        Ok(self.push(v, Op::AddBias(*x, *bias), &[*x, *bias]))
    }

    fn layer_norm(&mut self, x: &NodeId, gamma: &NodeId, beta: &NodeId) -> Result<NodeId> {
        let o = ops::layer_norm(
            self.value(*x),
            self.value(*gamma),
            self.value(*beta),
            self.precision,
        )?;
        let op = Op::LayerNorm {
            x: *x,
            gamma: *gamma,
            beta: *beta,
            means: o.means,
            rstds: o.rstds,
        };
        Ok(self.push(o.out, op, &[*x, *gamma, *beta]))
    }

    fn gelu(&mut self, x: &NodeId) -> NodeId {
        let v = ops::map(self.value(*x), kernels::gelu, self.precision);
        self.push(v, Op::Gelu(*x), &[*x])
    }

    fn sigmoid(&mut self, x: &NodeId) -> NodeId {
        let v = ops::map(self.value(*x), kernels::sigmoid, self.precision);
        self.push(v, Op::Sigmoid(*x), &[*x])
    }

    fn embed(&mut self, table: &NodeId, ids: &[usize]) -> Result<NodeId> {
        let v = ops::embed(self.value(*table), ids, self.precision)?;
        let op = Op::Embed {
            table: *table,
            ids: ids.to_vec(),
        };
        Ok(self.push(v, op, &[*table]))
    }

    fn slice_rows(&mut self, x: &NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = ops::slice_rows(self.value(*x), start, end)?;
        Ok(self.push(v, Op::SliceRows { x: *x, start }, &[*x]))
    }

    fn select_rows(&mut self, x: &NodeId, idx: &[usize]) -> Result<NodeId> {
        let v = ops::select_rows(self.value(*x), idx)?;
        let op = Op::SelectRows {
            x: *x,
            idx: idx.to_vec(),
        };
        Ok(self.push(v, op, &[*x]))
    }

    fn concat_rows(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let v = ops::concat_rows(self.value(*a), self.value(*b))?;
        Ok(self.push(v, Op::ConcatRows(*a, *b), &[*a, *b]))
    }

    fn attention(
        &mut self,
        q: &NodeId,
        k: &NodeId,
        v: &NodeId,
        heads: usize,
        offset: usize,
    ) -> Result<NodeId> {
        let o = ops::attention(
            self.value(*q),
            self.value(*k),
            self.value(*v),
            heads,
            offset,
            self.precision,
        )?;
        let op = Op::Attention {
            q: *q,
            k: *k,
            v: *v,
            shape: o.shape,
            probs: o.probs,
        };
        Ok(self.push(o.out, op, &[*q, *k, *v]))
    }

    fn dropout(&mut self, x: &NodeId, rate: f64) -> NodeId {
        if rate <= 0.0 {
            return *x;
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(*x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let xv = self.value(*x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let v = Tensor::new(xv.shape().to_vec(), data)
            .unwrap()
            .rounded(self.precision);
        self.push(v, Op::Dropout { x: *x, mask }, &[*x])
    }
}
