//! Reverse-mode autodiff over [`Matrix`] values.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] walks the
//! recorded ops in reverse and accumulates gradients for every node reachable
//! from a parameter. Tapes are cheap and short-lived: training creates one
//! per optimisation step and drops it after the update.

use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{mm_nn_acc, mm_nt_acc, mm_tn_acc, Matrix};
use crate::fmath;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    /// `a · b`
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    /// Broadcast row-vector add: `x + b` with `b` of shape 1×n.
    AddBias(Var, Var),
    Mul(Var, Var),
    /// Broadcast a 1×n row to m×n.
    RepeatRow(Var),
    Scale(Var, f64),
    /// Value was computed as `x + constant`; gradient passes through.
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    /// Forward value is the row-wise one-hot argmax of the input; the
    /// gradient is passed through unchanged (straight-through estimator).
    StraightThrough(Var),
    /// Row-block dot products: candidates (m·g)×h against queries m×h,
    /// producing m×g scores.
    GroupDot {
        candidates: Var,
        queries: Var,
        group: usize,
    },
    /// Mean over rows of `−ln softmax(scores)[target]`; probs are cached for
    /// the backward pass.
    SoftmaxXent {
        scores: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    /// Mean binary cross-entropy of `sigmoid(logits)` against targets, with
    /// probabilities clamped to `[eps, 1−eps]`. Clamped entries get zero
    /// gradient, matching the derivative of the clamped expression.
    BceLogits {
        logits: Var,
        targets: Matrix,
        probs: Matrix,
        eps: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// One recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked through it.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Parameter input; gradients accumulate for it on backward.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (rows, cols) = self.value(x).shape();
        assert_eq!(self.value(bias).shape(), (1, cols), "bias must be 1×cols");
        let mut value = self.value(x).clone();
        {
            let b = self.value(bias).row(0).to_vec();
            for r in 0..rows {
                for (v, bv) in value.row_mut(r).iter_mut().zip(&b) {
                    *v += *bv;
                }
            }
        }
        let rg = self.requires(x) || self.requires(bias);
        self.push(value, Op::AddBias(x, bias), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *v *= *w;
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn repeat_row(&mut self, x: Var, rows: usize) -> Var {
        let src = self.value(x);
        assert_eq!(src.rows(), 1, "repeat_row source must be 1×n");
        let cols = src.cols();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            value.row_mut(r).copy_from_slice(src.row(0));
        }
        let rg = self.requires(x);
        self.push(value, Op::RepeatRow(x), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v *= factor;
        }
        let rg = self.requires(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// `x + constant`, the constant is not a node.
    pub fn offset(&mut self, x: Var, constant: &Matrix) -> Var {
        assert_eq!(self.value(x).shape(), constant.shape());
        let mut value = self.value(x).clone();
        value.add_assign(constant);
        let rg = self.requires(x);
        self.push(value, Op::Offset(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = fmath::tanh(*v);
        }
        let rg = self.requires(x);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = sigmoid(*v);
        }
        let rg = self.requires(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut value = src.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let rg = self.requires(x);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Straight-through discretization: the forward value is the exact
    /// one-hot argmax of `relaxed` (per row, ties to the lowest index); the
    /// backward pass treats the op as the identity.
    pub fn straight_through(&mut self, relaxed: Var) -> Var {
        let src = self.value(relaxed);
        let mut value = Matrix::zeros(src.rows(), src.cols());
        for (r, idx) in src.argmax_rows().into_iter().enumerate() {
            value.set(r, idx, 1.0);
        }
        let rg = self.requires(relaxed);
        self.push(value, Op::StraightThrough(relaxed), rg)
    }

    /// Scores `[i][j] = candidates.row(i·group + j) · queries.row(i)`.
    pub fn group_dot(&mut self, candidates: Var, queries: Var, group: usize) -> Var {
        let c = self.value(candidates);
        let q = self.value(queries);
        assert_eq!(c.cols(), q.cols(), "group_dot feature dims differ");
        assert_eq!(c.rows(), q.rows() * group, "group_dot row count mismatch");
        let mut value = Matrix::zeros(q.rows(), group);
        for i in 0..q.rows() {
            let qrow = q.row(i);
            for j in 0..group {
                let crow = c.row(i * group + j);
                let mut acc = 0.0;
                for (&a, &b) in crow.iter().zip(qrow) {
                    acc += a * b;
                }
                value.set(i, j, acc);
            }
        }
        let rg = self.requires(candidates) || self.requires(queries);
        self.push(
            value,
            Op::GroupDot {
                candidates,
                queries,
                group,
            },
            rg,
        )
    }

    /// Mean softmax cross-entropy over rows; returns a 1×1 loss.
    pub fn softmax_cross_entropy(&mut self, scores: Var, targets: &[usize]) -> Var {
        let s = self.value(scores);
        assert_eq!(s.rows(), targets.len(), "one target per score row");
        assert!(!targets.is_empty(), "softmax_cross_entropy on empty batch");
        let mut probs = s.clone();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < s.cols(), "target index out of range");
            let row = probs.row_mut(r);
            total += -log_softmax_at(row, t);
            softmax_in_place(row);
        }
        let value = Matrix::from_vec(1, 1, vec![total / targets.len() as f64]);
        let rg = self.requires(scores);
        self.push(
            value,
            Op::SoftmaxXent {
                scores,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// probabilities clamped to `[eps, 1−eps]`. Returns a 1×1 loss.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Matrix, eps: f64) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), targets.shape(), "bce shape mismatch");
        let mut probs = z.clone();
        for p in probs.data_mut() {
            *p = sigmoid(*p).clamp(eps, 1.0 - eps);
        }
        let n = probs.data().len() as f64;
        let mut total = 0.0;
        for (&p, &t) in probs.data().iter().zip(targets.data()) {
            total -= t * fmath::ln(p) + (1.0 - t) * fmath::ln(1.0 - p);
        }
        let value = Matrix::from_vec(1, 1, vec![total / n]);
        let rg = self.requires(logits);
        self.push(
            value,
            Op::BceLogits {
                logits,
                targets: targets.clone(),
                probs,
                eps,
            },
            rg,
        )
    }

    /// Runs the backward pass from `root` (must be 1×1). Gradients are
    /// retrievable via [`Tape::grad`] afterwards.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
    }

    /// Gradient of the last backward root with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn accumulate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut add_to = |v: Var, f: &mut dyn FnMut(&mut Matrix)| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_none() {
                let (r, c) = self.nodes[v.0].value.shape();
                *slot = Some(Matrix::zeros(r, c));
            }
            f(slot.as_mut().unwrap());
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                add_to(*a, &mut |ga| mm_nt_acc(ga, g, bv));
                add_to(*b, &mut |gb| mm_tn_acc(gb, av, g));
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                add_to(*a, &mut |ga| mm_nn_acc(ga, g, bv));
                add_to(*b, &mut |gb| mm_tn_acc(gb, g, av));
            }
            Op::Add(a, b) => {
                add_to(*a, &mut |ga| ga.add_assign(g));
                add_to(*b, &mut |gb| gb.add_assign(g));
            }
            Op::AddBias(x, bias) => {
                add_to(*x, &mut |gx| gx.add_assign(g));
                add_to(*bias, &mut |gb| {
                    for r in 0..g.rows() {
                        for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                add_to(*a, &mut |ga| {
                    for ((o, &gv), &w) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gv * w;
                    }
                });
                add_to(*b, &mut |gb| {
                    for ((o, &gv), &w) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gv * w;
                    }
                });
            }
            Op::RepeatRow(x) => {
                add_to(*x, &mut |gx| {
                    for r in 0..g.rows() {
                        for (o, &v) in gx.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Scale(x, factor) => {
                let factor = *factor;
                add_to(*x, &mut |gx| {
                    for (o, &v) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += factor * v;
                    }
                });
            }
            Op::Offset(x) => {
                add_to(*x, &mut |gx| gx.add_assign(g));
            }
            Op::Tanh(x) => {
                let y = &self.nodes[id].value;
                add_to(*x, &mut |gx| {
                    for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[id].value;
                add_to(*x, &mut |gx| {
                    for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[id].value;
                add_to(*x, &mut |gx| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let s: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - s);
                        }
                    }
                });
            }
            Op::StraightThrough(relaxed) => {
                add_to(*relaxed, &mut |gr| gr.add_assign(g));
            }
            Op::GroupDot {
                candidates,
                queries,
                group,
            } => {
                let group = *group;
                let cv = &self.nodes[candidates.0].value;
                let qv = &self.nodes[queries.0].value;
                add_to(*candidates, &mut |gc| {
                    for i in 0..qv.rows() {
                        let qrow = qv.row(i);
                        for j in 0..group {
                            let gv = g.at(i, j);
                            if gv == 0.0 {
                                continue;
                            }
                            for (o, &q) in gc.row_mut(i * group + j).iter_mut().zip(qrow) {
                                *o += gv * q;
                            }
                        }
                    }
                });
                add_to(*queries, &mut |gq| {
                    for i in 0..qv.rows() {
                        for j in 0..group {
                            let gv = g.at(i, j);
                            if gv == 0.0 {
                                continue;
                            }
                            let crow = cv.row(i * group + j);
                            for (o, &c) in gq.row_mut(i).iter_mut().zip(crow) {
                                *o += gv * c;
                            }
                        }
                    }
                });
            }
            Op::SoftmaxXent {
                scores,
                targets,
                probs,
            } => {
                let g00 = g.at(0, 0);
                let scale = g00 / targets.len() as f64;
                add_to(*scores, &mut |gs| {
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (o, &p)) in gs.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let y = if c == t { 1.0 } else { 0.0 };
                            *o += scale * (p - y);
                        }
                    }
                });
            }
            Op::BceLogits {
                logits,
                targets,
                probs,
                eps,
            } => {
                let g00 = g.at(0, 0);
                let n = probs.data().len() as f64;
                let (lo, hi) = (*eps, 1.0 - *eps);
                add_to(*logits, &mut |gz| {
                    for ((o, (&p, &t)), _) in gz
                        .data_mut()
                        .iter_mut()
                        .zip(probs.data().iter().zip(targets.data()))
                        .zip(0..)
                    {
                        if p > lo && p < hi {
                            *o += g00 * (p - t) / n;
                        }
                    }
                });
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + fmath::exp(-z))
    } else {
        let e = fmath::exp(z);
        e / (1.0 + e)
    }
}

/// In-place stable softmax of a row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = fmath::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln softmax(row)[index]` without materialising the softmax.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = row.iter().map(|&v| fmath::exp(v - max)).sum();
    (row[index] - max) - fmath::ln(lse)
}
