//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of nodes appended in evaluation order, so the tape
//! order is already a topological order. [`Graph::backward`] walks it once in
//! reverse. Graphs are built per sequence and thrown away afterwards.
//!
//! The non-differentiable binarizer uses the straight-through rule: the
//! forward value is `round(x)` (ties go up) and the backward pass treats it as
//! the identity.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    MinConst(Var, f64),
    StraightThrough(Var),
    Concat(Vec<Var>, Axis),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<(usize, usize)>),
    Transpose(Var),
    Sum(Var),
    LogSumExp(Var),
    LogSumExpRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// `round` with ties rounding up, the forward rule of the binarizer.
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    if x >= 0.5 {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp_slice(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch { op, left: a, right: b }),
    }
}

#[inline]
fn bidx(t: &Tensor, r: usize, c: usize) -> usize {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    rr * t.cols() + cc
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: (usize, usize), f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == shape && b.shape() == shape {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(shape.0, shape.1, data).expect("shape");
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            let v = f(a.data()[bidx(a, r, c)], b.data()[bidx(b, r, c)]);
            out.set(r, c, v);
        }
    }
    out
}

/// A computation tape over dense `f64` tensors.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`; zeros when nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), shape, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddConst(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_const(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Elementwise `min(a, c)`.
    pub fn min_with_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x.min(c));
        let rg = self.rg(a);
        self.push(value, Op::MinConst(a, c), rg)
    }

    /// Binarize a scalar in `[0, 1]`: forward `round(x)` with ties up,
    /// backward identity.
    pub fn binarize(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if (r, c) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "binarize",
                left: (r, c),
                right: (1, 1),
            });
        }
        let x = self.value(a).item();
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::BinarizeDomain(x));
        }
        Ok(self.straight_through(a, round_half_up(x)))
    }

    /// Scalar node whose forward value is `forward` but whose gradient flows
    /// to `a` unchanged. Used to force or pin gate decisions.
    pub fn straight_through(&mut self, a: Var, forward: f64) -> Var {
        let rg = self.rg(a);
        self.push(Tensor::scalar(forward), Op::StraightThrough(a), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptySequence)?;
        let (r0, c0) = self.shape(first);
        let mut rows = 0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            let ok = match axis {
                Axis::Cols => r == r0,
                Axis::Rows => c == c0,
            };
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: (r0, c0),
                    right: (r, c),
                });
            }
            rows += r;
            cols += c;
        }
        let value = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(rows * c0);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(rows, c0, data)?
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::new(r0, cols, data)?
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::IndexOutOfRange {
                what: "column slice",
                index: end,
                len: t.cols(),
            });
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let value = Tensor::new(t.rows(), end - start, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Rows of `table` in the order of `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            if i >= t.rows() {
                return Err(Error::IndexOutOfRange {
                    what: "gather rows",
                    index: i,
                    len: t.rows(),
                });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::new(ids.len(), t.cols(), data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Row vector of the selected `(row, col)` elements.
    pub fn pick(&mut self, a: Var, positions: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(a);
        let mut data = Vec::with_capacity(positions.len());
        for &(r, c) in positions {
            if r >= t.rows() || c >= t.cols() {
                return Err(Error::IndexOutOfRange {
                    what: "pick",
                    index: r * t.cols() + c,
                    len: t.len(),
                });
            }
            data.push(t.get(r, c));
        }
        let value = Tensor::row(data);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Pick(a, positions.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// `ln Σ exp(x)` over every element.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(log_sum_exp_slice(self.value(a).data().iter().copied()));
        let rg = self.rg(a);
        self.push(value, Op::LogSumExp(a), rg)
    }

    /// Column-wise `ln Σ_r exp(x[r, c])`, giving a 1×cols row.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.cols())
            .map(|c| log_sum_exp_slice((0..t.rows()).map(|r| t.get(r, c))))
            .collect();
        let value = Tensor::row(data);
        let rg = self.rg(a);
        self.push(value, Op::LogSumExpRows(a), rg)
    }

    /// Reverse pass from a scalar root. Gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let n = root.0 + 1;
        let mut local: Vec<Option<Tensor>> = vec![None; n];
        local[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut local);
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, local: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(ga) = self.slot(local, *a) {
                    ga.add_matmul_bt(g, bv);
                }
                if let Some(gb) = self.slot(local, *b) {
                    gb.add_matmul_at(av, g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate_broadcast(local, *a, g, |x| x);
                self.accumulate_broadcast(local, *b, g, |x| x);
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(local, *a, g, |x| x);
                self.accumulate_broadcast(local, *b, g, |x| -x);
            }
            Op::Mul(a, b) => {
                let shape = g.shape();
                if self.rg(*a) {
                    let full = zip_broadcast(g, self.value(*b), shape, |x, y| x * y);
                    self.accumulate_broadcast(local, *a, &full, |x| x);
                }
                if self.rg(*b) {
                    let full = zip_broadcast(g, self.value(*a), shape, |x, y| x * y);
                    self.accumulate_broadcast(local, *b, &full, |x| x);
                }
            }
            Op::AddConst(a) | Op::StraightThrough(a) => self.accumulate_with(local, *a, g, |gi, _| gi),
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate_with(local, *a, g, |gi, _| gi * s);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                self.accumulate_with(local, *a, g, |gi, k| gi * y[k] * (1.0 - y[k]));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.accumulate_with(local, *a, g, |gi, k| gi * (1.0 - y[k] * y[k]));
            }
            Op::MinConst(a, c) => {
                let x = self.value(*a).data();
                let c = *c;
                self.accumulate_with(local, *a, g, |gi, k| if x[k] < c { gi } else { 0.0 });
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    if let Some(gp) = self.slot(local, p) {
                        for r in 0..pr {
                            for c in 0..pc {
                                let v = match axis {
                                    Axis::Rows => g.get(offset + r, c),
                                    Axis::Cols => g.get(r, offset + c),
                                };
                                gp.data_mut()[r * pc + c] += v;
                            }
                        }
                    }
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(ga) = self.slot(local, *a) {
                    let ac = ga.cols();
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.data_mut()[r * ac + start + c] += g.get(r, c);
                        }
                    }
                }
            }
            Op::GatherRows(a, ids) => {
                if let Some(ga) = self.slot(local, *a) {
                    let ac = ga.cols();
                    for (k, &id) in ids.iter().enumerate() {
                        let dst = &mut ga.data_mut()[id * ac..(id + 1) * ac];
                        for (d, s) in dst.iter_mut().zip(g.row_slice(k)) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Pick(a, positions) => {
                if let Some(ga) = self.slot(local, *a) {
                    let ac = ga.cols();
                    for (k, &(r, c)) in positions.iter().enumerate() {
                        ga.data_mut()[r * ac + c] += g.data()[k];
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.slot(local, *a) {
                    ga.add_assign(&g.transpose());
                }
            }
            Op::Sum(a) => {
                let gi = g.item();
                self.accumulate_with(local, *a, &Tensor::filled(1, 1, gi), |gi, _| gi);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a).data();
                let lse = node.value.item();
                let gi = g.item();
                if let Some(ga) = self.slot(local, *a) {
                    for (d, &v) in ga.data_mut().iter_mut().zip(x) {
                        *d += gi * (v - lse).exp();
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let y = node.value.data();
                if let Some(ga) = self.slot(local, *a) {
                    let cols = x.cols();
                    for r in 0..x.rows() {
                        for c in 0..cols {
                            ga.data_mut()[r * cols + c] += g.data()[c] * (x.get(r, c) - y[c]).exp();
                        }
                    }
                }
            }
        }
    }

    /// Gradient buffer for `v`, created on first use; `None` for nodes that
    /// do not require gradient.
    fn slot<'a>(&self, local: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        if !self.rg(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(local[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    /// `grad(v)[k] += f(g[k], k)` for same-shape `g`, or broadcast `g` when
    /// `v` is 1×1 (used by `Sum`).
    fn accumulate_with(&self, local: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(f64, usize) -> f64) {
        if let Some(gv) = self.slot(local, v) {
            if g.len() == 1 && gv.len() != 1 {
                let gi = g.item();
                for (k, d) in gv.data_mut().iter_mut().enumerate() {
                    *d += f(gi, k);
                }
            } else {
                for (k, (d, &gi)) in gv.data_mut().iter_mut().zip(g.data()).enumerate() {
                    *d += f(gi, k);
                }
            }
        }
    }

    /// Accumulate a broadcast-shaped gradient, summing over broadcast axes.
    fn accumulate_broadcast(&self, local: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(f64) -> f64) {
        if let Some(gv) = self.slot(local, v) {
            if gv.shape() == g.shape() {
                for (d, &gi) in gv.data_mut().iter_mut().zip(g.data()) {
                    *d += f(gi);
                }
            } else {
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let k = bidx(gv, r, c);
                        gv.data_mut()[k] += f(g.get(r, c));
                    }
                }
            }
        }
    }
}
