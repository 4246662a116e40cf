//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in evaluation order; [`Var`] is a
//! handle into it. Batches of graph signals are stacked vertically: a batch
//! of `B` signals of shape `n × F` is a single `(B·n) × F` matrix whose
//! block `b` occupies rows `b·n .. (b+1)·n`. The block-aware operations
//! below take the block height `n` explicitly.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    /// Column-major reshape.
    Reshape(Var),
    /// Rows `start .. start + len`.
    Rows(Var, usize),
    /// Block-wise `op_b · x_b`; `op` is either one shared `n × n` matrix or
    /// a stack of per-block `n × n` matrices.
    Shift { op: Var, x: Var, n: usize },
    /// Block-wise `S ⊙ Q_b` for a shared `S`.
    BlockHadamard { s: Var, q: Var, n: usize },
    /// Scales row group `g` of `m` by the scalar `q[g]`.
    RowGroupScale { q: Var, m: Var },
    /// Block-wise Frobenius inner product with a shared `n × H` matrix.
    BlockDot { c: Var, z: Var, n: usize },
    /// Block-wise `u_i + v_j`.
    BlockOuterSum { u: Var, v: Var, n: usize },
    BlockMeanRows { a: Var, n: usize },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    MeanAbsDiff { a: Var, target: Mat },
    SumSquares(Var),
    WeightedCrossEntropy { logits: Var, labels: Vec<usize>, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Gradients indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero-shaped variables that
    /// did not influence the loss get `None`.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::DimensionMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g),
    }
}

fn block_count(rows: usize, n: usize) -> Result<usize> {
    if n == 0 || !rows.is_multiple_of(n) {
        return Err(Error::DimensionMismatch(format!("{rows} rows do not split into blocks of {n}")));
    }
    Ok(rows / n)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    /// Differentiable leaf.
    pub fn param(&self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Mat {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Mat) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[(0, 0)]
    }

    fn binary(&self, a: Var, b: Var, what: &str, f: impl FnOnce(&Mat, &Mat) -> Mat, op: Op) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if what != "matmul" && x.shape() != y.shape() {
                return Err(shape_err(what, x.shape(), y.shape()));
            }
            if what == "matmul" && x.ncols() != y.nrows() {
                return Err(shape_err(what, x.shape(), y.shape()));
            }
            f(x, y)
        };
        Ok(self.push(value, op, self.grad_of(&[a, b])))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "matmul", |x, y| x * y, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "hadamard", |x, y| x.component_mul(y), Op::Hadamard(a, b))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.with_value(a, |x| x * c);
        self.push(value, Op::Scale(a, c), self.grad_of(&[a]))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = self.with_value(a, Mat::transpose);
        self.push(value, Op::Transpose(a), self.grad_of(&[a]))
    }

    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.with_value(a, |x| {
            if x.len() != rows * cols {
                return Err(shape_err("reshape", x.shape(), (rows, cols)));
            }
            Ok(Mat::from_column_slice(rows, cols, x.as_slice()))
        })?;
        Ok(self.push(value, Op::Reshape(a), self.grad_of(&[a])))
    }

    pub fn rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.with_value(a, |x| {
            if start + len > x.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "rows {start}..{} of a {}-row matrix",
                    start + len,
                    x.nrows()
                )));
            }
            Ok(x.rows(start, len).clone_owned())
        })?;
        Ok(self.push(value, Op::Rows(a, start), self.grad_of(&[a])))
    }

    pub fn shift(&self, op: Var, x: Var, n: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (s, xv) = (&nodes[op.0].value, &nodes[x.0].value);
            let blocks = block_count(xv.nrows(), n)?;
            let shared = s.nrows() == n;
            if s.ncols() != n || !(shared || s.nrows() == xv.nrows()) {
                return Err(shape_err("shift", s.shape(), xv.shape()));
            }
            let mut out = Mat::zeros(xv.nrows(), xv.ncols());
            for b in 0..blocks {
                let xb = xv.rows(b * n, n).clone_owned();
                let prod = if shared {
                    s * xb
                } else {
                    s.rows(b * n, n).clone_owned() * xb
                };
                out.rows_mut(b * n, n).copy_from(&prod);
            }
            out
        };
        Ok(self.push(value, Op::Shift { op, x, n }, self.grad_of(&[op, x])))
    }

    pub fn block_hadamard(&self, s: Var, q: Var, n: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (sv, qv) = (&nodes[s.0].value, &nodes[q.0].value);
            let blocks = block_count(qv.nrows(), n)?;
            if sv.shape() != (n, n) || qv.ncols() != n {
                return Err(shape_err("block hadamard", sv.shape(), qv.shape()));
            }
            let mut out = qv.clone();
            for b in 0..blocks {
                let mut blk = out.rows_mut(b * n, n);
                blk.component_mul_assign(sv);
            }
            out
        };
        Ok(self.push(value, Op::BlockHadamard { s, q, n }, self.grad_of(&[s, q])))
    }

    pub fn row_group_scale(&self, q: Var, m: Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (qv, mv) = (&nodes[q.0].value, &nodes[m.0].value);
            if qv.ncols() != 1 {
                return Err(shape_err("row group scale", qv.shape(), mv.shape()));
            }
            let size = mv.nrows() / qv.nrows().max(1);
            block_count(mv.nrows(), size.max(1))?;
            if size * qv.nrows() != mv.nrows() {
                return Err(shape_err("row group scale", qv.shape(), mv.shape()));
            }
            let mut out = mv.clone();
            for g in 0..qv.nrows() {
                out.rows_mut(g * size, size).scale_mut(qv[(g, 0)]);
            }
            out
        };
        Ok(self.push(value, Op::RowGroupScale { q, m }, self.grad_of(&[q, m])))
    }

    pub fn block_dot(&self, c: Var, z: Var, n: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (cv, zv) = (&nodes[c.0].value, &nodes[z.0].value);
            let blocks = block_count(zv.nrows(), n)?;
            if cv.shape() != (n, zv.ncols()) {
                return Err(shape_err("block dot", cv.shape(), zv.shape()));
            }
            Mat::from_fn(blocks, 1, |b, _| {
                let mut acc = 0.0;
                for h in 0..cv.ncols() {
                    for i in 0..n {
                        acc += cv[(i, h)] * zv[(b * n + i, h)];
                    }
                }
                acc
            })
        };
        Ok(self.push(value, Op::BlockDot { c, z, n }, self.grad_of(&[c, z])))
    }

    pub fn block_outer_sum(&self, u: Var, v: Var, n: usize) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let (uv, vv) = (&nodes[u.0].value, &nodes[v.0].value);
            if uv.ncols() != 1 || vv.shape() != uv.shape() {
                return Err(shape_err("block outer sum", uv.shape(), vv.shape()));
            }
            block_count(uv.nrows(), n)?;
            Mat::from_fn(uv.nrows(), n, |r, j| uv[(r, 0)] + vv[((r / n) * n + j, 0)])
        };
        Ok(self.push(value, Op::BlockOuterSum { u, v, n }, self.grad_of(&[u, v])))
    }

    pub fn block_mean_rows(&self, a: Var, n: usize) -> Result<Var> {
        let value = self.with_value(a, |x| {
            let blocks = block_count(x.nrows(), n)?;
            Ok::<Mat, Error>(Mat::from_fn(blocks, x.ncols(), |b, f| {
                x.view((b * n, f), (n, 1)).sum() / n as f64
            }))
        })?;
        Ok(self.push(value, Op::BlockMeanRows { a, n }, self.grad_of(&[a])))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let value = self.with_value(a, |x| x.map(f64::tanh));
        self.push(value, Op::Tanh(a), self.grad_of(&[a]))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.with_value(a, |x| x.map(sigmoid));
        self.push(value, Op::Sigmoid(a), self.grad_of(&[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.with_value(a, |x| x.map(|v| v.max(0.0)));
        self.push(value, Op::Relu(a), self.grad_of(&[a]))
    }

    /// Mean over all entries of `|a − target|`.
    pub fn mean_abs_diff(&self, a: Var, target: &Mat) -> Result<Var> {
        let value = self.with_value(a, |x| {
            if x.shape() != target.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "prediction {:?} vs target {:?}",
                    x.shape(),
                    target.shape()
                )));
            }
            if x.is_empty() {
                return Err(Error::EmptyBatch);
            }
            Ok((x - target).abs().sum() / x.len() as f64)
        })?;
        Ok(self.push(
            Mat::from_element(1, 1, value),
            Op::MeanAbsDiff { a, target: target.clone() },
            self.grad_of(&[a]),
        ))
    }

    pub fn sum_squares(&self, a: Var) -> Var {
        let value = self.with_value(a, |x| x.norm_squared());
        self.push(Mat::from_element(1, 1, value), Op::SumSquares(a), self.grad_of(&[a]))
    }

    /// Mean over rows of `−w[y]·log softmax(row)[y]`.
    pub fn weighted_cross_entropy(&self, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
        let value = self.with_value(logits, |x| {
            if x.nrows() == 0 {
                return Err(Error::EmptyBatch);
            }
            if labels.len() != x.nrows() || weights.len() != x.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels and {} class weights for {}x{} logits",
                    labels.len(),
                    weights.len(),
                    x.nrows(),
                    x.ncols()
                )));
            }
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                if y >= x.ncols() {
                    return Err(Error::ShapeMismatch(format!("label {y} with {} classes", x.ncols())));
                }
                let row: Vec<f64> = x.row(r).iter().cloned().collect();
                total -= weights[y] * log_softmax_row(&row)[y];
            }
            Ok(total / x.nrows() as f64)
        })?;
        Ok(self.push(
            Mat::from_element(1, 1, value),
            Op::WeightedCrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            self.grad_of(&[logits]),
        ))
    }

    /// Convenience sum of several variables of equal shape.
    pub fn sum(&self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("sum of no variables".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Reverse sweep from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let (r, c) = nodes[loss.0].value.shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(r, c));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::from_element(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].needs_grad;
            let send = |v: Var, m: Mat, grads: &mut Vec<Option<Mat>>| {
                if wants(v) {
                    accumulate(&mut grads[v.0], m);
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        send(*a, &g * val(*b).transpose(), &mut grads);
                    }
                    if wants(*b) {
                        send(*b, val(*a).transpose() * &g, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, -g, &mut grads);
                }
                Op::Hadamard(a, b) => {
                    if wants(*a) {
                        send(*a, g.component_mul(val(*b)), &mut grads);
                    }
                    if wants(*b) {
                        send(*b, g.component_mul(val(*a)), &mut grads);
                    }
                }
                Op::Scale(a, c) => send(*a, g * *c, &mut grads),
                Op::Transpose(a) => send(*a, g.transpose(), &mut grads),
                Op::Reshape(a) => {
                    let (r, c) = val(*a).shape();
                    send(*a, Mat::from_column_slice(r, c, g.as_slice()), &mut grads);
                }
                Op::Rows(a, start) => {
                    let (r, c) = val(*a).shape();
                    let mut full = Mat::zeros(r, c);
                    full.rows_mut(*start, g.nrows()).copy_from(&g);
                    send(*a, full, &mut grads);
                }
                Op::Shift { op, x, n } => {
                    let (s, xv) = (val(*op), val(*x));
                    let n = *n;
                    let blocks = xv.nrows() / n;
                    let shared = s.nrows() == n;
                    if wants(*x) {
                        let mut dx = Mat::zeros(xv.nrows(), xv.ncols());
                        for b in 0..blocks {
                            let sb = if shared { s.clone() } else { s.rows(b * n, n).clone_owned() };
                            let gb = g.rows(b * n, n).clone_owned();
                            dx.rows_mut(b * n, n).copy_from(&(sb.transpose() * gb));
                        }
                        send(*x, dx, &mut grads);
                    }
                    if wants(*op) {
                        let mut ds = Mat::zeros(s.nrows(), n);
                        for b in 0..blocks {
                            let gb = g.rows(b * n, n).clone_owned();
                            let xb = xv.rows(b * n, n).clone_owned();
                            let contrib = gb * xb.transpose();
                            if shared {
                                ds += contrib;
                            } else {
                                ds.rows_mut(b * n, n).copy_from(&contrib);
                            }
                        }
                        send(*op, ds, &mut grads);
                    }
                }
                Op::BlockHadamard { s, q, n } => {
                    let (sv, qv) = (val(*s), val(*q));
                    let n = *n;
                    let blocks = qv.nrows() / n;
                    if wants(*q) {
                        let mut dq = g.clone();
                        for b in 0..blocks {
                            dq.rows_mut(b * n, n).component_mul_assign(sv);
                        }
                        send(*q, dq, &mut grads);
                    }
                    if wants(*s) {
                        let mut ds = Mat::zeros(n, n);
                        for b in 0..blocks {
                            ds += g.rows(b * n, n).component_mul(&qv.rows(b * n, n));
                        }
                        send(*s, ds, &mut grads);
                    }
                }
                Op::RowGroupScale { q, m } => {
                    let (qv, mv) = (val(*q), val(*m));
                    let size = mv.nrows() / qv.nrows();
                    if wants(*q) {
                        let dq = Mat::from_fn(qv.nrows(), 1, |gi, _| {
                            g.rows(gi * size, size).component_mul(&mv.rows(gi * size, size)).sum()
                        });
                        send(*q, dq, &mut grads);
                    }
                    if wants(*m) {
                        let mut dm = g.clone();
                        for gi in 0..qv.nrows() {
                            dm.rows_mut(gi * size, size).scale_mut(qv[(gi, 0)]);
                        }
                        send(*m, dm, &mut grads);
                    }
                }
                Op::BlockDot { c, z, n } => {
                    let (cv, zv) = (val(*c), val(*z));
                    let n = *n;
                    let blocks = zv.nrows() / n;
                    if wants(*c) {
                        let mut dc = Mat::zeros(n, cv.ncols());
                        for b in 0..blocks {
                            dc += zv.rows(b * n, n) * g[(b, 0)];
                        }
                        send(*c, dc, &mut grads);
                    }
                    if wants(*z) {
                        let mut dz = Mat::zeros(zv.nrows(), zv.ncols());
                        for b in 0..blocks {
                            dz.rows_mut(b * n, n).copy_from(&(cv * g[(b, 0)]));
                        }
                        send(*z, dz, &mut grads);
                    }
                }
                Op::BlockOuterSum { u, v, n } => {
                    let n = *n;
                    let rows = g.nrows();
                    if wants(*u) {
                        let du = Mat::from_fn(rows, 1, |r, _| g.row(r).sum());
                        send(*u, du, &mut grads);
                    }
                    if wants(*v) {
                        let mut dv = Mat::zeros(rows, 1);
                        for r in 0..rows {
                            let base = (r / n) * n;
                            for j in 0..n {
                                dv[(base + j, 0)] += g[(r, j)];
                            }
                        }
                        send(*v, dv, &mut grads);
                    }
                }
                Op::BlockMeanRows { a, n } => {
                    let (r, c) = val(*a).shape();
                    let n = *n;
                    let da = Mat::from_fn(r, c, |i, f| g[(i / n, f)] / n as f64);
                    send(*a, da, &mut grads);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    send(*a, g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi)), &mut grads);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(*a, g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)), &mut grads);
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    send(*a, g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }), &mut grads);
                }
                Op::MeanAbsDiff { a, target } => {
                    let x = val(*a);
                    let scale = g[(0, 0)] / x.len() as f64;
                    let d = x.zip_map(target, |xi, ti| {
                        let diff = xi - ti;
                        if diff > 0.0 {
                            scale
                        } else if diff < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    });
                    send(*a, d, &mut grads);
                }
                Op::SumSquares(a) => send(*a, val(*a) * (2.0 * g[(0, 0)]), &mut grads),
                Op::WeightedCrossEntropy { logits, labels, weights } => {
                    let x = val(*logits);
                    let scale = g[(0, 0)] / x.nrows() as f64;
                    let mut d = Mat::zeros(x.nrows(), x.ncols());
                    for (r, &y) in labels.iter().enumerate() {
                        let row: Vec<f64> = x.row(r).iter().cloned().collect();
                        let logp = log_softmax_row(&row);
                        for (k, lp) in logp.iter().enumerate() {
                            let onehot = if k == y { 1.0 } else { 0.0 };
                            d[(r, k)] = scale * weights[y] * (lp.exp() - onehot);
                        }
                    }
                    send(*logits, d, &mut grads);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
