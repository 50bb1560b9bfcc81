//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation of one forward evaluation. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of a
//! scalar node with respect to every node that depends on a parameter or a
//! differentiable input. Constants (including [`Graph::detach`]ed values) never
//! receive or propagate gradients.

use std::collections::HashMap;

use super::{Matrix, ParameterStore, Scalar};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Matrix<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: Matrix<T>,
    },
    TransportCost {
        source: Var,
        target: Matrix<T>,
        plan: Matrix<T>,
    },
    MeanRows(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded forward computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<usize, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::get`].
    pub fn input(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Copy of `v`'s value with no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Bind a named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore<T>, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if let Some(&v) = self.params.get(&idx) {
            return Ok(v);
        }
        let v = self.push(store.value(idx).clone(), Op::Param(idx), true);
        self.params.insert(idx, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// Adds the `1×c` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "add_row bias must be a row vector");
        assert_eq!(b.cols(), self.value(x).cols(), "add_row width mismatch");
        let mut value = self.value(x).clone();
        let brow = b.row(0).to_vec();
        for r in 0..value.rows() {
            for (o, &bv) in value.row_mut(r).iter_mut().zip(&brow) {
                *o = *o + bv;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(value, Op::AddRow(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, s), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        let ng = self.ng(x);
        self.push(value, Op::Gelu(x), ng)
    }

    /// Per-row normalization followed by elementwise `gamma`, `beta` (both `1×c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let n = T::from_usize(cols).unwrap();
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            for (o, &v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        let mut value = normalized.clone();
        for r in 0..rows {
            for (c, o) in value.row_mut(r).iter_mut().enumerate() {
                *o = *o * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked out when
    /// `j > i + offset`, where `offset = cols - rows`.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let offset = cols.saturating_sub(rows);
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let visible = if causal { (r + offset + 1).min(cols) } else { cols };
            let row = &xv.row(r)[..visible];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let out = value.row_mut(r);
            let mut total = T::zero();
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total = total + *o;
            }
            for o in &mut out[..visible] {
                *o = *o / total;
            }
        }
        let ng = self.ng(x);
        self.push(value, Op::Softmax(x), ng)
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).copy_from_slice(t.row(id));
        }
        let ng = self.ng(table);
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start <= end && end <= xv.rows(), "slice_rows out of range");
        let cols = xv.cols();
        let value = Matrix::from_vec(
            end - start,
            cols,
            xv.as_slice()[start * cols..end * cols].to_vec(),
        );
        let ng = self.ng(x);
        self.push(value, Op::SliceRows { x, start }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(pv.as_slice());
            rows += pv.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start <= end && end <= xv.cols(), "slice_cols out of range");
        let mut value = Matrix::zeros(xv.rows(), end - start);
        for r in 0..xv.rows() {
            value.row_mut(r).copy_from_slice(&xv.row(r)[start..end]);
        }
        let ng = self.ng(x);
        self.push(value, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols height mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Mean of `-ln softmax(logits[row])[class]` over `(row, class)` targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Var {
        let lv = self.value(logits);
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let out = probs.row_mut(r);
            let mut total = T::zero();
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total = total + *o;
            }
            for o in out.iter_mut() {
                *o = *o / total;
            }
        }
        let mut loss = T::zero();
        for &(r, c) in targets {
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss = loss + (lse - row[c]);
        }
        if !targets.is_empty() {
            loss = loss / T::from_usize(targets.len()).unwrap();
        }
        let ng = self.ng(logits);
        self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// `Σ_ij plan_ij · ‖source_i − target_j‖²`; the gradient reaches `source`
    /// only. `target` and `plan` are treated as constants.
    pub fn transport_cost(&mut self, source: Var, target: Matrix<T>, plan: Matrix<T>) -> Var {
        let sv = self.value(source);
        assert_eq!(sv.cols(), target.cols(), "transport_cost dimension mismatch");
        assert_eq!(plan.shape(), (sv.rows(), target.rows()), "plan shape mismatch");
        let mut total = T::zero();
        for i in 0..sv.rows() {
            for j in 0..target.rows() {
                let z = plan.get(i, j);
                if z == T::zero() {
                    continue;
                }
                let d: T = sv
                    .row(i)
                    .iter()
                    .zip(target.row(j))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                total = total + z * d;
            }
        }
        let ng = self.ng(source);
        self.push(
            Matrix::scalar(total),
            Op::TransportCost {
                source,
                target,
                plan,
            },
            ng,
        )
    }

    /// Column means as a `1×c` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize(xv.rows()).unwrap();
        let mut value = Matrix::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, &v) in value.row_mut(0).iter_mut().zip(xv.row(r)) {
                *o = *o + v;
            }
        }
        value.scale_assign(T::one() / n);
        let ng = self.ng(x);
        self.push(value, Op::MeanRows(x), ng)
    }

    /// Scales each row to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let norm = xv.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
            let norm = norm.max(T::from_f64_lossy(1e-12));
            for o in value.row_mut(r) {
                *o = *o / norm;
            }
            norms.push(norm);
        }
        let ng = self.ng(x);
        self.push(value, Op::NormalizeRows { x, norms }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(value, Op::Sum(x), ng)
    }

    /// Gradients of the `1×1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, delta: Matrix<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_nt(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(x, bias) => {
                acc(*x, g.clone());
                if self.ng(*bias) {
                    acc(*bias, column_sums(g));
                }
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * *s)),
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let data = g
                    .as_slice()
                    .iter()
                    .zip(xv.as_slice())
                    .map(|(&gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                acc(*x, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gam = self.value(*gamma).row(0);
                let (rows, cols) = g.shape();
                if self.ng(*x) {
                    let n = T::from_usize(cols).unwrap();
                    let mut dx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let xh = normalized.row(r);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in 0..cols {
                            let d = gr[c] * gam[c];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xh[c];
                        }
                        let is = inv_std[r];
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            let d = gr[c] * gam[c];
                            *o = is * (d - sum_d / n - xh[c] * sum_dx / n);
                        }
                    }
                    acc(*x, dx);
                }
                if self.ng(*gamma) {
                    let mut dg = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        for (c, o) in dg.row_mut(0).iter_mut().enumerate() {
                            *o = *o + g.get(r, c) * normalized.get(r, c);
                        }
                    }
                    acc(*gamma, dg);
                }
                if self.ng(*beta) {
                    acc(*beta, column_sums(g));
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o = *o + v;
                    }
                }
                acc(*table, dt);
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                let cols = xv.cols();
                dx.as_mut_slice()[start * cols..(start + g.rows()) * cols]
                    .copy_from_slice(g.as_slice());
                acc(*x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let cols = g.cols();
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.ng(p) {
                        let slice = g.as_slice()[offset * cols..(offset + rows) * cols].to_vec();
                        acc(p, Matrix::from_vec(rows, cols, slice));
                    }
                    offset += rows;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.ng(p) {
                        let mut dp = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        acc(p, dp);
                    }
                    offset += pc;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if targets.is_empty() {
                    return;
                }
                let scale = g.item() / T::from_usize(targets.len()).unwrap();
                let mut dl = Matrix::zeros(probs.rows(), probs.cols());
                for &(r, c) in targets {
                    for (o, &p) in dl.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *o = *o + p * scale;
                    }
                    let cur = dl.get(r, c);
                    dl.set(r, c, cur - scale);
                }
                acc(*logits, dl);
            }
            Op::TransportCost {
                source,
                target,
                plan,
            } => {
                let sv = self.value(*source);
                let two = T::from_f64_lossy(2.0) * g.item();
                let mut ds = Matrix::zeros(sv.rows(), sv.cols());
                for i in 0..sv.rows() {
                    for j in 0..target.rows() {
                        let z = plan.get(i, j);
                        if z == T::zero() {
                            continue;
                        }
                        let w = two * z;
                        for ((o, &a), &b) in
                            ds.row_mut(i).iter_mut().zip(sv.row(i)).zip(target.row(j))
                        {
                            *o = *o + w * (a - b);
                        }
                    }
                }
                acc(*source, ds);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let inv = T::one() / T::from_usize(xv.rows()).unwrap();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    for (o, &v) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = v * inv;
                    }
                }
                acc(*x, dx);
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = (gr[c] - yr[c] * dot) / norms[r];
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), g.item()));
            }
        }
    }

    /// Parameter gradients keyed by store index, in binding order.
    pub fn param_grads<'a>(
        &'a self,
        grads: &'a Gradients<T>,
    ) -> impl Iterator<Item = (usize, &'a Matrix<T>)> + 'a {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(move |(i, n)| match n.op {
                Op::Param(p) => grads.grads[i].as_ref().map(|g| (p, g)),
                _ => None,
            })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` is unreachable or gradient-free.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn column_sums<T: Scalar>(g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &v) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o = *o + v;
        }
    }
    out
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (
        T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt()),
        T::from_f64_lossy(0.044715),
    )
}

fn gelu<T: Scalar>(x: T) -> T {
    let (k, c) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (k, c) = gelu_consts::<T>();
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * c * x * x)
}
