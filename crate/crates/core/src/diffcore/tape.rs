//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation is evaluated eagerly when it is recorded, so the tape is
//! always in topological order and the backward pass is a single reverse sweep.
//! Reductions accumulate strictly left to right, so repeated runs on the same
//! inputs are bit-identical.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::params::ParamStore;
use super::tensor::{matmul_at_raw, matmul_bt_raw, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;
const L2_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Arc<Vec<Option<usize>>>),
    L2NormalizeRows(Var),
    LayerNormRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Affine(..) => "affine",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::SoftmaxRows(..) => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Max(..) => "max",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Gather(..) => "gather",
            Op::L2NormalizeRows(..) => "l2_normalize",
            Op::LayerNormRows(..) => "layer_norm",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// A recorded computation.
///
/// Leaves come in three kinds: constants (never differentiated), inputs
/// (differentiated, addressable by [`Var`]) and parameters (differentiated and
/// reported by name in [`Gradients::params`]).
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn mismatch(op: &'static str, node: usize, detail: String) -> Error {
    Error::shape(op, format!("node {node}: {detail}"))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn next_id(&self) -> usize {
        self.nodes.len()
    }

    /// Which piece of every piecewise-linear op was taken: one flag per relu
    /// input element and the selected index of every max. Two evaluations
    /// with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) if node.tracked => sig.extend(self.value(a).data().iter().map(|&x| usize::from(x > 0.0))),
                Op::Max(_, best) if node.tracked => sig.push(best),
                _ => {}
            }
        }
        sig
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a named trainable parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch(op, self.next_id(), format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn row_broadcast(&mut self, a: Var, row: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        if !ta.is_matrix() || tr.len() != c {
            return Err(mismatch(
                op.name(),
                self.next_id(),
                format!("{:?} with row {:?}", ta.shape(), tr.shape()),
            ));
        }
        let rd = tr.data();
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|r| r.iter().zip(rd).map(|(&x, &y)| f(x, y)))
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(out, op, tracked))
    }

    /// `a[n, d] + row[1, d]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, Op::AddRow(a, row), |x, y| x + y)
    }

    /// `a[n, d] * row[1, d]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast(a, row, Op::MulRow(a, row), |x, y| x * y)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let tracked = self.tracked(a);
        self.push(out, Op::Affine(a, scale), tracked)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(mismatch(
                "matmul",
                self.next_id(),
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let out = ta.matmul(tb)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul(a, b), tracked))
    }

    /// `x W + b` with `b` a row vector.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(mismatch("transpose", self.next_id(), format!("{:?}", ta.shape())));
        }
        let out = ta.transpose();
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Transpose(a), tracked))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let tracked = self.tracked(a);
        self.push(out, op, tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("exp overflow at node {}", self.next_id())));
        }
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Exp(a), tracked))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite(format!("log of non-positive value at node {}", self.next_id())));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if !ta.is_matrix() {
            return Err(mismatch("softmax", self.next_id(), format!("{:?}", ta.shape())));
        }
        let c = ta.cols();
        let mut data = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(c) {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z = e.iter().fold(0.0, |s, &v| s + v);
            data.extend(e.into_iter().map(|v| v / z));
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::SoftmaxRows(a), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(out, Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let tracked = self.tracked(a);
        self.push(out, Op::Mean(a), tracked)
    }

    /// Largest element; the gradient flows to the first maximiser.
    pub fn max(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut best = 0;
        for (i, &v) in t.data().iter().enumerate() {
            if v > t.data()[best] {
                best = i;
            }
        }
        let out = Tensor::scalar(t.data()[best]);
        let tracked = self.tracked(a);
        self.push(out, Op::Max(a, best), tracked)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(mismatch("concat_cols", self.next_id(), "no inputs".into()));
        }
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            let t = self.value(p);
            if !t.is_matrix() || t.rows() != rows {
                return Err(mismatch(
                    "concat_cols",
                    self.next_id(),
                    format!("row count {} vs {rows}", t.rows()),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            tracked,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(mismatch("concat_rows", self.next_id(), "no inputs".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if !t.is_matrix() || t.cols() != cols {
                return Err(mismatch(
                    "concat_rows",
                    self.next_id(),
                    format!("column count {} vs {cols}", t.cols()),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(parts.to_vec()),
            tracked,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() || len == 0 || start + len > t.cols() {
            return Err(mismatch(
                "slice_cols",
                self.next_id(),
                format!("[{start}, {}) of {:?}", start + len, t.shape()),
            ));
        }
        let data = (0..t.rows())
            .flat_map(|r| t.row_slice(r)[start..start + len].iter().copied())
            .collect();
        let out = Tensor::from_parts(vec![t.rows(), len], data);
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::SliceCols(a, start), tracked))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() || len == 0 || start + len > t.rows() {
            return Err(mismatch(
                "slice_rows",
                self.next_id(),
                format!("[{start}, {}) of {:?}", start + len, t.shape()),
            ));
        }
        let c = t.cols();
        let out = Tensor::from_parts(vec![len, c], t.data()[start * c..(start + len) * c].to_vec());
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::SliceRows(a, start), tracked))
    }

    /// Element gather over the flattened input; `None` produces a zero.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<Option<usize>>>, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let n: usize = shape.iter().product();
        if n != index.len() || index.iter().flatten().any(|&i| i >= t.len()) {
            return Err(mismatch(
                "gather",
                self.next_id(),
                format!("{} indices into {} values for shape {shape:?}", index.len(), t.len()),
            ));
        }
        let src = t.data();
        let data = index.iter().map(|i| i.map_or(0.0, |i| src[i])).collect();
        let out = Tensor::from_parts(shape, data);
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Gather(a, index), tracked))
    }

    /// Row gather of a matrix, e.g. an embedding lookup.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(mismatch(
                "gather_rows",
                self.next_id(),
                format!("row {bad} out of {}", t.rows()),
            ));
        }
        let index: Vec<Option<usize>> = rows
            .iter()
            .flat_map(|&r| (0..c).map(move |j| Some(r * c + j)))
            .collect();
        self.gather(a, Arc::new(index), vec![rows.len(), c])
    }

    /// Scales each row to unit Euclidean norm, with the norm clamped below by 1e-12.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(mismatch("l2_normalize", self.next_id(), format!("{:?}", t.shape())));
        }
        let c = t.cols();
        let data = t
            .data()
            .chunks(c)
            .flat_map(|row| {
                let n = row_norm(row).max(L2_CLAMP);
                row.iter().map(move |&v| v / n)
            })
            .collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::L2NormalizeRows(a), tracked))
    }

    /// Zero-mean, unit-variance rows (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(mismatch("layer_norm", self.next_id(), format!("{:?}", t.shape())));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for row in t.data().chunks(c) {
            let (mu, sigma) = row_stats(row);
            data.extend(row.iter().map(|&v| (v - mu) / sigma));
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::LayerNormRows(a), tracked))
    }

    /// Reverse sweep from a scalar node.
    pub fn gradients(&self, output: Var) -> Result<Gradients> {
        let t = self.value(output);
        if t.len() != 1 {
            return Err(Error::shape(
                "gradients",
                format!("output node {} is not scalar: {:?}", output.0, t.shape()),
            ));
        }
        self.backward(output, Tensor::full(t.shape(), 1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// through the tape.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} for node {:?}", seed.shape(), self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.into_data());
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.tracked {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, contrib: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, &g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::AddRow(a, r) => {
                acc(*a, &mut |s| add_into(s, g));
                let c = self.nodes[r.0].value.len();
                acc(*r, &mut |s| {
                    for row in g.chunks(c) {
                        add_into(s, row);
                    }
                });
            }
            Op::MulRow(a, r) => {
                let (va, vr) = (val(*a), val(*r));
                let c = vr.len();
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i] * vr[i % c];
                    }
                });
                acc(*r, &mut |s| {
                    for (i, &gi) in g.iter().enumerate() {
                        s[i % c] += gi * va[i];
                    }
                });
            }
            Op::Affine(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, &g)| *s += k * g)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |s| add_into(s, &matmul_bt_raw(g, tb.data(), n, m, k)));
                acc(*b, &mut |s| add_into(s, &matmul_at_raw(ta.data(), g, n, k, m)));
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let gt = Tensor::from_parts(vec![r, c], g.to_vec()).transpose();
                acc(*a, &mut |s| add_into(s, gt.data()));
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if va[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / va[i];
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot = grow.iter().zip(yrow).fold(0.0, |acc, (g, y)| acc + g * y);
                        for j in 0..c {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Max(a, i) => acc(*a, &mut |s| s[*i] += g[0]),
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.cols();
                    acc(p, &mut |s| {
                        for (srow, grow) in s.chunks_mut(c).zip(g.chunks(total)) {
                            add_into(srow, &grow[off..off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(p, &mut |s| add_into(s, &g[off..off + n]));
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let c_in = self.nodes[a.0].value.cols();
                let len = node.value.cols();
                acc(*a, &mut |s| {
                    for (srow, grow) in s.chunks_mut(c_in).zip(g.chunks(len)) {
                        add_into(&mut srow[*start..*start + len], grow);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = node.value.cols();
                acc(*a, &mut |s| add_into(&mut s[start * c..start * c + g.len()], g));
            }
            Op::Gather(a, index) => acc(*a, &mut |s| {
                for (gi, idx) in g.iter().zip(index.iter()) {
                    if let Some(i) = idx {
                        s[*i] += gi;
                    }
                }
            }),
            Op::L2NormalizeRows(a) => {
                let va = val(*a);
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for r in 0..s.len() / c {
                        let xr = &va[r * c..(r + 1) * c];
                        let yr = &out[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let n = row_norm(xr);
                        let sr = &mut s[r * c..(r + 1) * c];
                        if n > L2_CLAMP {
                            let dot = gr.iter().zip(yr).fold(0.0, |acc, (g, y)| acc + g * y);
                            for j in 0..c {
                                sr[j] += (gr[j] - yr[j] * dot) / n;
                            }
                        } else {
                            for j in 0..c {
                                sr[j] += gr[j] / L2_CLAMP;
                            }
                        }
                    }
                });
            }
            Op::LayerNormRows(a) => {
                let va = val(*a);
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for r in 0..s.len() / c {
                        let (_, sigma) = row_stats(&va[r * c..(r + 1) * c]);
                        let yr = &out[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let mg = gr.iter().fold(0.0, |a, &v| a + v) / c as f64;
                        let mgy = gr.iter().zip(yr).fold(0.0, |a, (g, y)| a + g * y) / c as f64;
                        let sr = &mut s[r * c..(r + 1) * c];
                        for j in 0..c {
                            sr[j] += (gr[j] - mg - yr[j] * mgy) / sigma;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().fold(0.0, |s, &v| s + v * v).sqrt()
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().fold(0.0, |s, &v| s + v) / n;
    let var = row.iter().fold(0.0, |s, &v| s + (v - mu) * (v - mu)) / n;
    (mu, (var + LAYER_NORM_EPS).sqrt())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of a backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient with respect to a node, if the node was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every bound parameter, keyed by name. Parameters that the
    /// output does not depend on get a zero tensor.
    pub fn params(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Sums parameter gradients from several tapes, in the order given.
pub fn accumulate(into: &mut HashMap<String, Tensor>, grads: BTreeMap<String, Tensor>) {
    for (name, g) in grads {
        match into.get_mut(&name) {
            Some(t) => add_into(t.data_mut(), g.data()),
            None => {
                into.insert(name, g);
            }
        }
    }
}
