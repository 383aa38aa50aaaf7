//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass together with its
//! output value. [`Tape::backward`] walks the records in reverse and sums
//! contributions into each input, always in tape order, so two backward passes
//! over identical tapes give bitwise identical gradients.

use std::fmt;

use rand::Rng;

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    MulCol,
    Affine,
    Tanh,
    Sigmoid,
    Softmax,
    ConcatCols,
    ConcatRows,
    SliceCols,
    SliceRows,
    GatherRows,
    Transpose,
    Sum,
    Mean,
    Reshape,
    Dropout,
    Cosine,
    Bce,
}

impl OpKind {
    /// Every kind with a backward rule.
    pub const DIFFERENTIABLE: [OpKind; 22] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddRow,
        OpKind::MulCol,
        OpKind::Affine,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::ConcatCols,
        OpKind::ConcatRows,
        OpKind::SliceCols,
        OpKind::SliceRows,
        OpKind::GatherRows,
        OpKind::Transpose,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Reshape,
        OpKind::Dropout,
        OpKind::Cosine,
        OpKind::Bce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::Param => "param",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::MulCol => "mul_col",
            OpKind::Affine => "affine",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::ConcatCols => "concat_cols",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceCols => "slice_cols",
            OpKind::SliceRows => "slice_rows",
            OpKind::GatherRows => "gather_rows",
            OpKind::Transpose => "transpose",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Reshape => "reshape",
            OpKind::Dropout => "dropout",
            OpKind::Cosine => "cosine",
            OpKind::Bce => "bce",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::DIFFERENTIABLE
            .into_iter()
            .chain([OpKind::Leaf, OpKind::Constant, OpKind::Param])
            .find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Clamp applied to probabilities inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Dropout(Var, Vec<f64>),
    Cosine(Var, Var),
    Bce(Var, Vec<f64>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulCol(..) => OpKind::MulCol,
            Op::Affine(..) => OpKind::Affine,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax(_) => OpKind::Softmax,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Dropout(..) => OpKind::Dropout,
            Op::Cosine(..) => OpKind::Cosine,
            Op::Bce(..) => OpKind::Bce,
        }
    }
}

struct Node {
    op: Op,
    // `None` only for parameters, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// Gradients from one backward pass.
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a parameter, `None` when the parameter never reached the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter, zero-filled when it was unreachable.
    pub fn param_or_zero(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    pub fn by_name(&self, store: &ParamStore, name: &str) -> Result<Tensor> {
        Ok(self.param_or_zero(store, store.id(name)?))
    }

    /// Gradient with respect to any recorded value.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Name → gradient for every parameter in the store.
    pub fn named(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        store
            .iter()
            .map(|(id, p)| (p.name.clone(), self.param_or_zero(store, id)))
            .collect()
    }
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    stochastic: bool,
    corrupt: Option<OpKind>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            stochastic: false,
            corrupt: None,
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True once a stochastic op (dropout with p > 0) has been recorded.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    /// Test hook: perturbs the backward rule of one op kind.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.corrupt = Some(kind);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = self.inputs_require_grad(&op);
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_require_grad(&self, op: &Op) -> bool {
        let g = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf | Op::Param(_) => true,
            Op::Constant => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::Cosine(a, b) => g(a) || g(b),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(g),
            Op::Affine(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::GatherRows(a, _)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::Dropout(a, _)
            | Op::Bce(a, _) => g(a),
        }
    }

    // ── leaves ──────────────────────────────────────────────────────────

    /// An input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Some(value),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A detached value; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(value),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ── forward ops ─────────────────────────────────────────────────────

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// `[n, k] · [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = tensor::matmul(ta, tb);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.mismatch(name, a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    /// `[r, c] + [1, c]`, the row added to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() || tr.shape().len() != 2 {
            return Err(self.mismatch("add_row", a, row));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % c])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRow(a, row), out))
    }

    /// `[r, c] ⊙ [r, 1]`, each row scaled by its entry.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() || ta.shape().len() != 2 {
            return Err(self.mismatch("mul_col", a, col));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * tc.data()[i / c])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::MulCol(a, col), out))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push(Op::Affine(a, scale), out)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `1 − a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_masked(a, None)
    }

    /// Softmax over the last axis restricted to entries where `mask` is true;
    /// masked entries come out as exactly zero.
    pub fn softmax_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(Error::ShapeMismatch {
                    op: "softmax",
                    lhs: ta.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let c = ta.cols();
        let mut out = vec![0.0; ta.len()];
        for r in 0..ta.rows() {
            let row = &ta.data()[r * c..(r + 1) * c];
            let keep = |j: usize| mask.is_none_or(|m| m[r * c + j]);
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Empty("softmax over a fully masked row"));
            }
            let mut total = 0.0;
            for j in (0..c).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                out[r * c + j] = e;
                total += e;
            }
            for o in &mut out[r * c..(r + 1) * c] {
                *o /= total;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax(a), out))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat of nothing"))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows || self.shape(p).len() != 2 {
                return Err(self.mismatch("concat_cols", first, p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat of nothing"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        for &p in parts {
            if self.value(p).cols() != cols || self.shape(p).len() != 2 {
                return Err(self.mismatch("concat_rows", first, p));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(data.len() / cols, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.cols() || ta.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..end]);
        }
        let out = Tensor::matrix(ta.rows(), end - start, data)?;
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.rows() || ta.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let c = ta.cols();
        let out = Tensor::matrix(end - start, c, ta.data()[start * c..end * c].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start), out))
    }

    /// Gathers rows by index; `None` yields a zero row that passes no gradient.
    pub fn gather_rows(&mut self, a: Var, rows: &[Option<usize>]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Empty("gather of no rows"));
        }
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = vec![0.0; rows.len() * c];
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                if r >= ta.rows() {
                    return Err(Error::IndexOutOfRange {
                        index: r,
                        len: ta.rows(),
                    });
                }
                data[i * c..(i + 1) * c].copy_from_slice(ta.row_slice(r));
            }
        }
        let out = Tensor::matrix(rows.len(), c, data)?;
        Ok(self.push(Op::GatherRows(a, rows.to_vec()), out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.data()[i * c + j];
            }
        }
        let out = Tensor::matrix(c, r, data)?;
        Ok(self.push(Op::Transpose(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), out))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1−p)`. `p == 0` is the
    /// identity and records nothing.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let ta = self.value(a);
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.stochastic = true;
        self.push(Op::Dropout(a, mask), out)
    }

    /// Dropout with a caller-chosen mask of per-entry factors. The result is
    /// a deterministic function of `a`, so the tape stays checkable.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Dropout(a, mask), out))
    }

    /// Cosine similarity of two equally shaped tensors, as a scalar. Zero when
    /// either side is the zero vector.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.mismatch("cosine", a, b));
        }
        let c = tensor::cosine(ta.data(), tb.data());
        Ok(self.push(Op::Cosine(a, b), Tensor::scalar(c)))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels, with the
    /// probabilities clamped to `[BCE_EPS, 1 − BCE_EPS]`.
    pub fn bce(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "bce",
                lhs: tp.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::BadLabel(bad));
        }
        let n = labels.len() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        Ok(self.push(Op::Bce(pred, labels.to_vec()), Tensor::scalar(loss)))
    }

    // ── composites ─────────────────────────────────────────────────────

    /// `x · W + b` with `W` stored `[in, out]` and `b` a `[1, out]` row.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let wv = self.param(w);
        let y = self.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = self.param(b);
                self.add_row(y, bv)
            }
            None => Ok(y),
        }
    }

    // ── backward ───────────────────────────────────────────────────────

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else { continue };
            let mut acc = Accumulator {
                nodes: &self.nodes,
                grads: before,
                corrupt: self.corrupt == Some(node.op.kind()),
            };
            self.backward_op(&node.op, node.value.as_ref(), g, &mut acc);
        }

        let mut params: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        for (pid, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                params[pid] = grads[v.0].clone();
            }
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn backward_op(&self, op: &Op, out: Option<&Tensor>, g: &Tensor, acc: &mut Accumulator<'_>) {
        let out = || out.expect("recorded value");
        match op {
            Op::Leaf | Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if acc.wants(*a) {
                    acc.add(*a, tensor::matmul_nt(g, tb));
                }
                if acc.wants(*b) {
                    acc.add(*b, tensor::matmul_tn(ta, g));
                }
            }
            Op::Add(a, b) => {
                acc.add_ref(*a, g);
                acc.add_ref(*b, g);
            }
            Op::Sub(a, b) => {
                acc.add_ref(*a, g);
                if acc.wants(*b) {
                    acc.add(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if acc.wants(*a) {
                    acc.add(*a, zip(g, tb, |x, y| x * y));
                }
                if acc.wants(*b) {
                    acc.add(*b, zip(g, ta, |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                acc.add_ref(*a, g);
                if acc.wants(*row) {
                    let c = g.cols();
                    let mut s = vec![0.0; c];
                    for (i, &x) in g.data().iter().enumerate() {
                        s[i % c] += x;
                    }
                    acc.add(*row, Tensor::row(s));
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let c = g.cols();
                if acc.wants(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x * tc.data()[i / c])
                        .collect();
                    acc.add(*a, Tensor::new(g.shape().to_vec(), data).unwrap());
                }
                if acc.wants(*col) {
                    let mut s = vec![0.0; g.rows()];
                    for (i, (&x, &y)) in g.data().iter().zip(ta.data()).enumerate() {
                        s[i / c] += x * y;
                    }
                    acc.add(*col, Tensor::new(tc.shape().to_vec(), s).unwrap());
                }
            }
            Op::Affine(a, s) => {
                if acc.wants(*a) {
                    acc.add(*a, g.map(|x| x * s));
                }
            }
            Op::Tanh(a) => {
                if acc.wants(*a) {
                    acc.add(*a, zip(g, out(), |x, y| x * (1.0 - y * y)));
                }
            }
            Op::Sigmoid(a) => {
                if acc.wants(*a) {
                    acc.add(*a, zip(g, out(), |x, y| x * y * (1.0 - y)));
                }
            }
            Op::Softmax(a) => {
                if acc.wants(*a) {
                    let y = out();
                    let c = y.cols();
                    let mut d = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            d[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc.add(*a, Tensor::new(y.shape().to_vec(), d).unwrap());
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if acc.wants(p) {
                        let mut data = Vec::with_capacity(g.rows() * w);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        acc.add(p, Tensor::matrix(g.rows(), w, data).unwrap());
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    if acc.wants(p) {
                        let data = g.data()[offset * c..(offset + h) * c].to_vec();
                        acc.add(p, Tensor::matrix(h, c, data).unwrap());
                    }
                    offset += h;
                }
            }
            Op::SliceCols(a, start) => {
                if acc.wants(*a) {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.shape());
                    let (c, w) = (ta.cols(), g.cols());
                    for r in 0..g.rows() {
                        d.data_mut()[r * c + start..r * c + start + w].copy_from_slice(g.row_slice(r));
                    }
                    acc.add(*a, d);
                }
            }
            Op::SliceRows(a, start) => {
                if acc.wants(*a) {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.shape());
                    let c = ta.cols();
                    d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc.add(*a, d);
                }
            }
            Op::GatherRows(a, rows) => {
                if acc.wants(*a) {
                    let ta = self.value(*a);
                    let mut d = Tensor::zeros(ta.shape());
                    let c = ta.cols();
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = *r {
                            for (x, &y) in d.data_mut()[r * c..(r + 1) * c].iter_mut().zip(g.row_slice(i)) {
                                *x += y;
                            }
                        }
                    }
                    acc.add(*a, d);
                }
            }
            Op::Transpose(a) => {
                if acc.wants(*a) {
                    let (r, c) = (g.rows(), g.cols());
                    let mut data = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            data[j * r + i] = g.data()[i * c + j];
                        }
                    }
                    acc.add(*a, Tensor::matrix(c, r, data).unwrap());
                }
            }
            Op::Sum(a) => {
                if acc.wants(*a) {
                    acc.add(*a, Tensor::filled(self.shape(*a), g.item()));
                }
            }
            Op::Mean(a) => {
                if acc.wants(*a) {
                    let ta = self.value(*a);
                    acc.add(*a, Tensor::filled(ta.shape(), g.item() / ta.len() as f64));
                }
            }
            Op::Reshape(a) => {
                if acc.wants(*a) {
                    acc.add(*a, g.reshaped(self.shape(*a)).unwrap());
                }
            }
            Op::Dropout(a, mask) => {
                if acc.wants(*a) {
                    let data = g.data().iter().zip(mask).map(|(x, m)| x * m).collect();
                    acc.add(*a, Tensor::new(g.shape().to_vec(), data).unwrap());
                }
            }
            Op::Cosine(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let na = ta.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = tb.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                let c = out().item();
                let gs = g.item();
                let side = |x: &Tensor, y: &Tensor, nx: f64, ny: f64| {
                    if nx == 0.0 || ny == 0.0 {
                        return Tensor::zeros(x.shape());
                    }
                    let data = x
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&xi, &yi)| gs * (yi / (nx * ny) - c * xi / (nx * nx)))
                        .collect();
                    Tensor::new(x.shape().to_vec(), data).unwrap()
                };
                if acc.wants(*a) {
                    acc.add(*a, side(ta, tb, na, nb));
                }
                if acc.wants(*b) {
                    acc.add(*b, side(tb, ta, nb, na));
                }
            }
            Op::Bce(pred, labels) => {
                if acc.wants(*pred) {
                    let tp = self.value(*pred);
                    let n = labels.len() as f64;
                    let gs = g.item();
                    let data = tp
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(&p, &y)| {
                            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                                0.0
                            } else {
                                gs * (-y / p + (1.0 - y) / (1.0 - p)) / n
                            }
                        })
                        .collect();
                    acc.add(*pred, Tensor::new(tp.shape().to_vec(), data).unwrap());
                }
            }
        }
    }
}

struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Tensor>],
    corrupt: bool,
}

impl Accumulator<'_> {
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn add(&mut self, v: Var, mut g: Tensor) {
        if !self.wants(v) {
            return;
        }
        if self.corrupt {
            g = g.map(|x| x + 0.01);
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn add_ref(&mut self, v: Var, g: &Tensor) {
        if self.wants(v) {
            self.add(v, g.clone());
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
