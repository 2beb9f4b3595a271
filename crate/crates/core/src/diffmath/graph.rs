//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op checks shapes and
//! rejects non-finite results immediately, so a fault names the op that produced
//! it. [`Graph::backward`] runs one reverse sweep from a scalar output.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul, matmul_nt, matmul_tn};
use super::{DiffError, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Parameter group a leaf belongs to. Gradients are collected per group, so one
/// tensor used by two networks can receive two independent updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Group(pub u8);

#[derive(Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Gather(Var, Vec<usize>),
    MeanPool(Var, Vec<Vec<usize>>),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    LogSumExp(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<(Var, ParamId, Group)>,
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: &'static str, kind: Op, value: Tensor) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NumericFault { op });
        }
        let needs_grad = match &kind {
            Op::Input => false,
            Op::ConcatRows(parts) => parts.iter().any(|p| self.nodes[p.0].needs_grad),
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::ConcatCols(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Clamp(a, _, _)
            | Op::Gather(a, _)
            | Op::MeanPool(a, _)
            | Op::SliceRows(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::LogSumExp(a) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node {
            op: kind,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, DiffError> {
        self.push("constant", Op::Input, value)
    }

    /// Differentiable input that is not a stored parameter (used for gradient checks
    /// with respect to data, e.g. an action vector).
    pub fn variable(&mut self, value: Tensor) -> Result<Var, DiffError> {
        let v = self.push("variable", Op::Input, value)?;
        self.nodes[v.0].needs_grad = true;
        Ok(v)
    }

    /// Leaf holding a copy of a stored parameter, tagged with its update group.
    pub fn param(&mut self, store: &ParamStore, id: ParamId, group: Group) -> Result<Var, DiffError> {
        let v = self.variable(store.get(id).clone())?;
        self.leaves.push((v, id, group));
        Ok(v)
    }

    fn unary(&mut self, op: &'static str, a: Var, kind: Op, f: impl Fn(f64) -> f64) -> Result<Var, DiffError> {
        let value = self.value(a).map(f);
        self.push(op, kind, value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, kind: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var, DiffError> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(ta.rows(), ta.cols(), data);
        self.push(op, kind, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let value = matmul(ta, tb);
        self.push("matmul", Op::MatMul(a, b), value)
    }

    /// `a (m x n) + bias (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row", format!("{:?} + row {:?}", ta.shape(), tb.shape())));
        }
        let mut value = ta.clone();
        let n = ta.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % n];
        }
        self.push("add_row", Op::AddRow(a, bias), value)
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        self.unary("scale", a, Op::Scale(a, c), |x| c * x)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        self.unary("offset", a, Op::Offset(a), |x| x + c)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Result<Var, DiffError> {
        let neg = self.scale(a, -1.0)?;
        self.offset(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, DiffError> {
        self.unary("clamp", a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Rows `indices` of `table` (embedding lookup / one-hot times matrix).
    pub fn gather(&mut self, table: Var, indices: Vec<usize>) -> Result<Var, DiffError> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(shape_err("gather", format!("row {bad} out of {}", t.rows())));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::from_vec(indices.len(), cols, data);
        self.push("gather", Op::Gather(table, indices), value)
    }

    /// Mean of the table rows in each bag; an empty bag yields a zero row.
    pub fn mean_pool(&mut self, table: Var, bags: Vec<Vec<usize>>) -> Result<Var, DiffError> {
        let t = self.value(table);
        let cols = t.cols();
        let mut value = Tensor::zeros(bags.len(), cols);
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                continue;
            }
            let inv = 1.0 / bag.len() as f64;
            for &i in bag {
                if i >= t.rows() {
                    return Err(shape_err("mean_pool", format!("row {i} out of {}", t.rows())));
                }
                let src = t.row_slice(i);
                for (c, s) in src.iter().enumerate() {
                    let cur = value.get(b, c);
                    value.set(b, c, cur + inv * s);
                }
            }
        }
        self.push("mean_pool", Op::MeanPool(table, bags), value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(shape_err("concat_cols", format!("{:?} | {:?}", ta.shape(), tb.shape())));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.rows() * (ca + cb));
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row_slice(r));
            data.extend_from_slice(tb.row_slice(r));
        }
        let value = Tensor::from_vec(ta.rows(), ca + cb, data);
        self.push("concat_cols", Op::ConcatCols(a, b), value)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs".into()));
        };
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", format!("{} vs {} columns", cols, t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(rows, cols, data);
        self.push("concat_rows", Op::ConcatRows(parts.to_vec()), value)
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if start + len > t.rows() {
            return Err(shape_err("slice_rows", format!("{start}+{len} of {} rows", t.rows())));
        }
        let cols = t.cols();
        let value = Tensor::from_vec(len, cols, t.data()[start * cols..(start + len) * cols].to_vec());
        self.push("slice_rows", Op::SliceRows(a, start), value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(DiffError::Domain("mean of an empty tensor".into()));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Op::Mean(a), Tensor::scalar(m))
    }

    /// Max-shifted `log Σ exp` over every element.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = log_sum_exp(self.value(a).data())?;
        self.push("log_sum_exp", Op::LogSumExp(a), Tensor::scalar(v))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Backward, DiffError> {
        if self.value(output).shape() != (1, 1) {
            return Err(shape_err("backward", format!("output shape {:?}", self.value(output).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            if !dy.is_finite() {
                return Err(DiffError::NumericFault { op: "backward" });
            }
            self.propagate(&node.op, &node.value, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        Ok(Backward {
            grads,
            leaves: self
                .leaves
                .iter()
                .map(|&(v, id, g)| (v, id, g, self.value(v).shape()))
                .collect(),
        })
    }

    fn propagate(&self, op: &Op, y: &Tensor, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, g: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let elementwise = |x: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            let data = x.data().iter().zip(dy.data()).map(|(&a, &d)| f(a, d)).collect();
            Tensor::from_vec(x.rows(), x.cols(), data)
        };

        match op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, matmul_nt(dy, val(*b)));
                }
                if needs(*b) {
                    acc(*b, matmul_tn(val(*a), dy));
                }
            }
            Op::AddRow(a, b) => {
                acc(*a, dy.clone());
                if needs(*b) {
                    let mut col_sums = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (c, d) in dy.row_slice(r).iter().enumerate() {
                            col_sums.data_mut()[c] += d;
                        }
                    }
                    acc(*b, col_sums);
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.map(|d| -d));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, elementwise(val(*b), &|bv, d| bv * d));
                }
                if needs(*b) {
                    acc(*b, elementwise(val(*a), &|av, d| av * d));
                }
            }
            Op::Scale(a, c) => acc(*a, dy.map(|d| c * d)),
            Op::Offset(a) => acc(*a, dy.clone()),
            Op::Tanh(a) => acc(*a, elementwise(y, &|yv, d| d * (1.0 - yv * yv))),
            Op::Sigmoid(a) => acc(*a, elementwise(y, &|yv, d| d * yv * (1.0 - yv))),
            Op::Exp(a) => acc(*a, elementwise(y, &|yv, d| d * yv)),
            Op::Relu(a) => acc(*a, elementwise(val(*a), &|x, d| if x > 0.0 { d } else { 0.0 })),
            Op::Log(a) => acc(*a, elementwise(val(*a), &|x, d| d / x)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                elementwise(val(*a), &|x, d| if x >= *lo && x <= *hi { d } else { 0.0 }),
            ),
            Op::Gather(table, indices) => {
                let t = val(*table);
                let mut g = Tensor::zeros(t.rows(), t.cols());
                let cols = t.cols();
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut g.data_mut()[i * cols..(i + 1) * cols];
                    for (o, d) in dst.iter_mut().zip(dy.row_slice(r)) {
                        *o += d;
                    }
                }
                acc(*table, g);
            }
            Op::MeanPool(table, bags) => {
                let t = val(*table);
                let mut g = Tensor::zeros(t.rows(), t.cols());
                let cols = t.cols();
                for (b, bag) in bags.iter().enumerate() {
                    if bag.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / bag.len() as f64;
                    for &i in bag {
                        let dst = &mut g.data_mut()[i * cols..(i + 1) * cols];
                        for (o, d) in dst.iter_mut().zip(dy.row_slice(b)) {
                            *o += inv * d;
                        }
                    }
                }
                acc(*table, g);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let rows = dy.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = dy.row_slice(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(*a, Tensor::from_vec(rows, ca, ga));
                acc(*b, Tensor::from_vec(rows, cb, gb));
            }
            Op::ConcatRows(parts) => {
                let cols = dy.cols();
                let mut start = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    let chunk = dy.data()[start * cols..(start + rows) * cols].to_vec();
                    acc(*p, Tensor::from_vec(rows, cols, chunk));
                    start += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let cols = src.cols();
                let mut g = Tensor::zeros(src.rows(), cols);
                g.data_mut()[start * cols..start * cols + dy.len()].copy_from_slice(dy.data());
                acc(*a, g);
            }
            Op::Sum(a) => {
                let d = dy.item();
                let x = val(*a);
                acc(*a, Tensor::filled(x.rows(), x.cols(), d));
            }
            Op::Mean(a) => {
                let x = val(*a);
                let d = dy.item() / x.len() as f64;
                acc(*a, Tensor::filled(x.rows(), x.cols(), d));
            }
            Op::LogSumExp(a) => {
                let lse = y.item();
                let d = dy.item();
                acc(*a, val(*a).map(|x| d * (x - lse).exp()));
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Backward {
    grads: Vec<Option<Tensor>>,
    leaves: Vec<(Var, ParamId, Group, (usize, usize))>,
}

impl Backward {
    /// Gradient of the output with respect to `v`; `None` when `v` does not
    /// influence the output or carries no gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients for leaves tagged `group`, summed when one parameter
    /// appears in several leaves. Parameters that the output does not reach get
    /// an explicit zero gradient.
    pub fn param_grads(&self, group: Group) -> Gradients {
        let mut out = Gradients::new();
        for &(v, id, g, shape) in &self.leaves {
            if g != group {
                continue;
            }
            let grad = match self.grad(v) {
                Some(t) => t.clone(),
                None => Tensor::zeros(shape.0, shape.1),
            };
            match out.get_mut(&id) {
                Some(existing) => existing.add_assign(&grad),
                None => {
                    out.insert(id, grad);
                }
            }
        }
        out
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln Σ exp(v_i)`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64, DiffError> {
    let Some(max) = values.iter().copied().reduce(f64::max) else {
        return Err(DiffError::Domain("log_sum_exp of an empty vector".into()));
    };
    if values.len() == 1 {
        return Ok(values[0]);
    }
    if !max.is_finite() {
        return Ok(max);
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + s.ln())
}
