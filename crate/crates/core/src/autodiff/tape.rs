//! Reverse-mode differentiation over a linear record of tensor ops.
//!
//! Every op appends a node whose inputs are strictly earlier nodes, so the
//! node list is already a topological order and the backward pass is a single
//! reverse sweep.

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an op whose forward value is computed outside the tape.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: one optional gradient per input, each shaped
    /// like that input.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Sum(Var),
    SumSquares(Var),
    MeanRows(Var),
    PickSum(Var, Vec<(usize, usize)>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
    },
    Custom(Vec<Var>, Box<dyn CustomOp<T>>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// The operation record for one forward/backward pass. Confined to a single
/// thread; build a fresh tape per training step.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bound: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, true, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// Binds a stored parameter. Repeated binds of the same id return the
    /// same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), true, Op::Param(id));
        self.bound.insert(id, v);
        v
    }

    /// Gradients of every bound parameter after [`Tape::backward`].
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.nodes.iter().filter_map(|n| match (&n.op, &n.grad) {
            (Op::Param(id), Some(g)) => Some((*id, g)),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    /// `a + 1·row`, broadcasting a `1 × n` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::shape("add_row", ta.shape(), tr.shape()));
        }
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % n])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, rg, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x * c).collect(),
        )
        .expect("same shape");
        let rg = self.rg(a);
        self.push(out, rg, Op::Scale(a, c))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(out, rg, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, rg, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            let lse = super::tensor::logsumexp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, rg, Op::LogSoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, rg, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &v in vars {
            let t = self.value(v);
            if t.rows() != rows {
                return Err(Error::shape("concat_cols", self.shape(*first), t.shape()));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &v in vars {
            let t = self.value(v);
            for r in 0..rows {
                for c in 0..t.cols() {
                    out.set(r, off + c, t.at(r, c));
                }
            }
            off += t.cols();
        }
        let rg = vars.iter().any(|&v| self.rg(v));
        Ok(self.push(out, rg, Op::ConcatCols(vars.to_vec())))
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let first = vars.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &v in vars {
            let t = self.value(v);
            if t.cols() != cols {
                return Err(Error::shape("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let rg = vars.iter().any(|&v| self.rg(v));
        Ok(self.push(out, rg, Op::ConcatRows(vars.to_vec())))
    }

    /// Selects rows by index, in the given order. An empty index list yields
    /// a `0 × n` tensor.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= ta.rows() {
                return Err(Error::shape("gather_rows", ta.shape(), &[i]));
            }
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::new(vec![idx.len(), n], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::GatherRows(a, idx.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.cols() {
            return Err(Error::shape("slice_cols", ta.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(ta.rows() * w);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let out = Tensor::new(vec![ta.rows(), w], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::SliceCols(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).sum_squares();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::SumSquares(a))
    }

    /// Column means, `m × n → 1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() == 0 {
            return Err(Error::EmptyInput("mean_rows"));
        }
        let m = T::of(ta.rows() as f64);
        let mut out = vec![T::zero(); ta.cols()];
        for r in 0..ta.rows() {
            for (o, &v) in out.iter_mut().zip(ta.row(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o = *o / m;
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::row_vector(out), rg, Op::MeanRows(a)))
    }

    /// Scalar sum of the selected `(row, col)` entries.
    pub fn pick_sum(&mut self, a: Var, at: &[(usize, usize)]) -> Result<Var> {
        let ta = self.value(a);
        let mut s = T::zero();
        for &(r, c) in at {
            if r >= ta.rows() || c >= ta.cols() {
                return Err(Error::shape("pick_sum", ta.shape(), &[r, c]));
            }
            s += ta.at(r, c);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), rg, Op::PickSum(a, at.to_vec())))
    }

    /// Row-wise layer normalisation with learned `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        for v in [gain, bias] {
            let t = self.value(v);
            if t.rows() != 1 || t.cols() != n {
                return Err(Error::shape("layer_norm", tx.shape(), t.shape()));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let nf = T::of(n as f64);
        let mut normalized = Tensor::zeros(tx.rows(), n);
        let mut out = Tensor::zeros(tx.rows(), n);
        let mut inv_std = Vec::with_capacity(tx.rows());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..n {
                let xh = (row[c] - mean) * inv;
                normalized.set(r, c, xh);
                out.set(r, c, xh * g[c] + b[c]);
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let scale = T::of(1.0 / keep);
        let t = self.value(a);
        let mask: Vec<T> = (0..t.len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let m = self.constant(Tensor::new(t.shape().to_vec(), mask)?);
        self.mul(a, m)
    }

    /// Records an op whose value the caller has already computed.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(value, rg, Op::Custom(inputs.to_vec(), op))
    }

    /// Back-propagates from a scalar. A tape supports exactly one backward
    /// pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.shape(loss).to_vec();
        if shape != [1, 1] {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.clone() else {
                continue;
            };
            let contribs = self.vjp(i, &g);
            for (v, t) in contribs {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match self.nodes[v.0].grad.as_mut() {
                    Some(acc) => acc.add_assign(&t),
                    None => self.nodes[v.0].grad = Some(t),
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |t: &Tensor<T>, data: Vec<T>| Tensor::new(t.shape().to_vec(), data).unwrap();
        match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose()).unwrap();
                let gb = val(*a).transpose().matmul(g).unwrap();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => {
                let neg = like(g, g.data().iter().map(|&x| -x).collect());
                vec![(*a, g.clone()), (*b, neg)]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = like(g, g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect());
                let gb = like(g, g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect());
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRow(a, r) => {
                let n = g.cols();
                let mut gr = vec![T::zero(); n];
                for row in g.data().chunks(n) {
                    for (o, &x) in gr.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                vec![(*a, g.clone()), (*r, Tensor::row_vector(gr))]
            }
            Op::Scale(a, c) => vec![(*a, like(g, g.data().iter().map(|&x| x * *c).collect()))],
            Op::Relu(a) => {
                let ta = val(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&gx, &x)| if x > T::zero() { gx } else { T::zero() })
                    .collect();
                vec![(*a, like(g, d))]
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gx, &yx)| gx * (T::one() - yx * yx))
                    .collect();
                vec![(*a, like(g, d))]
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gx, &yx)| gx * yx * (T::one() - yx))
                    .collect();
                vec![(*a, like(g, d))]
            }
            Op::SoftmaxRows(a) => {
                let n = y.cols().max(1);
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    d.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                vec![(*a, like(g, d))]
            }
            Op::LogSoftmaxRows(a) => {
                let n = y.cols().max(1);
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let gs: T = gr.iter().copied().sum();
                    d.extend(yr.iter().zip(gr).map(|(&ly, &q)| q - ly.exp() * gs));
                }
                vec![(*a, like(g, d))]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::ConcatCols(vars) => {
                let mut off = 0;
                vars.iter()
                    .map(|&v| {
                        let t = val(v);
                        let mut out = Tensor::zeros(t.rows(), t.cols());
                        for r in 0..t.rows() {
                            for c in 0..t.cols() {
                                out.set(r, c, g.at(r, off + c));
                            }
                        }
                        off += t.cols();
                        (v, out)
                    })
                    .collect()
            }
            Op::ConcatRows(vars) => {
                let mut off = 0;
                vars.iter()
                    .map(|&v| {
                        let t = val(v);
                        let n = t.len();
                        let out = like(t, g.data()[off..off + n].to_vec());
                        off += n;
                        (v, out)
                    })
                    .collect()
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let mut out = Tensor::zeros(ta.rows(), ta.cols());
                let n = ta.cols();
                for (k, &r) in idx.iter().enumerate() {
                    for c in 0..n {
                        let cur = out.at(r, c);
                        out.set(r, c, cur + g.at(k, c));
                    }
                }
                vec![(*a, out)]
            }
            Op::SliceCols(a, start) => {
                let ta = val(*a);
                let mut out = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        out.set(r, start + c, g.at(r, c));
                    }
                }
                vec![(*a, out)]
            }
            Op::Sum(a) => {
                let ta = val(*a);
                vec![(*a, Tensor::full(ta.rows(), ta.cols(), g.item()))]
            }
            Op::SumSquares(a) => {
                let ta = val(*a);
                let two = T::of(2.0) * g.item();
                vec![(*a, like(ta, ta.data().iter().map(|&x| two * x).collect()))]
            }
            Op::MeanRows(a) => {
                let ta = val(*a);
                let m = T::of(ta.rows() as f64);
                let mut out = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    for c in 0..ta.cols() {
                        out.set(r, c, g.at(0, c) / m);
                    }
                }
                vec![(*a, out)]
            }
            Op::PickSum(a, at) => {
                let ta = val(*a);
                let mut out = Tensor::zeros(ta.rows(), ta.cols());
                for &(r, c) in at {
                    let cur = out.at(r, c);
                    out.set(r, c, cur + g.item());
                }
                vec![(*a, out)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let n = normalized.cols();
                let nf = T::of(n as f64);
                let gv = val(*gain).data();
                let mut gx = Tensor::zeros(normalized.rows(), n);
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                for r in 0..normalized.rows() {
                    let xh = normalized.row(r);
                    let gr = g.row(r);
                    let dxh: Vec<T> = (0..n).map(|c| gr[c] * gv[c]).collect();
                    let s1: T = dxh.iter().copied().sum();
                    let s2: T = dxh.iter().zip(xh).map(|(&d, &h)| d * h).sum();
                    for c in 0..n {
                        gg[c] += gr[c] * xh[c];
                        gb[c] += gr[c];
                        gx.set(r, c, inv_std[r] / nf * (nf * dxh[c] - s1 - xh[c] * s2));
                    }
                }
                vec![
                    (*x, gx),
                    (*gain, Tensor::row_vector(gg)),
                    (*bias, Tensor::row_vector(gb)),
                ]
            }
            Op::Custom(inputs, op) => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let grads = op.backward(&vals, y, g);
                debug_assert_eq!(grads.len(), inputs.len(), "{} arity", op.name());
                inputs
                    .iter()
                    .zip(grads)
                    .filter_map(|(&v, g)| g.map(|g| (v, g)))
                    .collect()
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_rows<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let n = t.cols().max(1);
    let mut data = t.data().to_vec();
    for row in data.chunks_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}
