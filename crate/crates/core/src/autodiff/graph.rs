use std::borrow::Cow;

use super::tensor::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MulConst(Var, Tensor),
    SliceLast(Var, usize),
    ConcatLast(Vec<Var>),
    TimeStep(Var, usize),
    StackTime(Vec<Var>),
    Reshape(Var),
    Unfold(Var, usize),
    BatchMatMul(Var, Var, bool),
    SoftmaxLast(Var),
    Gather(Var, Vec<usize>),
    RepeatTime(Var, usize),
    Mse(Var, Tensor),
    DotConst(Var, Tensor),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations recorded in evaluation order.
///
/// Parameters are borrowed from a [`ParamStore`]; each is materialized as a
/// node at most once per graph.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of a scalar with respect to parameters and variable leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients indexed by [`ParamId`]; `None` for parameters
    /// that did not take part in the computation.
    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn with_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank >= 1") = last;
    s
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store;
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Leaf, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Input leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// `x @ w` over the last axis of `x`; `w` is `[K, N]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 2 || xv.last_dim() != wv.shape()[0] {
            return Err(Error::shape(format!("matmul {:?} x {:?}", xv.shape(), wv.shape())));
        }
        let (rows, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut out = vec![0.0; rows * n];
        gemm(rows, k, n, xv.data(), (k, 1), wv.data(), (n, 1), &mut out, false);
        let t = Tensor::new(with_last(xv.shape(), n), out)?;
        Ok(self.derived(t, Op::MatMul(x, w), &[x, w]))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rank() != 1 || bv.len() != xv.last_dim() {
            return Err(Error::shape(format!("bias {:?} for {:?}", bv.shape(), xv.shape())));
        }
        let n = bv.len();
        let mut t = xv.clone();
        for (k, v) in t.data_mut().iter_mut().enumerate() {
            *v += bv.data()[k % n];
        }
        Ok(self.derived(t, Op::AddBias(x, b), &[x, b]))
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!("{what} {:?} and {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.derived(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        self.derived(t, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Elementwise product with a constant tensor (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != c.shape() {
            return Err(Error::shape(format!("mask {:?} for {:?}", c.shape(), xv.shape())));
        }
        let data = xv.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.derived(t, Op::MulConst(x, c), &[x]))
    }

    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if start + len > c || len == 0 {
            return Err(Error::shape(format!("slice {start}..{} of width {c}", start + len)));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for row in xv.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor::new(with_last(xv.shape(), len), data)?;
        Ok(self.derived(t, Op::SliceLast(x, start), &[x]))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!("concat {:?} with leading {lead:?}", s)));
            }
            widths.push(*s.last().expect("rank >= 1"));
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(shape, data)?;
        Ok(self.derived(t, Op::ConcatLast(parts.to_vec()), parts))
    }

    /// `[B, T, C] -> [B, C]` at time `t`.
    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 || t >= xv.shape()[1] {
            return Err(Error::shape(format!("time step {t} of {:?}", xv.shape())));
        }
        let (b, tt, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut data = Vec::with_capacity(b * c);
        for bi in 0..b {
            let off = (bi * tt + t) * c;
            data.extend_from_slice(&xv.data()[off..off + c]);
        }
        let out = Tensor::new(vec![b, c], data)?;
        Ok(self.derived(out, Op::TimeStep(x, t), &[x]))
    }

    /// Stacks `[B, C]` steps into `[B, T, C]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = steps.first().ok_or_else(|| Error::shape("stack of nothing"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 || steps.iter().any(|s| self.shape(*s) != s0.as_slice()) {
            return Err(Error::shape("stack_time needs equal [B, C] steps"));
        }
        let (b, c, tt) = (s0[0], s0[1], steps.len());
        let mut data = vec![0.0; b * tt * c];
        for (t, s) in steps.iter().enumerate() {
            let v = self.value(*s).data();
            for bi in 0..b {
                data[(bi * tt + t) * c..(bi * tt + t + 1) * c].copy_from_slice(&v[bi * c..(bi + 1) * c]);
            }
        }
        let out = Tensor::new(vec![b, tt, c], data)?;
        Ok(self.derived(out, Op::StackTime(steps.to_vec()), steps))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.derived(t, Op::Reshape(x), &[x]))
    }

    /// Sliding windows of `k` steps: `[B, T, C] -> [B, T-k+1, k*C]`, element
    /// `(b, t, j*C + c)` taken from `(b, t + j, c)`.
    pub fn unfold(&mut self, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 || k == 0 || xv.shape()[1] < k {
            return Err(Error::shape(format!("unfold k={k} of {:?}", xv.shape())));
        }
        let (b, tt, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let to = tt - k + 1;
        let mut data = Vec::with_capacity(b * to * k * c);
        for bi in 0..b {
            for t in 0..to {
                let off = (bi * tt + t) * c;
                data.extend_from_slice(&xv.data()[off..off + k * c]);
            }
        }
        let out = Tensor::new(vec![b, to, k * c], data)?;
        Ok(self.derived(out, Op::Unfold(x, k), &[x]))
    }

    /// Per-batch `a @ b` (or `a @ b^T` when `transpose_b`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bad = || Error::shape(format!("batch_matmul {:?} x {:?}", av.shape(), bv.shape()));
        if av.rank() != 3 || bv.rank() != 3 || av.shape()[0] != bv.shape()[0] {
            return Err(bad());
        }
        let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (kb, n) = if transpose_b { (bv.shape()[2], bv.shape()[1]) } else { (bv.shape()[1], bv.shape()[2]) };
        if kb != k {
            return Err(bad());
        }
        let b_strides = if transpose_b { (1, k) } else { (n, 1) };
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                (k, 1),
                &bv.data()[i * k * n..(i + 1) * k * n],
                b_strides,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let t = Tensor::new(vec![bs, m, n], out)?;
        Ok(self.derived(t, Op::BatchMatMul(a, b, transpose_b), &[a, b]))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let c = t.last_dim();
        for row in t.data_mut().chunks_mut(c) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        self.derived(t, Op::SoftmaxLast(x), &[x])
    }

    /// Rows of a `[S, d]` table: `[len(idx), d]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::shape("gather needs a rank-2 table"));
        }
        let (s, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= s {
                return Err(Error::shape(format!("row {i} of a {s}-row table")));
            }
            data.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![idx.len(), d], data)?;
        Ok(self.derived(t, Op::Gather(table, idx.to_vec()), &[table]))
    }

    /// `[B, d] -> [B, T, d]`.
    pub fn repeat_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || t == 0 {
            return Err(Error::shape(format!("repeat_time of {:?}", xv.shape())));
        }
        let (b, d) = (xv.shape()[0], xv.shape()[1]);
        let mut data = Vec::with_capacity(b * t * d);
        for bi in 0..b {
            for _ in 0..t {
                data.extend_from_slice(&xv.data()[bi * d..(bi + 1) * d]);
            }
        }
        let out = Tensor::new(vec![b, t, d], data)?;
        Ok(self.derived(out, Op::RepeatTime(x, t), &[x]))
    }

    /// Mean squared error against a constant target of equal length.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.is_empty() {
            return Err(Error::shape(format!("mse of {} predictions and {} targets", pv.len(), target.len())));
        }
        let s = pv.data().iter().zip(target.data()).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
        let t = Tensor::scalar(s / target.len() as f64);
        Ok(self.derived(t, Op::Mse(pred, target), &[pred]))
    }

    /// `sum(x * c)` for a constant `c`.
    pub fn dot_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != c.len() {
            return Err(Error::shape("dot_const length mismatch"));
        }
        let s = xv.data().iter().zip(c.data()).map(|(a, b)| a * b).sum::<f64>();
        Ok(self.derived(Tensor::scalar(s), Op::DotConst(x, c), &[x]))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves: Vec<Option<Tensor>> = vec![None; n];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaves[i] = Some(Tensor::new(self.nodes[i].value.shape().to_vec(), g)?);
            }
        }
        let params = self.param_vars.iter().map(|v| v.and_then(|v| leaves[v.0].clone())).collect();
        Ok(Gradients { leaves, params })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                if let Some(dx) = self.slot(grads, *x) {
                    gemm(rows, n, k, g, (n, 1), wv.data(), (1, n), dx, true);
                }
                if let Some(dw) = self.slot(grads, *w) {
                    gemm(k, rows, n, xv.data(), (1, k), g, (n, 1), dw, true);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    let n = db.len();
                    for (k, gv) in g.iter().enumerate() {
                        db[k % n] += gv;
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for k in 0..g.len() {
                        da[k] += g[k] * bv[k];
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for k in 0..g.len() {
                        db[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, g), y) in dx.iter_mut().zip(g).zip(out.data()) {
                        *d += g * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, g), y) in dx.iter_mut().zip(g).zip(out.data()) {
                        *d += g * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, g), y) in dx.iter_mut().zip(g).zip(out.data()) {
                        if *y > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::MulConst(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, g), c) in dx.iter_mut().zip(g).zip(c.data()) {
                        *d += g * c;
                    }
                }
            }
            Op::SliceLast(x, start) => {
                let c = self.value(*x).last_dim();
                let len = out.last_dim();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, gr) in g.chunks(len).enumerate() {
                        let dst = &mut dx[r * c + start..r * c + start + len];
                        dst.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::ConcatLast(parts) => {
                let total = out.last_dim();
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).last_dim();
                    if let Some(dp) = self.slot(grads, *p) {
                        for (r, gr) in g.chunks(total).enumerate() {
                            let dst = &mut dp[r * w..(r + 1) * w];
                            dst.iter_mut().zip(&gr[off..off + w]).for_each(|(d, g)| *d += g);
                        }
                    }
                    off += w;
                }
            }
            Op::TimeStep(x, t) => {
                let s = self.shape(*x);
                let (b, tt, c) = (s[0], s[1], s[2]);
                if let Some(dx) = self.slot(grads, *x) {
                    for bi in 0..b {
                        let off = (bi * tt + t) * c;
                        dx[off..off + c].iter_mut().zip(&g[bi * c..(bi + 1) * c]).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::StackTime(steps) => {
                let (b, tt, c) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                for (t, s) in steps.iter().enumerate() {
                    if let Some(ds) = self.slot(grads, *s) {
                        for bi in 0..b {
                            let off = (bi * tt + t) * c;
                            ds[bi * c..(bi + 1) * c].iter_mut().zip(&g[off..off + c]).for_each(|(d, g)| *d += g);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Unfold(x, k) => {
                let s = self.shape(*x);
                let (b, tt, c) = (s[0], s[1], s[2]);
                let to = tt - k + 1;
                if let Some(dx) = self.slot(grads, *x) {
                    for bi in 0..b {
                        for t in 0..to {
                            let src = &g[(bi * to + t) * k * c..(bi * to + t + 1) * k * c];
                            let off = (bi * tt + t) * c;
                            dx[off..off + k * c].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    }
                }
            }
            Op::BatchMatMul(a, b, tb) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                        // da = g b^T, or g b when b was transposed.
                        let strides = if *tb { (k, 1) } else { (1, n) };
                        gemm(m, n, k, gi, (n, 1), bi, strides, &mut da[i * m * k..(i + 1) * m * k], true);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if *tb {
                            // db = g^T a : [n, k]
                            gemm(n, m, k, gi, (1, n), ai, (k, 1), dbi, true);
                        } else {
                            // db = a^T g : [k, n]
                            gemm(k, m, n, ai, (1, k), gi, (n, 1), dbi, true);
                        }
                    }
                }
            }
            Op::SoftmaxLast(x) => {
                let c = out.last_dim();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((dr, gr), yr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for k in 0..c {
                            dr[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
            }
            Op::Gather(table, idx) => {
                let d = out.last_dim();
                if let Some(dt) = self.slot(grads, *table) {
                    for (r, &row) in idx.iter().enumerate() {
                        dt[row * d..(row + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, g)| *a += g);
                    }
                }
            }
            Op::RepeatTime(x, t) => {
                let d = out.last_dim();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, gr) in g.chunks(d).enumerate() {
                        let bi = r / t;
                        dx[bi * d..(bi + 1) * d].iter_mut().zip(gr).for_each(|(a, g)| *a += g);
                    }
                }
            }
            Op::Mse(p, target) => {
                let pv = self.value(*p).data();
                let scale = 2.0 * g[0] / target.len() as f64;
                if let Some(dp) = self.slot(grads, *p) {
                    for ((d, p), y) in dp.iter_mut().zip(pv).zip(target.data()) {
                        *d += scale * (p - y);
                    }
                }
            }
            Op::DotConst(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(c.data()).for_each(|(d, c)| *d += g[0] * c);
                }
            }
        }
        Ok(())
    }
}
