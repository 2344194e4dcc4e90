//! Recording graph with hand-derived backward passes for the closed set of
//! operations used by the backbone, adapters, pooling back-end and loss.

use std::collections::HashMap;

use super::ops::{self, Activation, LayerNormCache};
use super::params::ParamGroup;
use super::tensor::{matmul_acc, matmul_raw, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    LayerNorm { x: Var, gamma: Var, cache: LayerNormCache<T>, beta: Var },
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Transpose(Var),
    Reshape(Var),
    Im2Col { x: Var, kernel: usize, stride: usize },
    Mix { w: Var, xs: Vec<Var> },
    L2NormRows { x: Var, norms: Vec<T> },
    Sum(Var),
    Mean(Var),
    Attention { q: Var, k: Var, v: Var, scale: T, probs: Option<Tensor<T>> },
    Precomputed { x: Var, dx: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<String>,
}

/// Gradients of a scalar with respect to every trainable bound parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T = f32> {
    order: Vec<String>,
    by_name: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.order.iter().map(|n| (n.as_str(), &self.by_name[n]))
    }
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    bound: HashMap<String, Var>,
    overrides: HashMap<String, Tensor<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: HashMap::new(),
            overrides: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph that never tracks gradients; intermediate caches are skipped.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Substitutes the value bound for parameter `name`. Overridden parameters
    /// are always differentiated, regardless of their trainable flag.
    pub fn set_override(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.overrides.insert(name.into(), value);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && self.grad_enabled,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input (never differentiated).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter group once per graph; repeated binds return the same node.
    pub fn bind(&mut self, group: &ParamGroup) -> Var {
        if let Some(&v) = self.bound.get(&group.name) {
            return v;
        }
        let (value, trainable) = match self.overrides.get(&group.name) {
            Some(t) => (t.clone(), true),
            None => (group.tensor.cast::<T>(), group.trainable),
        };
        let v = self.push(value, Op::Leaf, trainable);
        self.nodes[v.0].param = Some(group.name.clone());
        self.bound.insert(group.name.clone(), v);
        v
    }

    /// Binds a parameter straight from an override value (no backing group).
    pub fn bind_override(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self
            .overrides
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Wiring(format!("no override for {name}")))?;
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.to_string());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, false)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, false, b, true)
    }

    pub fn matmul_ex(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = matmul_raw(self.value(a), ta, self.value(b), tb)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims2() != vb.dims2() {
            return Err(Error::Dimension {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (r, c) = va.dims2();
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::matrix(r, c, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        let mut value = self.value(x).clone().reshape(vec![r, c])?;
        ops::add_row_inplace(&mut value, self.value(bias))?;
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(value, Op::AddRow(x, bias), ng))
    }

    /// `x W + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let value = self.value(x).map(|v| act.apply(v));
        let ng = self.ng(x);
        self.push(value, Op::Act(x, act), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (value, cache) = ops::layer_norm_cached(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            ops::LAYER_NORM_EPS,
        )?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let cache = if ng && self.grad_enabled {
            cache
        } else {
            LayerNormCache {
                xhat: Tensor::zeros(&[0]),
                rstd: Vec::new(),
            }
        };
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, cache }, ng))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_rows(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Softmax(x), ng))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let cols = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            if v.numel() == 0 {
                continue;
            }
            if v.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.value(xs[0]).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(value, Op::ConcatRows(xs.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&x| self.value(x).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let v = self.value(x);
            if v.rows() != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.value(xs[0]).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(v.row(r));
            }
            off += w;
        }
        let value = Tensor::matrix(rows, total, data)?;
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(value, Op::ConcatCols(xs.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = v.dims2();
        if start + len > cols {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: v.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(rows, len, data)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::SliceCols { x, start }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let ng = self.ng(x);
        self.push(value, Op::Transpose(x), ng)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(x).clone().reshape(vec![rows, cols])?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Sliding windows for a strided 1-D convolution over the row (time) axis.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let value = ops::im2col(self.value(x), kernel, stride)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Im2Col { x, kernel, stride }, ng))
    }

    /// `sum_i w[i] * xs[i]` for a weight row vector `w`.
    pub fn mix(&mut self, w: Var, xs: &[Var]) -> Result<Var> {
        let wv = self.value(w).data().to_vec();
        if wv.len() != xs.len() || xs.is_empty() {
            return Err(Error::Dimension {
                op: "mix",
                lhs: vec![wv.len()],
                rhs: vec![xs.len()],
            });
        }
        let (r, c) = self.value(xs[0]).dims2();
        let mut data = vec![T::zero(); r * c];
        for (&x, &wi) in xs.iter().zip(&wv) {
            let v = self.value(x);
            if v.dims2() != (r, c) {
                return Err(Error::Dimension {
                    op: "mix",
                    lhs: vec![r, c],
                    rhs: v.shape().to_vec(),
                });
            }
            for (o, &e) in data.iter_mut().zip(v.data()) {
                *o = *o + wi * e;
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        let ng = self.ng(w) || xs.iter().any(|&x| self.ng(x));
        Ok(self.push(value, Op::Mix { w, xs: xs.to_vec() }, ng))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = v.dims2();
        let mut norms = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = v.row(r);
            let n = row.iter().map(|&e| e * e).sum::<T>().sqrt();
            if n <= T::zero() || !n.is_finite() {
                return Err(Error::Numeric {
                    op: "l2_normalize_rows",
                    detail: format!("row {r} has norm {n:?}"),
                });
            }
            norms.push(n);
            data.extend(row.iter().map(|&e| e / n));
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::L2NormRows { x, norms }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::vector(vec![self.value(x).sum()]);
        let ng = self.ng(x);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::vector(vec![v.sum() / T::from_f64(v.numel() as f64)]);
        let ng = self.ng(x);
        self.push(value, Op::Mean(x), ng)
    }

    /// `softmax(q k^T * scale) v` for one head.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Result<Var> {
        let scale = T::from_f64(scale);
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let (out, probs) = attention_kernel(self.value(q), self.value(k), self.value(v), scale)?;
        let probs = ng.then_some(probs);
        Ok(self.push(out, Op::Attention { q, k, v, scale, probs }, ng))
    }

    /// Scalar node whose gradient with respect to `x` was computed alongside
    /// its value (used by fused losses).
    pub(crate) fn precomputed(&mut self, x: Var, value: T, dx: Tensor<T>) -> Var {
        let ng = self.ng(x);
        self.push(Tensor::vector(vec![value]), Op::Precomputed { x, dx }, ng)
    }

    /// Reverse sweep from a scalar node. Only trainable (or overridden)
    /// parameters appear in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Some(name), true) = (&node.param, node.needs_grad) {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                let g = g.reshape(node.value.shape().to_vec())?;
                out.order.push(name.clone());
                out.by_name.insert(name.clone(), g);
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    // dA = g * op(B)^T, transposed back if A was used transposed.
                    let mut da = Tensor::zeros(&[va.rows(), va.cols()]);
                    if *ta {
                        matmul_acc(vb, *tb, g, true, &mut da);
                    } else {
                        matmul_acc(g, false, vb, !*tb, &mut da);
                    }
                    accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(&[vb.rows(), vb.cols()]);
                    if *tb {
                        matmul_acc(g, true, va, *ta, &mut db);
                    } else {
                        matmul_acc(va, !*ta, g, false, &mut db);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                for x in [a, b] {
                    if self.ng(*x) {
                        accumulate(grads, *x, g.clone());
                    }
                }
            }
            Op::AddRow(x, bias) => {
                if self.ng(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.ng(*bias) {
                    accumulate(grads, *bias, column_sums(g));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Act(x, act) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gi, &xi)| gi * act.derivative(xi))
                    .collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let (rows, d) = g.dims2();
                let gam = self.value(*gamma).data();
                if self.ng(*gamma) {
                    let mut dg = vec![T::zero(); d];
                    for (i, (&gi, &hi)) in g.data().iter().zip(cache.xhat.data()).enumerate() {
                        dg[i % d] = dg[i % d] + gi * hi;
                    }
                    accumulate(grads, *gamma, Tensor::vector(dg));
                }
                if self.ng(*beta) {
                    accumulate(grads, *beta, column_sums(g));
                }
                if self.ng(*x) {
                    let n = T::from_f64(d as f64);
                    let mut dx = vec![T::zero(); rows * d];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = cache.xhat.row(r);
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for c in 0..d {
                            let dh = gr[c] * gam[c];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[c];
                        }
                        mean_dh = mean_dh / n;
                        mean_dh_h = mean_dh_h / n;
                        for c in 0..d {
                            let dh = gr[c] * gam[c];
                            dx[r * d + c] = cache.rstd[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                    accumulate(grads, *x, Tensor::matrix(rows, d, dx)?);
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                accumulate(grads, *x, softmax_backward(y, g)?);
            }
            Op::ConcatRows(xs) => {
                let cols = g.cols();
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    if n == 0 {
                        continue;
                    }
                    if self.ng(x) {
                        let part = g.data()[off..off + n].to_vec();
                        accumulate(grads, x, Tensor::matrix(n / cols, cols, part)?);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(xs) => {
                let (rows, total) = g.dims2();
                let mut off = 0;
                for &x in xs {
                    let w = self.value(x).cols();
                    if self.ng(x) {
                        let mut part = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            part.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        accumulate(grads, x, Tensor::matrix(rows, w, part)?);
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.value(*x).dims2();
                let w = g.cols();
                let mut dx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, Tensor::matrix(rows, cols, dx)?);
            }
            Op::Transpose(x) => accumulate(grads, *x, g.transpose()),
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.clone().reshape(shape)?);
            }
            Op::Im2Col { x, kernel, stride } => {
                let (t_in, ch) = self.value(*x).dims2();
                let width = kernel * ch;
                let mut dx = vec![T::zero(); t_in * ch];
                for (t, row) in g.data().chunks(width).enumerate() {
                    let start = t * stride * ch;
                    for (d, &v) in dx[start..start + width].iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                accumulate(grads, *x, Tensor::matrix(t_in, ch, dx)?);
            }
            Op::Mix { w, xs } => {
                let wv = self.value(*w).data();
                if self.ng(*w) {
                    let dw = xs
                        .iter()
                        .map(|&x| {
                            self.value(x)
                                .data()
                                .iter()
                                .zip(g.data())
                                .map(|(&a, &b)| a * b)
                                .sum::<T>()
                        })
                        .collect();
                    let shape = self.value(*w).shape().to_vec();
                    accumulate(grads, *w, Tensor::new(shape, dw)?);
                }
                for (&x, &wi) in xs.iter().zip(wv) {
                    if self.ng(x) {
                        accumulate(grads, x, g.map(|v| v * wi));
                    }
                }
            }
            Op::L2NormRows { x, norms } => {
                let y = &node.value;
                let (rows, cols) = y.dims2();
                let mut dx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    for c in 0..cols {
                        dx[r * cols + c] = (gr[c] - yr[c] * dot) / norms[r];
                    }
                }
                accumulate(grads, *x, Tensor::matrix(rows, cols, dx)?);
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                accumulate(grads, *x, Tensor::full(self.value(*x).shape(), s));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.data()[0] / T::from_f64(xv.numel() as f64);
                accumulate(grads, *x, Tensor::full(xv.shape(), s));
            }
            Op::Attention { q, k, v, scale, probs } => {
                let p = probs
                    .as_ref()
                    .ok_or_else(|| Error::Contract("attention probabilities were not kept".into()))?;
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                if self.ng(*v) {
                    let mut dv = Tensor::zeros(&[vv.rows(), vv.cols()]);
                    matmul_acc(p, true, g, false, &mut dv);
                    accumulate(grads, *v, dv);
                }
                if self.ng(*q) || self.ng(*k) {
                    let dp = matmul_raw(g, false, vv, true)?;
                    let ds = softmax_backward(p, &dp)?.map(|e| e * *scale);
                    if self.ng(*q) {
                        let mut dq = Tensor::zeros(&[qv.rows(), qv.cols()]);
                        matmul_acc(&ds, false, kv, false, &mut dq);
                        accumulate(grads, *q, dq);
                    }
                    if self.ng(*k) {
                        let mut dk = Tensor::zeros(&[kv.rows(), kv.cols()]);
                        matmul_acc(&ds, true, qv, false, &mut dk);
                        accumulate(grads, *k, dk);
                    }
                }
            }
            Op::Precomputed { x, dx } => {
                let s = g.data()[0];
                accumulate(grads, *x, dx.map(|v| v * s));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], x: Var, delta: Tensor<T>) {
    match &mut grads[x.0] {
        Some(existing) => {
            for (e, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e = *e + d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); cols];
    for row in g.data().chunks(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    Tensor::vector(out)
}

fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = y.dims2();
    let mut dx = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let (yr, gr) = (y.row(r), &g.data()[r * cols..(r + 1) * cols]);
        let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
        for c in 0..cols {
            dx[r * cols + c] = yr[c] * (gr[c] - dot);
        }
    }
    Tensor::matrix(rows, cols, dx)
}

/// Scaled dot-product attention for one head; returns output and the
/// attention probabilities.
pub(crate) fn attention_kernel<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    scale: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if q.cols() != k.cols() || k.rows() != v.rows() {
        return Err(Error::Dimension {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let mut scores = matmul_raw(q, false, k, true)?;
    let cols = scores.cols().max(1);
    for row in scores.data_mut().chunks_mut(cols) {
        for e in row.iter_mut() {
            *e = *e * scale;
        }
        ops::softmax_in_place(row);
    }
    let out = matmul_raw(&scores, false, v, false)?;
    Ok((out, scores))
}
