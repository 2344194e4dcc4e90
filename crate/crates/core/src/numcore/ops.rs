//! Forward kernels shared by the plain API and the recording graph.

use serde::{Deserialize, Serialize};

use super::tensor::{matmul_raw, Scalar, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Nonlinearity used inside adapters and the feed-forward sublayer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => gelu_scalar(x),
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => gelu_grad_scalar(x),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// `x W (+ b)` with `b` broadcast over rows.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if w.shape().len() != 2 || x.cols() != w.rows() {
        return Err(Error::Dimension {
            op: "linear",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let mut y = matmul_raw(x, false, w, false)?;
    if let Some(b) = b {
        add_row_inplace(&mut y, b)?;
    }
    Ok(y)
}

pub(crate) fn add_row_inplace<T: Scalar>(y: &mut Tensor<T>, b: &Tensor<T>) -> Result<()> {
    let cols = y.cols();
    if b.numel() != cols {
        return Err(Error::Dimension {
            op: "bias",
            lhs: y.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let bd = b.data().to_vec();
    for row in y.data_mut().chunks_mut(cols) {
        for (v, &bv) in row.iter_mut().zip(&bd) {
            *v = *v + bv;
        }
    }
    Ok(())
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric {
            op: "softmax_rows",
            detail: "NaN in input".into(),
        });
    }
    let (rows, cols) = x.dims2();
    let mut out = x.clone().reshape(vec![rows, cols])?;
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let mut lanes = [row[0]; 8];
    let mut chunks = row.chunks_exact(8);
    for c in &mut chunks {
        for (m, &v) in lanes.iter_mut().zip(c) {
            *m = if v > *m { v } else { *m };
        }
    }
    let max = chunks.remainder().iter().chain(&lanes).fold(row[0], |m, &v| if v > m { v } else { m });
    for v in row.iter_mut() {
        *v = *v - max;
    }
    T::exp_in_place(row);
    let mut acc = [T::zero(); 8];
    let mut chunks = row.chunks_exact(8);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a = *a + v;
        }
    }
    let total = chunks.remainder().iter().chain(&acc).fold(T::zero(), |a, &v| a + v);
    let inv = T::one() / total;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Normalized values and inverse standard deviations kept for the backward pass.
pub(crate) struct LayerNormCache<T> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_cached<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (rows, d) = x.dims2();
    if d == 0 || gamma.numel() != d || beta.numel() != d {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let eps = T::from_f64(eps);
    let n = T::from_f64(d as f64);
    let mut xhat = vec![T::zero(); rows * d];
    let mut y = vec![T::zero(); rows * d];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + eps).sqrt();
        rstd.push(inv);
        for c in 0..d {
            let h = (row[c] - mean) * inv;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gamma.data()[c] + beta.data()[c];
        }
    }
    Ok((
        Tensor::matrix(rows, d, y)?,
        LayerNormCache {
            xhat: Tensor::matrix(rows, d, xhat)?,
            rstd,
        },
    ))
}

/// Per-row layer normalization: zero mean, unit variance (population), then affine.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    layer_norm_cached(x, gamma, beta, eps).map(|(y, _)| y)
}

/// Exact-erf GELU, elementwise.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Stacks `kernel`-long windows of `x` (rows are time steps) with the given
/// stride into rows of length `kernel * channels`.
pub(crate) fn im2col<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let (t_in, ch) = x.dims2();
    if kernel == 0 || stride == 0 || t_in < kernel {
        return Err(Error::Input(format!(
            "conv input of {t_in} steps is shorter than kernel {kernel}"
        )));
    }
    let t_out = (t_in - kernel) / stride + 1;
    let width = kernel * ch;
    let mut out = Vec::with_capacity(t_out * width);
    for t in 0..t_out {
        let start = t * stride * ch;
        out.extend_from_slice(&x.data()[start..start + width]);
    }
    Tensor::matrix(t_out, width, out)
}
