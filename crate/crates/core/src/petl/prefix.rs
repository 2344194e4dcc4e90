//! Prefix tuning: `l` learnable rows prepended to every head's keys and
//! values. Each block stores `P_K` and `P_V` as `l x d_hidden`; head `h`
//! owns columns `h*d_proj .. (h+1)*d_proj`, i.e. its own `l x d_proj` tile.

use crate::error::{Error, Result};
use crate::numcore::graph::attention_kernel;
use crate::numcore::{Graph, Init, ParamSpec, ParamStore, Scalar, Tensor, Var};

pub const PREFIX_INIT_STD: f64 = 0.02;

pub fn names(block: usize) -> (String, String) {
    (
        format!("petl.block{block}.prefix.P_K"),
        format!("petl.block{block}.prefix.P_V"),
    )
}

pub fn layout(block: usize, prefix_len: usize, d_hidden: usize) -> Vec<ParamSpec> {
    let (k, v) = names(block);
    vec![
        ParamSpec::new(k, &[prefix_len, d_hidden], Init::Normal(PREFIX_INIT_STD)),
        ParamSpec::new(v, &[prefix_len, d_hidden], Init::Normal(PREFIX_INIT_STD)),
    ]
}

pub(crate) fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParamStore, block: usize) -> Result<(Var, Var)> {
    let (k, v) = names(block);
    let pk = g.bind(params.get(&k)?);
    let pv = g.bind(params.get(&v)?);
    Ok((pk, pv))
}

/// Prefix parameters of one block, split per head.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixParams {
    pub p_k: Vec<Tensor<f32>>,
    pub p_v: Vec<Tensor<f32>>,
}

impl PrefixParams {
    pub fn prefix_len(&self) -> usize {
        self.p_k.first().map_or(0, |t| t.shape()[0])
    }

    /// Per-head tiles of a block's stored `l x d_hidden` prefix matrices.
    pub fn from_block(params: &ParamStore, block: usize, n_heads: usize) -> Result<Self> {
        let (k, v) = names(block);
        let split = |t: &Tensor<f32>| -> Result<Vec<Tensor<f32>>> {
            let (l, d) = (t.shape()[0], t.shape()[1]);
            let dp = d / n_heads;
            (0..n_heads)
                .map(|h| {
                    let mut data = Vec::with_capacity(l * dp);
                    for r in 0..l {
                        data.extend_from_slice(&t.data()[r * d + h * dp..r * d + (h + 1) * dp]);
                    }
                    Tensor::new(vec![l, dp], data)
                })
                .collect()
        };
        Ok(PrefixParams {
            p_k: split(&params.get(&k)?.tensor)?,
            p_v: split(&params.get(&v)?.tensor)?,
        })
    }
}

fn stack_rows<T: Scalar>(top: &Tensor<T>, bottom: &Tensor<T>) -> Result<Tensor<T>> {
    if top.numel() == 0 {
        return Ok(bottom.clone());
    }
    if top.cols() != bottom.cols() {
        return Err(Error::Dimension {
            op: "prefix concat",
            lhs: top.shape().to_vec(),
            rhs: bottom.shape().to_vec(),
        });
    }
    let mut data = top.data().to_vec();
    data.extend_from_slice(bottom.data());
    Tensor::matrix(top.rows() + bottom.rows(), bottom.cols(), data)
}

/// `softmax(Q [P_K; K]^T / sqrt(d_proj)) [P_V; V]` for one head. The output
/// keeps the query length `T`.
pub fn prefix_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    p_k: &Tensor<T>,
    p_v: &Tensor<T>,
) -> Result<Tensor<T>> {
    if p_k.rows() != p_v.rows() && (p_k.numel() > 0 || p_v.numel() > 0) {
        return Err(Error::Dimension {
            op: "prefix_attention",
            lhs: p_k.shape().to_vec(),
            rhs: p_v.shape().to_vec(),
        });
    }
    let kp = stack_rows(p_k, k)?;
    let vp = stack_rows(p_v, v)?;
    let scale = T::from_f64(1.0 / (q.cols() as f64).sqrt());
    attention_kernel(q, &kp, &vp, scale).map(|(out, _)| out)
}
