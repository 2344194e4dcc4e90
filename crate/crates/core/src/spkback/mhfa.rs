//! Multi-head factorized attentive pooling. Keys and values are separate
//! softmax-weighted mixtures of all layer outputs, compressed to `d_cmp`;
//! each head attends over frames with its own query vector and the pooled
//! heads are concatenated and projected to the embedding.

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::numcore::{Graph, Init, ParamGroup, ParamSpec, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhfaConfig {
    /// Compressed key/value width.
    pub d_cmp: usize,
    /// Number of pooling heads.
    pub n_heads: usize,
    pub d_emb: usize,
}

impl MhfaConfig {
    pub fn base() -> Self {
        MhfaConfig {
            d_cmp: 128,
            n_heads: 64,
            d_emb: 256,
        }
    }

    pub fn desk() -> Self {
        MhfaConfig {
            d_cmp: 16,
            n_heads: 4,
            d_emb: 32,
        }
    }

    /// Base constants for wide backbones, desk constants below width 256.
    pub fn for_backbone(backbone: &BackboneConfig) -> Self {
        if backbone.d_hidden < 256 {
            Self::desk()
        } else {
            Self::base()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_cmp == 0 || self.n_heads == 0 || self.d_emb == 0 {
            return Err(Error::Config("MHFA dimensions must be positive".into()));
        }
        Ok(())
    }
}

pub const A_K: &str = "backend.mhfa.a_k";
pub const A_V: &str = "backend.mhfa.a_v";
pub const W_K: &str = "backend.mhfa.W_k";
pub const W_V: &str = "backend.mhfa.W_v";
pub const U: &str = "backend.mhfa.U";
pub const W_O: &str = "backend.W_o";
pub const B_O: &str = "backend.b_o";

pub fn layout(cfg: &MhfaConfig, backbone: &BackboneConfig) -> Vec<ParamSpec> {
    let n_layers = backbone.n_layers + 1;
    let d = backbone.d_hidden;
    let flat = cfg.n_heads * cfg.d_cmp;
    vec![
        ParamSpec::new(A_K, &[n_layers], Init::Zeros),
        ParamSpec::new(A_V, &[n_layers], Init::Zeros),
        ParamSpec::new(W_K, &[d, cfg.d_cmp], Init::Normal(1.0 / (d as f64).sqrt())),
        ParamSpec::new(W_V, &[d, cfg.d_cmp], Init::Normal(1.0 / (d as f64).sqrt())),
        ParamSpec::new(U, &[cfg.n_heads, cfg.d_cmp], Init::Normal(1.0 / (cfg.d_cmp as f64).sqrt())),
        ParamSpec::new(W_O, &[flat, cfg.d_emb], Init::Normal(1.0 / (flat as f64).sqrt())),
        ParamSpec::new(B_O, &[cfg.d_emb], Init::Zeros),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhfaParams {
    pub a_k: Tensor<f32>,
    pub a_v: Tensor<f32>,
    pub w_k: Tensor<f32>,
    pub w_v: Tensor<f32>,
    pub u: Tensor<f32>,
    pub w_o: Tensor<f32>,
    pub b_o: Tensor<f32>,
}

impl MhfaParams {
    pub fn init(cfg: &MhfaConfig, backbone: &BackboneConfig, seed: u64) -> Self {
        let store = ParamStore::from_groups(layout(cfg, backbone).iter().map(|s| s.materialize(seed, true)).collect())
            .expect("layout names are unique");
        Self::from_store(&store).expect("layout is complete")
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let t = |n: &str| store.get(n).map(|g| g.tensor.clone());
        Ok(MhfaParams {
            a_k: t(A_K)?,
            a_v: t(A_V)?,
            w_k: t(W_K)?,
            w_v: t(W_V)?,
            u: t(U)?,
            w_o: t(W_O)?,
            b_o: t(B_O)?,
        })
    }

    pub fn to_groups(&self, trainable: bool) -> Vec<ParamGroup> {
        [
            (A_K, &self.a_k),
            (A_V, &self.a_v),
            (W_K, &self.w_k),
            (W_V, &self.w_v),
            (U, &self.u),
            (W_O, &self.w_o),
            (B_O, &self.b_o),
        ]
        .into_iter()
        .map(|(n, t)| ParamGroup::new(n, t.clone(), trainable))
        .collect()
    }

    pub fn count(&self) -> usize {
        [&self.a_k, &self.a_v, &self.w_k, &self.w_v, &self.u, &self.w_o, &self.b_o]
            .iter()
            .map(|t| t.numel())
            .sum()
    }
}

/// Parameter nodes of the pooling back-end, already bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct MhfaVars {
    pub a_k: Var,
    pub a_v: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub u: Var,
    pub w_o: Var,
    pub b_o: Var,
}

impl MhfaVars {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, store: &ParamStore) -> Result<Self> {
        Ok(MhfaVars {
            a_k: g.bind(store.get(A_K)?),
            a_v: g.bind(store.get(A_V)?),
            w_k: g.bind(store.get(W_K)?),
            w_v: g.bind(store.get(W_V)?),
            u: g.bind(store.get(U)?),
            w_o: g.bind(store.get(W_O)?),
            b_o: g.bind(store.get(B_O)?),
        })
    }

    pub fn constants<T: Scalar>(g: &mut Graph<T>, p: &MhfaParams) -> Self {
        let mut c = |t: &Tensor<f32>| g.constant(t.cast());
        MhfaVars {
            a_k: c(&p.a_k),
            a_v: c(&p.a_v),
            w_k: c(&p.w_k),
            w_v: c(&p.w_v),
            u: c(&p.u),
            w_o: c(&p.w_o),
            b_o: c(&p.b_o),
        }
    }
}

/// Records the pooling of `layers` (each `T x d_hidden`) into a `1 x d_emb` embedding.
pub fn mhfa_graph<T: Scalar>(g: &mut Graph<T>, p: MhfaVars, layers: &[Var]) -> Result<Var> {
    let n = g.value(p.a_k).numel();
    if layers.len() != n || g.value(p.a_v).numel() != n {
        return Err(Error::Wiring(format!(
            "MHFA layer weights cover {n} layers, got {} layer outputs",
            layers.len()
        )));
    }
    let frames = g.value(layers[0]).rows();
    if frames == 0 {
        return Err(Error::Input("MHFA pooling needs at least one frame".into()));
    }
    let wk = g.softmax_rows(p.a_k)?;
    let wv = g.softmax_rows(p.a_v)?;
    let keys = g.mix(wk, layers)?;
    let vals = g.mix(wv, layers)?;
    let k = g.matmul(keys, p.w_k)?;
    let v = g.matmul(vals, p.w_v)?;
    // heads x T logits, softmax over frames
    let logits = g.matmul_nt(p.u, k)?;
    let alpha = g.softmax_rows(logits)?;
    let pooled = g.matmul(alpha, v)?;
    let (h, c) = g.value(pooled).dims2();
    let flat = g.reshape(pooled, 1, h * c)?;
    g.linear(flat, p.w_o, Some(p.b_o))
}

/// Plain-tensor pooling of one utterance's layer outputs.
pub fn mhfa_pool(layers: &[Tensor<f32>], p: &MhfaParams) -> Result<Tensor<f32>> {
    let mut g = Graph::<f32>::inference();
    let vars = MhfaVars::constants(&mut g, p);
    let xs: Vec<Var> = layers.iter().map(|l| g.constant(l.clone())).collect();
    let out = mhfa_graph(&mut g, vars, &xs)?;
    let v = g.value(out);
    Tensor::new(vec![v.numel()], v.data().to_vec())
}
