use crate::error::{Error, Result};
use crate::numcore::{Graph, Init, ParamGroup, ParamSpec, ParamStore, Scalar, Tensor, Var};
use crate::petl::{self, AdapterPlacement, BlockHooks, PetlConfig};

use super::config::BackboneConfig;

/// Frontend output followed by every block's output, all `T x d_hidden`.
pub type LayerOutputs = Vec<Tensor<f32>>;

pub fn block_prefix(i: usize) -> String {
    format!("backbone.block{i}")
}

/// Parameter layout of the plain (uninstrumented) backbone.
pub fn layout(cfg: &BackboneConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut in_ch = 1;
    for (i, conv) in cfg.frontend.iter().enumerate() {
        let fan_in = conv.kernel * in_ch;
        let p = format!("backbone.frontend.conv{i}");
        specs.push(ParamSpec::new(
            format!("{p}.weight"),
            &[fan_in, conv.channels],
            Init::Normal(1.0 / (fan_in as f64).sqrt()),
        ));
        specs.push(ParamSpec::new(format!("{p}.bias"), &[conv.channels], Init::Zeros));
        in_ch = conv.channels;
    }
    let d = cfg.d_hidden;
    specs.push(ParamSpec::new("backbone.frontend.norm.gamma", &[d], Init::Ones));
    specs.push(ParamSpec::new("backbone.frontend.norm.beta", &[d], Init::Zeros));

    let std_d = 1.0 / (d as f64).sqrt();
    let std_f = 1.0 / (cfg.d_ffn as f64).sqrt();
    for i in 0..cfg.n_layers {
        let p = block_prefix(i);
        specs.push(ParamSpec::new(format!("{p}.ln1.gamma"), &[d], Init::Ones));
        specs.push(ParamSpec::new(format!("{p}.ln1.beta"), &[d], Init::Zeros));
        for m in ["Q", "K", "V", "O"] {
            specs.push(ParamSpec::new(format!("{p}.attn.W_{m}"), &[d, d], Init::Normal(std_d)));
            specs.push(ParamSpec::new(format!("{p}.attn.b_{m}"), &[d], Init::Zeros));
        }
        specs.push(ParamSpec::new(format!("{p}.ln2.gamma"), &[d], Init::Ones));
        specs.push(ParamSpec::new(format!("{p}.ln2.beta"), &[d], Init::Zeros));
        specs.push(ParamSpec::new(format!("{p}.ffn.W_1"), &[d, cfg.d_ffn], Init::Normal(std_d)));
        specs.push(ParamSpec::new(format!("{p}.ffn.b_1"), &[cfg.d_ffn], Init::Zeros));
        specs.push(ParamSpec::new(format!("{p}.ffn.W_2"), &[cfg.d_ffn, d], Init::Normal(std_f)));
        specs.push(ParamSpec::new(format!("{p}.ffn.b_2"), &[d], Init::Zeros));
    }
    specs
}

/// Convolutional frontend plus transformer blocks, optionally instrumented
/// with PETL modules (groups under `petl.`).
#[derive(Clone, Debug)]
pub struct BackboneModel {
    pub config: BackboneConfig,
    pub petl: Option<PetlConfig>,
    pub hooks: BlockHooks,
    pub params: ParamStore,
}

impl BackboneModel {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let groups = layout(&config)
            .iter()
            .map(|s| s.materialize(seed, true))
            .collect();
        Ok(BackboneModel {
            config,
            petl: None,
            hooks: BlockHooks::none(),
            params: ParamStore::from_groups(groups)?,
        })
    }

    /// Rebuilds a model from stored groups (e.g. a checkpoint), taking every
    /// `backbone.` and `petl.` group. Shapes are checked against the layout.
    pub fn from_groups(config: BackboneConfig, petl: Option<PetlConfig>, groups: &[ParamGroup]) -> Result<Self> {
        config.validate()?;
        let mut specs = layout(&config);
        if let Some(p) = &petl {
            specs.extend(petl::layout(&config, p));
        }
        let by_name: std::collections::HashMap<&str, &ParamGroup> =
            groups.iter().map(|g| (g.name.as_str(), g)).collect();
        let mut store = ParamStore::new();
        for s in &specs {
            let g = by_name.get(s.name.as_str()).ok_or_else(|| {
                crate::error::CheckpointError::Architecture(format!("missing parameter {}", s.name))
            })?;
            if g.tensor.shape() != s.shape.as_slice() {
                return Err(crate::error::CheckpointError::Architecture(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    g.tensor.shape(),
                    s.shape
                ))
                .into());
            }
            store.insert((*g).clone())?;
        }
        let hooks = petl.as_ref().map(PetlConfig::hooks).unwrap_or_default();
        Ok(BackboneModel {
            config,
            petl,
            hooks,
            params: store,
        })
    }

    fn p(&self, name: &str) -> Result<&ParamGroup> {
        self.params.get(name)
    }

    /// Binds the frontend and produces the `T x d_hidden` frame sequence.
    pub fn frontend_graph<T: Scalar>(&self, g: &mut Graph<T>, waveform: &[f32]) -> Result<Var> {
        let need = self.config.min_samples();
        if waveform.len() < need {
            return Err(Error::Input(format!(
                "waveform has {} samples; the frontend needs at least {need}",
                waveform.len()
            )));
        }
        let x = Tensor::matrix(waveform.len(), 1, waveform.iter().map(|&v| T::from_f64(v as f64)).collect())?;
        let mut h = g.constant(x);
        let n = self.config.frontend.len();
        for (i, conv) in self.config.frontend.iter().enumerate() {
            let w = g.bind(self.p(&format!("backbone.frontend.conv{i}.weight"))?);
            let b = g.bind(self.p(&format!("backbone.frontend.conv{i}.bias"))?);
            let cols = g.im2col(h, conv.kernel, conv.stride)?;
            h = g.linear(cols, w, Some(b))?;
            if i + 1 < n {
                h = g.activation(h, self.config.activation);
            }
        }
        let gamma = g.bind(self.p("backbone.frontend.norm.gamma")?);
        let beta = g.bind(self.p("backbone.frontend.norm.beta")?);
        g.layer_norm(h, gamma, beta)
    }

    fn bind_block<T: Scalar>(&self, g: &mut Graph<T>, i: usize, leaf: &str) -> Result<Var> {
        Ok(g.bind(self.p(&format!("{}.{leaf}", block_prefix(i)))?))
    }

    /// Multi-head self-attention over `x` (already normalized). Keys and values
    /// are extended with the block's prefix rows when the prefix hook is on.
    fn attention_graph<T: Scalar>(&self, g: &mut Graph<T>, i: usize, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let dp = cfg.d_proj();
        let mut proj = |m: &str| -> Result<Var> {
            let w = self.bind_block(g, i, &format!("attn.W_{m}"))?;
            let b = self.bind_block(g, i, &format!("attn.b_{m}"))?;
            g.linear(x, w, Some(b))
        };
        let (q, k, v) = (proj("Q")?, proj("K")?, proj("V")?);
        let prefix = if self.hooks.prefix {
            let (pk, pv) = petl::prefix::bind(g, &self.params, i)?;
            for t in [pk, pv] {
                if g.value(t).cols() != cfg.d_hidden {
                    return Err(Error::Wiring(format!(
                        "prefix in block {i} has width {}, expected {}",
                        g.value(t).cols(),
                        cfg.d_hidden
                    )));
                }
            }
            Some((pk, pv))
        } else {
            None
        };
        let scale = 1.0 / (dp as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = g.slice_cols(q, h * dp, dp)?;
            let mut kh = g.slice_cols(k, h * dp, dp)?;
            let mut vh = g.slice_cols(v, h * dp, dp)?;
            if let Some((pk, pv)) = prefix {
                let pkh = g.slice_cols(pk, h * dp, dp)?;
                let pvh = g.slice_cols(pv, h * dp, dp)?;
                kh = g.concat_rows(&[pkh, kh])?;
                vh = g.concat_rows(&[pvh, vh])?;
            }
            heads.push(g.attention(qh, kh, vh, scale)?);
        }
        let cat = g.concat_cols(&heads)?;
        let wo = self.bind_block(g, i, "attn.W_O")?;
        let bo = self.bind_block(g, i, "attn.b_O")?;
        g.linear(cat, wo, Some(bo))
    }

    fn ffn_graph<T: Scalar>(&self, g: &mut Graph<T>, i: usize, x: Var) -> Result<Var> {
        let w1 = self.bind_block(g, i, "ffn.W_1")?;
        let b1 = self.bind_block(g, i, "ffn.b_1")?;
        let w2 = self.bind_block(g, i, "ffn.W_2")?;
        let b2 = self.bind_block(g, i, "ffn.b_2")?;
        let h = g.linear(x, w1, Some(b1))?;
        let h = g.activation(h, self.config.activation);
        g.linear(h, w2, Some(b2))
    }

    /// Pre-norm block: `h' = h + MHA(LN(h))`, `out = h' + FFN(LN(h'))`, with
    /// PETL modules spliced in according to `self.hooks`.
    pub fn block_graph<T: Scalar>(&self, g: &mut Graph<T>, i: usize, h_in: Var) -> Result<Var> {
        let cols = g.value(h_in).cols();
        if cols != self.config.d_hidden {
            return Err(Error::Dimension {
                op: "block_forward",
                lhs: g.value(h_in).shape().to_vec(),
                rhs: vec![self.config.d_hidden],
            });
        }
        if i >= self.config.n_layers {
            return Err(Error::Wiring(format!("block {i} does not exist")));
        }
        let hooks = self.hooks;
        let serial = |g: &mut Graph<T>, kind: &str, x: Var| -> Result<Var> {
            petl::adapter::branch_graph(g, &self.params, &petl::adapter::adapter_name(i, kind), x, hooks.activation)
        };

        let g1 = self.bind_block(g, i, "ln1.gamma")?;
        let b1 = self.bind_block(g, i, "ln1.beta")?;
        let ln1 = g.layer_norm(h_in, g1, b1)?;
        let mut attn = self.attention_graph(g, i, ln1)?;
        if hooks.serial_adapters && hooks.placement == AdapterPlacement::BeforeResidual {
            let a = serial(g, "adapter_attn", attn)?;
            attn = g.add(attn, a)?;
        }
        let mut h1 = g.add(h_in, attn)?;
        if hooks.serial_adapters && hooks.placement == AdapterPlacement::AfterResidual {
            let a = serial(g, "adapter_attn", h1)?;
            h1 = g.add(h1, a)?;
        }

        let g2 = self.bind_block(g, i, "ln2.gamma")?;
        let b2 = self.bind_block(g, i, "ln2.beta")?;
        let ln2 = g.layer_norm(h1, g2, b2)?;
        let mut ffn = self.ffn_graph(g, i, ln2)?;
        if hooks.serial_adapters && hooks.placement == AdapterPlacement::BeforeResidual {
            let a = serial(g, "adapter_ffn", ffn)?;
            ffn = g.add(ffn, a)?;
        }
        let mut out = g.add(h1, ffn)?;
        if hooks.parallel_adapter {
            let a = serial(g, "parallel", ln2)?;
            out = g.add(out, a)?;
        }
        if hooks.serial_adapters && hooks.placement == AdapterPlacement::AfterResidual {
            let a = serial(g, "adapter_ffn", out)?;
            out = g.add(out, a)?;
        }
        Ok(out)
    }

    /// Frontend output plus every block output, in order.
    pub fn encode_graph<T: Scalar>(&self, g: &mut Graph<T>, waveform: &[f32]) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.config.n_layers + 1);
        let mut h = self.frontend_graph(g, waveform)?;
        outs.push(h);
        for i in 0..self.config.n_layers {
            h = self.block_graph(g, i, h)?;
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn frontend_encode(&self, waveform: &[f32]) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::inference();
        let v = self.frontend_graph(&mut g, waveform)?;
        Ok(g.value(v).clone())
    }

    pub fn block_forward(&self, i: usize, h_in: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::inference();
        let x = g.constant(h_in.clone());
        let y = self.block_graph(&mut g, i, x)?;
        Ok(g.value(y).clone())
    }

    pub fn encode_layers(&self, waveform: &[f32]) -> Result<LayerOutputs> {
        let mut g = Graph::<f32>::inference();
        let vars = self.encode_graph(&mut g, waveform)?;
        Ok(vars.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Number of backbone (non-PETL) parameters.
    pub fn census(&self) -> usize {
        self.params
            .groups()
            .iter()
            .filter(|g| g.name.starts_with("backbone."))
            .map(ParamGroup::count)
            .sum()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numcore::Rng;
    use crate::petl::apply_petl;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            n_layers: 2,
            d_hidden: 8,
            n_heads: 2,
            d_ffn: 12,
            frontend: vec![super::super::ConvLayer::new(4, 4, 2), super::super::ConvLayer::new(8, 2, 2)],
            activation: crate::numcore::Activation::Gelu,
        }
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
    }

    fn mat(m: &BackboneModel, name: &str) -> Vec<Vec<f64>> {
        let t = &m.params.get(name).unwrap().tensor;
        (0..t.rows()).map(|r| t.row(r).iter().map(|&v| v as f64).collect()).collect()
    }

    fn vecf(m: &BackboneModel, name: &str) -> Vec<f64> {
        m.params.get(name).unwrap().tensor.to_f64_vec()
    }

    fn mm(x: &[Vec<f64>], w: &[Vec<f64>], b: Option<&[f64]>) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..w[0].len())
                    .map(|j| {
                        let s: f64 = row.iter().zip(w).map(|(a, wr)| a * wr[j]).sum();
                        s + b.map_or(0.0, |b| b[j])
                    })
                    .collect()
            })
            .collect()
    }

    fn ln(x: &[Vec<f64>], g: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mu = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                let rs = 1.0 / (var + 1e-5).sqrt();
                row.iter().enumerate().map(|(j, v)| (v - mu) * rs * g[j] + b[j]).collect()
            })
            .collect()
    }

    fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
    }

    /// Independent straight-line evaluation of one block, with optional
    /// prefix rows `(P_K, P_V)` and parallel adapter prefix.
    pub(crate) fn reference_block(
        m: &BackboneModel,
        i: usize,
        h: &[Vec<f64>],
        prefix: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
        parallel: Option<&str>,
    ) -> Vec<Vec<f64>> {
        let p = block_prefix(i);
        let cfg = &m.config;
        let dp = cfg.d_proj();
        let x = ln(h, &vecf(m, &format!("{p}.ln1.gamma")), &vecf(m, &format!("{p}.ln1.beta")));
        let proj = |n: &str| {
            mm(&x, &mat(m, &format!("{p}.attn.W_{n}")), Some(&vecf(m, &format!("{p}.attn.b_{n}"))))
        };
        let (q, mut k, mut v) = (proj("Q"), proj("K"), proj("V"));
        if let Some((pk, pv)) = prefix {
            k = pk.into_iter().chain(k).collect();
            v = pv.into_iter().chain(v).collect();
        }
        let t = h.len();
        let mut cat = vec![vec![0.0; cfg.d_hidden]; t];
        for head in 0..cfg.n_heads {
            let cols = head * dp..(head + 1) * dp;
            for r in 0..t {
                let logits: Vec<f64> = k
                    .iter()
                    .map(|kr| {
                        cols.clone().map(|c| q[r][c] * kr[c]).sum::<f64>() / (dp as f64).sqrt()
                    })
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    cat[r][c] = e.iter().zip(&v).map(|(w, vr)| w * vr[c]).sum::<f64>() / z;
                }
            }
        }
        let attn = mm(&cat, &mat(m, &format!("{p}.attn.W_O")), Some(&vecf(m, &format!("{p}.attn.b_O"))));
        let h1 = add(h, &attn);
        let x2 = ln(&h1, &vecf(m, &format!("{p}.ln2.gamma")), &vecf(m, &format!("{p}.ln2.beta")));
        let f = mm(&x2, &mat(m, &format!("{p}.ffn.W_1")), Some(&vecf(m, &format!("{p}.ffn.b_1"))));
        let f: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|&z| gelu(z)).collect()).collect();
        let f = mm(&f, &mat(m, &format!("{p}.ffn.W_2")), Some(&vecf(m, &format!("{p}.ffn.b_2"))));
        let mut out = add(&h1, &f);
        if let Some(a) = parallel {
            let d = mm(&x2, &mat(m, &format!("{a}.W_down")), Some(&vecf(m, &format!("{a}.b_down"))));
            let d: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|&z| gelu(z)).collect()).collect();
            let u = mm(&d, &mat(m, &format!("{a}.W_up")), Some(&vecf(m, &format!("{a}.b_up"))));
            out = add(&out, &u);
        }
        out
    }

    pub(crate) fn randomize(m: &mut BackboneModel, seed: u64, std: f64) {
        let mut rng = Rng::new(seed);
        for g in m.params.iter_mut() {
            let shape = g.tensor.shape().to_vec();
            g.tensor = rng.normal_tensor(&shape, std);
        }
    }

    fn to_rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|r| t.row(r).iter().map(|&v| v as f64).collect()).collect()
    }

    #[test]
    fn zero_weights_are_pure_residual() {
        let mut m = BackboneModel::new(tiny(), 1).unwrap();
        for g in m.params.iter_mut() {
            g.tensor = Tensor::zeros(g.tensor.shape());
        }
        let h = Rng::new(2).normal_tensor::<f32>(&[5, 8], 1.0);
        assert_eq!(m.block_forward(0, &h).unwrap(), h);
    }

    #[test]
    fn block_matches_straight_line_reference() {
        let mut m = BackboneModel::new(tiny(), 3).unwrap();
        randomize(&mut m, 4, 0.4);
        let h = Rng::new(5).normal_tensor::<f32>(&[6, 8], 1.0);
        let got = m.block_forward(1, &h).unwrap();
        let want = reference_block(&m, 1, &to_rows(&h), None, None);
        for r in 0..6 {
            for c in 0..8 {
                assert!((got.get(r, c) as f64 - want[r][c]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn empty_prefix_is_bitwise_identical() {
        let mut plain = BackboneModel::new(tiny(), 6).unwrap();
        randomize(&mut plain, 7, 0.4);
        let inst = apply_petl(plain.clone(), &PetlConfig::prefix(0), 8).unwrap();
        let h = Rng::new(9).normal_tensor::<f32>(&[4, 8], 1.0);
        assert_eq!(plain.block_forward(0, &h).unwrap(), inst.block_forward(0, &h).unwrap());
    }

    #[test]
    fn encode_layers_lengths_and_purity() {
        let m = BackboneModel::new(BackboneConfig::desk(), 10).unwrap();
        let wave: Vec<f32> = (0..2000).map(|i| (i as f32 * 0.05).sin()).collect();
        let a = m.encode_layers(&wave).unwrap();
        assert_eq!(a.len(), 5);
        for l in &a {
            assert_eq!(l.shape(), &[BackboneConfig::desk().frames_for(2000).unwrap(), 64]);
        }
        assert_eq!(a, m.encode_layers(&wave).unwrap());
        for w in a.windows(2) {
            assert!(w[0].max_abs_diff(&w[1]) > 1e-3);
        }
    }

    #[test]
    fn zero_waveform_is_finite() {
        let m = BackboneModel::new(BackboneConfig::desk(), 11).unwrap();
        let out = m.encode_layers(&vec![0.0; 1000]).unwrap();
        assert!(out.iter().all(Tensor::is_finite));
    }

    #[test]
    fn short_waveform_reports_minimum() {
        let m = BackboneModel::new(BackboneConfig::desk(), 12).unwrap();
        let err = m.frontend_encode(&[0.0; 10]).unwrap_err();
        assert!(matches!(&err, Error::Input(s) if s.contains("32")), "{err}");
    }

    #[test]
    fn wrong_width_is_dimension_error() {
        let m = BackboneModel::new(tiny(), 13).unwrap();
        assert!(matches!(m.block_forward(0, &Tensor::zeros(&[3, 5])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn base_census_near_94m() {
        let n: usize = layout(&BackboneConfig::base()).iter().map(ParamSpec::count).sum();
        let blocks = 12 * (4 * 768 * 768 + 2 * 768 * 3072 + 4 * 768 + 4 * 768 + 3072 + 768);
        let frontend = (10 * 768 + 768) + 4 * (3 * 768 * 768 + 768) + 2 * (2 * 768 * 768 + 768) + 2 * 768;
        assert_eq!(n, blocks + frontend);
        assert!((91_000_000..=97_000_000).contains(&n), "{n}");
    }
}
