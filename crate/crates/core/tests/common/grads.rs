//! Randomized desk-shape gradient-check instances. Each returns the maximum
//! relative error of the recorded gradient for one seed.

use petl_sv::backbone::{BackboneConfig, BackboneModel};
use petl_sv::numcore::{grad_check, Activation, Graph, ParamStore, Rng, Tensor, Var};
use petl_sv::petl::adapter::branch_graph;
use petl_sv::petl::{apply_petl, PetlConfig};
use petl_sv::spkback::{aam_graph, mhfa_graph, MhfaConfig, MhfaParams, MhfaVars};
use petl_sv::Result;

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;
const SAMPLES: usize = 6;

/// `sum(out * r)` for a fixed random `r`, as a scalar node.
fn project(g: &mut Graph<f64>, out: Var, r: &Tensor<f64>) -> Result<Var> {
    let (rows, cols) = g.value(out).dims2();
    let flat = g.reshape(out, 1, rows * cols)?;
    let rc = g.constant(r.clone());
    g.matmul_nt(flat, rc)
}

fn randomized(store: &ParamStore, keep: impl Fn(&str) -> bool, rng: &mut Rng, std: f64) -> Vec<(String, Tensor<f64>)> {
    store
        .groups()
        .iter()
        .filter(|g| keep(&g.name))
        .map(|g| (g.name.clone(), rng.normal_tensor::<f64>(g.tensor.shape(), std)))
        .collect()
}

fn instrumented(petl: &PetlConfig, seed: u64) -> BackboneModel {
    let m = BackboneModel::new(BackboneConfig::desk(), seed).unwrap();
    apply_petl(m, petl, seed + 1).unwrap()
}

pub fn bottleneck_adapter(seed: u64) -> f64 {
    let model = instrumented(&PetlConfig::bottleneck(16), 3);
    let mut rng = Rng::new(seed);
    let t = 3 + rng.below(6);
    let x = rng.normal_tensor::<f64>(&[t, 64], 1.0);
    let r = rng.normal_tensor::<f64>(&[1, t * 64], 1.0);
    let prefix = "petl.block0.adapter_ffn";
    let params = randomized(&model.params, |n| n.starts_with(prefix), &mut rng, 0.2);
    let f = |g: &mut Graph<f64>| {
        let xv = g.constant(x.clone());
        let b = branch_graph(g, &model.params, prefix, xv, Activation::Gelu)?;
        let out = g.add(xv, b)?;
        project(g, out, &r)
    };
    grad_check(f, &params, EPS, SAMPLES, &mut rng).unwrap().max_rel_error
}

pub fn prefix_attention(seed: u64) -> f64 {
    let model = instrumented(&PetlConfig::prefix(3), 5);
    let mut rng = Rng::new(100 + seed);
    let t = 3 + rng.below(6);
    let x = rng.normal_tensor::<f64>(&[t, 64], 1.0);
    let r = rng.normal_tensor::<f64>(&[1, t * 64], 1.0);
    let params = randomized(
        &model.params,
        |n| n.starts_with("petl.block1.prefix") || (n.starts_with("backbone.block1.attn.") && n.contains("W_")),
        &mut rng,
        0.3,
    );
    let f = |g: &mut Graph<f64>| {
        let xv = g.constant(x.clone());
        let out = model.block_graph(g, 1, xv)?;
        project(g, out, &r)
    };
    grad_check(f, &params, EPS, SAMPLES, &mut rng).unwrap().max_rel_error
}

pub fn mam_block(seed: u64) -> f64 {
    let model = instrumented(&PetlConfig::mam(16, 2), 7);
    let mut rng = Rng::new(200 + seed);
    let t = 3 + rng.below(6);
    let x = rng.normal_tensor::<f64>(&[t, 64], 1.0);
    let r = rng.normal_tensor::<f64>(&[1, t * 64], 1.0);
    let params = randomized(
        &model.params,
        |n| n.starts_with("petl.block2.") || n.starts_with("backbone.block2."),
        &mut rng,
        0.2,
    );
    let f = |g: &mut Graph<f64>| {
        let xv = g.constant(x.clone());
        let out = model.block_graph(g, 2, xv)?;
        project(g, out, &r)
    };
    grad_check(f, &params, EPS, SAMPLES, &mut rng).unwrap().max_rel_error
}

pub fn mhfa_pooling(seed: u64) -> f64 {
    let backbone = BackboneConfig::desk();
    let cfg = MhfaConfig::for_backbone(&backbone);
    let store = ParamStore::from_groups(MhfaParams::init(&cfg, &backbone, 1).to_groups(true)).unwrap();
    let mut rng = Rng::new(300 + seed);
    let t = 2 + rng.below(8);
    let layers: Vec<Tensor<f64>> = (0..=backbone.n_layers)
        .map(|_| rng.normal_tensor::<f64>(&[t, 64], 1.0))
        .collect();
    let r = rng.normal_tensor::<f64>(&[1, cfg.d_emb], 1.0);
    let params = randomized(&store, |_| true, &mut rng, 0.3);
    let f = |g: &mut Graph<f64>| {
        let vars: Vec<Var> = layers.iter().map(|l| g.constant(l.clone())).collect();
        let p = MhfaVars::bind(g, &store)?;
        let e = mhfa_graph(g, p, &vars)?;
        project(g, e, &r)
    };
    grad_check(f, &params, EPS, SAMPLES, &mut rng).unwrap().max_rel_error
}

pub fn aam_loss(seed: u64) -> f64 {
    let mut rng = Rng::new(400 + seed);
    let b = 1 + rng.below(4);
    let n = 3 + rng.below(6);
    let labels: Vec<usize> = (0..b).map(|_| rng.below(n)).collect();
    let params = vec![
        ("emb".to_string(), rng.normal_tensor::<f64>(&[b, 32], 1.0)),
        ("head.classes".to_string(), rng.normal_tensor::<f64>(&[32, n], 1.0)),
    ];
    let f = |g: &mut Graph<f64>| {
        let e = g.bind_override("emb")?;
        let c = g.bind_override("head.classes")?;
        aam_graph(g, e, c, &labels, 0.2, 30.0)
    };
    grad_check(f, &params, EPS, SAMPLES, &mut rng).unwrap().max_rel_error
}

/// Every instance family with its name.
pub const SUITE: [(&str, fn(u64) -> f64); 5] = [
    ("bottleneck adapter", bottleneck_adapter),
    ("prefix attention", prefix_attention),
    ("MAM block", mam_block),
    ("MHFA pooling", mhfa_pooling),
    ("AAM loss", aam_loss),
];
