use crate::backbone::{block_prefix, BackboneModel};
use crate::error::{Error, Result};
use crate::numcore::{ParamGroup, ParamStore, Tensor};

use super::adapter::{adapter_name, BottleneckAdapterParams};
use super::config::{PetlConfig, PetlMode};
use super::prefix::{names, PrefixParams};

/// One MAM block with explicitly supplied PETL parameters: prefix attention
/// in the attention sublayer and the parallel adapter branch (no residual of
/// its own) added next to the feed-forward sublayer.
pub fn mam_forward(
    model: &BackboneModel,
    block: usize,
    h_in: &Tensor<f32>,
    p_parallel: &BottleneckAdapterParams,
    p_prefix: &PrefixParams,
) -> Result<Tensor<f32>> {
    let cfg = &model.config;
    if block >= cfg.n_layers {
        return Err(Error::Wiring(format!("block {block} does not exist")));
    }
    if p_parallel.d_hidden() != cfg.d_hidden {
        return Err(Error::Wiring(format!(
            "parallel adapter width {} does not match d_hidden {}",
            p_parallel.d_hidden(),
            cfg.d_hidden
        )));
    }
    if p_prefix.p_k.len() != cfg.n_heads || p_prefix.p_v.len() != cfg.n_heads {
        return Err(Error::Wiring(format!(
            "prefix has {} heads, block has {}",
            p_prefix.p_k.len(),
            cfg.n_heads
        )));
    }

    let mut store = ParamStore::new();
    let own = format!("{}.", block_prefix(block));
    for g in model.params.groups().iter().filter(|g| g.name.starts_with(&own)) {
        store.insert(g.clone())?;
    }
    let (k_name, v_name) = names(block);
    store.insert(ParamGroup::new(k_name, join_heads(&p_prefix.p_k, cfg.d_proj())?, true))?;
    store.insert(ParamGroup::new(v_name, join_heads(&p_prefix.p_v, cfg.d_proj())?, true))?;
    for g in p_parallel.to_groups(&adapter_name(block, "parallel"), true) {
        store.insert(g)?;
    }

    let petl = PetlConfig {
        activation: p_parallel.activation,
        ..PetlConfig::mam(p_parallel.d_bottleneck(), p_prefix.prefix_len())
    };
    debug_assert_eq!(petl.mode, PetlMode::Mam);
    let tmp = BackboneModel {
        config: cfg.clone(),
        hooks: petl.hooks(),
        petl: Some(petl),
        params: store,
    };
    tmp.block_forward(block, h_in)
}

/// Inverse of the per-head split: `l x d_proj` tiles side by side.
fn join_heads(tiles: &[Tensor<f32>], d_proj: usize) -> Result<Tensor<f32>> {
    let l = tiles.first().map_or(0, |t| t.shape()[0]);
    let mut data = Vec::with_capacity(l * d_proj * tiles.len());
    for t in tiles {
        if t.shape() != [l, d_proj] {
            return Err(Error::Wiring(format!(
                "prefix tile has shape {:?}, expected [{l}, {d_proj}]",
                t.shape()
            )));
        }
    }
    for r in 0..l {
        for t in tiles {
            data.extend_from_slice(&t.data()[r * d_proj..(r + 1) * d_proj]);
        }
    }
    Tensor::new(vec![l, d_proj * tiles.len()], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::model::tests::{randomize, reference_block};
    use crate::backbone::BackboneConfig;
    use crate::numcore::Rng;
    use crate::petl::apply_petl;

    fn desk_block_model(seed: u64) -> BackboneModel {
        let mut m = BackboneModel::new(BackboneConfig::desk(), seed).unwrap();
        randomize(&mut m, seed + 1, 0.2);
        m
    }

    fn rows(t: &Tensor<f32>) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|r| t.row(r).iter().map(|&v| v as f64).collect()).collect()
    }

    #[test]
    fn zero_up_and_empty_prefix_is_plain_block() {
        let m = desk_block_model(1);
        let h = Rng::new(3).normal_tensor::<f32>(&[7, 64], 1.0);
        let adapter = BottleneckAdapterParams::init(64, 8, 4).unwrap();
        let empty = PrefixParams {
            p_k: vec![Tensor::zeros(&[0, 16]); 4],
            p_v: vec![Tensor::zeros(&[0, 16]); 4],
        };
        let got = mam_forward(&m, 2, &h, &adapter, &empty).unwrap();
        assert_eq!(got, m.block_forward(2, &h).unwrap());
    }

    #[test]
    fn matches_straight_line_composition() {
        let m = desk_block_model(5);
        let mut rng = Rng::new(6);
        let h = rng.normal_tensor::<f32>(&[6, 64], 1.0);
        let mut adapter = BottleneckAdapterParams::init(64, 8, 7).unwrap();
        adapter.w_up = rng.normal_tensor(&[8, 64], 0.3);
        adapter.b_up = rng.normal_tensor(&[64], 0.3);
        let pk_full = rng.normal_tensor::<f32>(&[3, 64], 0.5);
        let pv_full = rng.normal_tensor::<f32>(&[3, 64], 0.5);

        let mut inst = apply_petl(m.clone(), &PetlConfig::mam(8, 3), 1).unwrap();
        inst.params.get_mut("petl.block1.prefix.P_K").unwrap().tensor = pk_full.clone();
        inst.params.get_mut("petl.block1.prefix.P_V").unwrap().tensor = pv_full.clone();
        for g in adapter.to_groups("petl.block1.parallel", true) {
            inst.params.get_mut(&g.name).unwrap().tensor = g.tensor;
        }
        let prefix = PrefixParams::from_block(&inst.params, 1, 4).unwrap();
        let got = mam_forward(&m, 1, &h, &adapter, &prefix).unwrap();
        let want = reference_block(&inst, 1, &rows(&h), Some((rows(&pk_full), rows(&pv_full))), Some("petl.block1.parallel"));
        for r in 0..6 {
            for c in 0..64 {
                assert!((got.get(r, c) as f64 - want[r][c]).abs() < 1e-4, "{r},{c}");
            }
        }
        assert_eq!(got, inst.block_forward(1, &h).unwrap());
    }

    #[test]
    fn empty_prefix_equals_parallel_only_variant() {
        let m = desk_block_model(8);
        let mut rng = Rng::new(9);
        let h = rng.normal_tensor::<f32>(&[5, 64], 1.0);
        let mut adapter = BottleneckAdapterParams::init(64, 8, 10).unwrap();
        adapter.w_up = rng.normal_tensor(&[8, 64], 0.3);
        let empty = PrefixParams {
            p_k: vec![Tensor::zeros(&[0, 16]); 4],
            p_v: vec![Tensor::zeros(&[0, 16]); 4],
        };
        let got = mam_forward(&m, 0, &h, &adapter, &empty).unwrap();
        let plain = m.block_forward(0, &h).unwrap();
        // parallel branch on LN2(H'), with H' taken from a copy whose FFN is zeroed
        let branch = {
            let h1 = {
                let mut no_ffn = m.clone();
                for n in ["W_1", "b_1", "W_2", "b_2"] {
                    let t = &mut no_ffn.params.get_mut(&format!("backbone.block0.ffn.{n}")).unwrap().tensor;
                    *t = Tensor::zeros(t.shape());
                }
                no_ffn.block_forward(0, &h).unwrap()
            };
            let p2 = crate::numcore::ops::layer_norm(
                &h1,
                &m.params.get("backbone.block0.ln2.gamma").unwrap().tensor,
                &m.params.get("backbone.block0.ln2.beta").unwrap().tensor,
                crate::numcore::ops::LAYER_NORM_EPS,
            )
            .unwrap();
            adapter.branch(&p2).unwrap()
        };
        let sum: Vec<f32> = plain.data().iter().zip(branch.data()).map(|(a, b)| a + b).collect();
        let want = Tensor::matrix(5, 64, sum).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-5);
    }

    #[test]
    fn wrong_head_count_is_wiring_error() {
        let m = desk_block_model(11);
        let h = Tensor::<f32>::zeros(&[2, 64]);
        let adapter = BottleneckAdapterParams::init(64, 8, 1).unwrap();
        let bad = PrefixParams {
            p_k: vec![Tensor::zeros(&[1, 16]); 3],
            p_v: vec![Tensor::zeros(&[1, 16]); 3],
        };
        assert!(matches!(mam_forward(&m, 0, &h, &adapter, &bad), Err(Error::Wiring(_))));
    }
}
