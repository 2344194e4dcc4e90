use crate::backbone::{BackboneConfig, BackboneModel};
use crate::error::{Error, Result};
use crate::numcore::ParamSpec;

use super::adapter::{self, adapter_name};
use super::config::{PetlConfig, PetlMode};
use super::prefix;

/// Groups inserted by `cfg` into a backbone of shape `backbone`, all under `petl.`.
pub fn layout(backbone: &BackboneConfig, cfg: &PetlConfig) -> Vec<ParamSpec> {
    let d = backbone.d_hidden;
    let mut specs = Vec::new();
    for i in 0..backbone.n_layers {
        match cfg.mode {
            PetlMode::Full | PetlMode::Fixed => {}
            PetlMode::Bottleneck => {
                for kind in ["adapter_attn", "adapter_ffn"] {
                    specs.extend(adapter::layout(&adapter_name(i, kind), d, cfg.d_bottleneck));
                }
            }
            PetlMode::Prefix => specs.extend(prefix::layout(i, cfg.prefix_len, d)),
            PetlMode::Mam => {
                specs.extend(prefix::layout(i, cfg.prefix_len, d));
                specs.extend(adapter::layout(&adapter_name(i, "parallel"), d, cfg.d_bottleneck));
            }
        }
    }
    specs
}

/// Number of adapter modules `cfg` inserts (serial or parallel).
pub fn adapter_count(backbone: &BackboneConfig, cfg: &PetlConfig) -> usize {
    match cfg.mode {
        PetlMode::Bottleneck => 2 * backbone.n_layers,
        PetlMode::Mam => backbone.n_layers,
        _ => 0,
    }
}

/// Inserts freshly initialized PETL modules and applies the freeze policy:
/// every `backbone.` group is trainable in full mode and frozen otherwise;
/// inserted groups are always trainable.
pub fn apply_petl(mut model: BackboneModel, cfg: &PetlConfig, seed: u64) -> Result<BackboneModel> {
    if let Some(existing) = &model.petl {
        return Err(Error::Contract(format!(
            "model is already instrumented ({}); start from a plain backbone",
            existing.label()
        )));
    }
    cfg.validate(&model.config)?;
    model.params.set_trainable("backbone.", !cfg.mode.freezes_backbone());
    for spec in layout(&model.config, cfg) {
        model.params.insert(spec.materialize(seed, true))?;
    }
    model.hooks = cfg.hooks();
    model.petl = Some(cfg.clone());
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottleneck_on_base_inserts_24_adapters() {
        let base = BackboneConfig::base();
        let cfg = PetlConfig::bottleneck(128);
        assert_eq!(adapter_count(&base, &cfg), 24);
        let w_down = layout(&base, &cfg)
            .iter()
            .filter(|s| s.name.ends_with(".W_down"))
            .count();
        assert_eq!(w_down, 24);
    }

    #[test]
    fn fixed_mode_freezes_everything_and_inserts_nothing() {
        let model = BackboneModel::new(BackboneConfig::desk(), 1).unwrap();
        let n = model.params.len();
        let m = apply_petl(model, &PetlConfig::fixed(), 2).unwrap();
        assert_eq!(m.params.len(), n);
        assert_eq!(m.params.trainable_count(), 0);
    }

    #[test]
    fn full_mode_keeps_backbone_trainable() {
        let model = BackboneModel::new(BackboneConfig::desk(), 1).unwrap();
        let total = model.params.count();
        let m = apply_petl(model, &PetlConfig::full(), 2).unwrap();
        assert_eq!(m.params.trainable_count(), total);
    }

    #[test]
    fn mam_trains_only_inserted_groups() {
        let model = BackboneModel::new(BackboneConfig::desk(), 1).unwrap();
        let m = apply_petl(model, &PetlConfig::mam(16, 4), 2).unwrap();
        for g in m.params.groups() {
            assert_eq!(g.trainable, g.name.starts_with("petl."), "{}", g.name);
        }
    }

    #[test]
    fn reinstrumenting_is_a_contract_error() {
        let model = BackboneModel::new(BackboneConfig::desk(), 1).unwrap();
        let m = apply_petl(model, &PetlConfig::prefix(2), 2).unwrap();
        assert!(matches!(apply_petl(m, &PetlConfig::fixed(), 3), Err(Error::Contract(_))));
    }
}
