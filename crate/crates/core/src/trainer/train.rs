use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{augment_with, Manifest, SAMPLE_RATE};
use crate::error::{CheckpointError, Error, Result};
use crate::numcore::rng::{hash_str, mix_seed};
use crate::numcore::{Graph, Rng, Tensor};
use crate::petl::PetlConfig;
use crate::spkback::aam::{aam_graph, CLASSES};

use super::config::{LmFtConfig, ModelConfig, TrainConfig};
use super::optim::{clip_global_norm, Optimizer};
use super::system::SpeakerSystem;

pub const CHECKPOINT_FILE: &str = "checkpoint.psvc";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// `"step"` for one optimizer step, `"epoch"` for the epoch mean.
    pub kind: String,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub system: SpeakerSystem,
    pub metrics: Vec<MetricRecord>,
    pub epoch_losses: Vec<f64>,
    pub final_lr: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Fixed-length window of `wave` starting at a random offset; shorter inputs
/// are zero-padded at the end.
pub fn random_crop(wave: &[f32], len: usize, rng: &mut Rng) -> Vec<f32> {
    if wave.len() <= len {
        let mut out = wave.to_vec();
        out.resize(len, 0.0);
        return out;
    }
    let start = rng.below(wave.len() - len + 1);
    wave[start..start + len].to_vec()
}

pub fn load_waveforms(manifest: &Manifest) -> Result<Vec<Vec<f32>>> {
    manifest.rows.par_iter().map(|r| manifest.waveform(r)).collect()
}

/// Loss and gradients for one training example.
fn example_grad(sys: &SpeakerSystem, wave: &[f32], label: usize, margin: f64, scale: f64) -> Result<(f64, HashMap<String, Tensor<f32>>)> {
    let mut g = Graph::<f32>::new();
    let e = sys.embed_graph(&mut g, wave)?;
    let c = g.bind(sys.backend.get(CLASSES)?);
    let l = aam_graph(&mut g, e, c, &[label], margin, scale)?;
    let loss = g.value(l).data()[0] as f64;
    let grads = g.backward(l)?;
    Ok((loss, grads.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()))
}

fn build_system(model: &ModelConfig, cfg: &TrainConfig, speakers: Vec<String>) -> Result<SpeakerSystem> {
    match &cfg.init_from {
        Some(path) => {
            let sys = SpeakerSystem::continue_from(path, &cfg.petl, speakers, cfg.seed)?;
            if &sys.model != model {
                return Err(CheckpointError::Architecture(format!(
                    "{} was trained with a different architecture",
                    path.display()
                ))
                .into());
            }
            Ok(sys)
        }
        None => SpeakerSystem::new(model, &cfg.petl, speakers, cfg.seed),
    }
}

/// Trains on `manifest` per `cfg`. With `out`, writes the echoed config,
/// the metrics log and the final checkpoint there.
pub fn train(model: &ModelConfig, cfg: &TrainConfig, manifest: &Manifest, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    manifest.validate()?;
    let speakers = manifest.speakers();
    let sys = build_system(model, cfg, speakers)?;
    run(sys, cfg, manifest, out)
}

fn run(mut sys: SpeakerSystem, cfg: &TrainConfig, manifest: &Manifest, out: Option<&Path>) -> Result<TrainOutcome> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let echo = serde_json::json!({ "model": sys.model, "train": cfg });
        let text = serde_json::to_string_pretty(&echo).map_err(|e| Error::json("config echo", e))?;
        std::fs::write(dir.join(CONFIG_FILE), text).map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
    }
    let index: HashMap<&str, usize> = sys.speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels: Vec<usize> = manifest
        .rows
        .iter()
        .map(|r| {
            index
                .get(r.speaker_id.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("speaker {} not in the head", r.speaker_id)))
        })
        .collect::<Result<_>>()?;
    let waves = load_waveforms(manifest)?;
    let crop = (cfg.crop_s * SAMPLE_RATE as f64).round() as usize;
    let frozen: Vec<(String, Tensor<f32>)> = sys
        .groups()
        .filter(|g| !g.trainable)
        .map(|g| (g.name.clone(), g.tensor.clone()))
        .collect();

    let mut opt = Optimizer::new(cfg.optimizer);
    let mut metrics = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let epoch_seed = mix_seed(cfg.seed, mix_seed(hash_str("epoch"), epoch as u64));
        let mut order: Vec<usize> = (0..manifest.len()).collect();
        Rng::new(epoch_seed).shuffle(&mut order);
        let mut sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, HashMap<String, Tensor<f32>>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let mut rng = Rng::new(mix_seed(epoch_seed, mix_seed(b as u64, k as u64)));
                    let x = random_crop(&waves[i], crop, &mut rng);
                    let x = augment_with(&x, &mut rng, &cfg.augment);
                    example_grad(&sys, &x, labels[i], cfg.margin, cfg.scale)
                })
                .collect();
            let inv = 1.0 / batch.len() as f32;
            let mut loss = 0.0;
            let mut grads: HashMap<String, Tensor<f32>> = HashMap::new();
            for r in results {
                let (l, g) = r?;
                loss += l;
                for (name, t) in g {
                    match grads.get_mut(&name) {
                        Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, &v)| *a += v),
                        None => {
                            grads.insert(name, t);
                        }
                    }
                }
            }
            loss /= batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            opt.step(sys.groups_mut(), &grads, lr);
            metrics.push(MetricRecord {
                kind: "step".into(),
                epoch,
                step,
                lr,
                loss,
            });
            sum += loss * batch.len() as f64;
            step += 1;
        }
        let mean = sum / manifest.len() as f64;
        info!("epoch {epoch}: lr {lr:.3e}, mean loss {mean:.4}");
        metrics.push(MetricRecord {
            kind: "epoch".into(),
            epoch,
            step,
            lr,
            loss: mean,
        });
        epoch_losses.push(mean);
        if cfg!(debug_assertions) {
            check_frozen(&sys, &frozen)?;
        }
    }
    check_frozen(&sys, &frozen)?;

    let final_lr = cfg.final_lr();
    let mut checkpoint = None;
    if let Some(dir) = out {
        let path = dir.join(CHECKPOINT_FILE);
        let extra = serde_json::json!({ "train": cfg });
        sys.save(&path, &sys.meta(Some(final_lr), extra))?;
        write_metrics(&dir.join(METRICS_FILE), &metrics)?;
        checkpoint = Some(path);
    }
    Ok(TrainOutcome {
        system: sys,
        metrics,
        epoch_losses,
        final_lr,
        checkpoint,
    })
}

fn check_frozen(sys: &SpeakerSystem, frozen: &[(String, Tensor<f32>)]) -> Result<()> {
    for (name, before) in frozen {
        let now = &sys.group(name)?.tensor;
        if now.to_le_bytes() != before.to_le_bytes() {
            return Err(Error::Contract(format!("frozen group {name} was modified")));
        }
    }
    Ok(())
}

pub fn write_metrics(path: &Path, metrics: &[MetricRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for m in metrics {
        let line = serde_json::to_string(m).map_err(|e| Error::json("metric record", e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// The training configuration stored in a checkpoint by [`train`].
pub fn stored_train_config(meta: &super::system::CheckpointMeta) -> Option<TrainConfig> {
    meta.extra.get("train").and_then(|v| serde_json::from_value(v.clone()).ok())
}

/// Large-margin continuation: same PETL setup, larger margin, longer crops,
/// constant learning rate equal to the prior stage's final one.
pub fn lm_finetune(ckpt: &Path, lm: &LmFtConfig, manifest: &Manifest, out: Option<&Path>) -> Result<TrainOutcome> {
    let (_, meta) = SpeakerSystem::load(ckpt)?;
    let prior = stored_train_config(&meta).unwrap_or_default();
    let cfg = TrainConfig {
        epochs: lm.extra_epochs,
        crop_s: lm.crop_s,
        margin: lm.margin,
        base_lr: meta.final_lr.unwrap_or(prior.base_lr),
        lr_decay_per_epoch: 1.0,
        petl: meta.petl.clone().unwrap_or_else(PetlConfig::full),
        init_from: Some(ckpt.to_path_buf()),
        seed: mix_seed(prior.seed, hash_str("lm-ft")),
        ..prior
    };
    info!("LM-FT: margin {} -> {}, crop {} s -> {} s", prior_margin(&meta), cfg.margin, prior_crop(&meta), cfg.crop_s);
    train(&meta.model, &cfg, manifest, out)
}

fn prior_margin(meta: &super::system::CheckpointMeta) -> f64 {
    stored_train_config(meta).map_or(TrainConfig::default().margin, |c| c.margin)
}

fn prior_crop(meta: &super::system::CheckpointMeta) -> f64 {
    stored_train_config(meta).map_or(TrainConfig::default().crop_s, |c| c.crop_s)
}

#[derive(Clone, Debug)]
pub struct TwoStageOutcome {
    pub stage1: TrainOutcome,
    pub stage2: TrainOutcome,
}

/// Stage 1: full fine-tuning on the intermediate corpus. Stage 2: the tuned
/// model re-instrumented per `stage2.petl`, trained on the target corpus with
/// a fresh head. Checkpoints land in `out/stage1` and `out/stage2`.
pub fn two_stage(
    model: &ModelConfig,
    stage1: &TrainConfig,
    stage2: &TrainConfig,
    intermediate: &Manifest,
    target: &Manifest,
    out: &Path,
) -> Result<TwoStageOutcome> {
    let s1_cfg = TrainConfig {
        petl: PetlConfig::full(),
        ..stage1.clone()
    };
    let s1 = train(model, &s1_cfg, intermediate, Some(&out.join("stage1")))?;
    let overlap: HashSet<String> = intermediate.speakers().into_iter().collect();
    let shared = target.speakers().iter().filter(|s| overlap.contains(*s)).count();
    if shared > 0 {
        info!("{shared} target speakers also appear in the intermediate corpus");
    }
    let s2_cfg = TrainConfig {
        init_from: s1.checkpoint.clone(),
        ..stage2.clone()
    };
    let s2 = train(model, &s2_cfg, target, Some(&out.join("stage2")))?;
    Ok(TwoStageOutcome { stage1: s1, stage2: s2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_corpus, AugmentConfig, CorpusSpec, Domain};
    use crate::backbone::{BackboneConfig, ConvLayer};
    use crate::numcore::Activation;
    use crate::spkback::MhfaConfig;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                n_layers: 1,
                d_hidden: 16,
                n_heads: 2,
                d_ffn: 32,
                frontend: vec![ConvLayer::new(8, 8, 8), ConvLayer::new(16, 4, 4)],
                activation: Activation::Gelu,
            },
            mhfa: MhfaConfig {
                d_cmp: 8,
                n_heads: 2,
                d_emb: 8,
            },
        }
    }

    fn tiny_corpus() -> Manifest {
        let spec = CorpusSpec {
            duration_s: (0.5, 0.5),
            ..CorpusSpec::new("t", 1, Domain::A, 3, 2)
        };
        make_corpus(&spec, None).unwrap().0
    }

    fn quick(petl: PetlConfig) -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            crop_s: 0.1,
            petl,
            augment: AugmentConfig::disabled(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let cfg = TrainConfig {
            base_lr: 0.0,
            ..quick(PetlConfig::full())
        };
        let m = tiny_corpus();
        let init = SpeakerSystem::new(&tiny_model(), &cfg.petl, m.speakers(), cfg.seed).unwrap();
        let out = train(&tiny_model(), &cfg, &m, None).unwrap();
        assert_eq!(out.system.to_groups(), init.to_groups());
        assert_eq!(out.epoch_losses.len(), 1);
        assert!(out.epoch_losses[0].is_finite());
    }

    #[test]
    fn fixed_mode_preserves_backbone() {
        let cfg = TrainConfig {
            base_lr: 0.05,
            ..quick(PetlConfig::fixed())
        };
        let m = tiny_corpus();
        let init = SpeakerSystem::new(&tiny_model(), &cfg.petl, m.speakers(), cfg.seed).unwrap();
        let out = train(&tiny_model(), &cfg, &m, None).unwrap();
        for g in out.system.backbone.params.groups() {
            assert_eq!(g.tensor, init.backbone.params.get(&g.name).unwrap().tensor);
        }
        assert_ne!(out.system.backend.get(CLASSES).unwrap(), init.backend.get(CLASSES).unwrap());
    }

    #[test]
    fn metrics_are_deterministic() {
        let cfg = TrainConfig {
            augment: AugmentConfig::default(),
            ..quick(PetlConfig::mam(4, 2))
        };
        let m = tiny_corpus();
        let a = train(&tiny_model(), &cfg, &m, None).unwrap();
        let b = train(&tiny_model(), &cfg, &m, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.system.to_groups(), b.system.to_groups());
    }

    #[test]
    fn crop_pads_short_input() {
        let mut rng = Rng::new(1);
        assert_eq!(random_crop(&[1.0, 2.0], 4, &mut rng), vec![1.0, 2.0, 0.0, 0.0]);
        let long: Vec<f32> = (0..100).map(|v| v as f32).collect();
        let c = random_crop(&long, 10, &mut rng);
        assert_eq!(c.len(), 10);
        assert_eq!(c[9] - c[0], 9.0);
    }
}
