use std::collections::HashMap;

use crate::numcore::{ParamGroup, Tensor};

use super::config::OptimizerKind;

/// First-order optimizer over named groups. Groups with `trainable = false`
/// are never written.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step<'a>(
        &mut self,
        groups: impl Iterator<Item = &'a mut ParamGroup>,
        grads: &HashMap<String, Tensor<f32>>,
        lr: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        for group in groups {
            if !group.trainable {
                continue;
            }
            let Some(g) = grads.get(&group.name) else { continue };
            let n = group.tensor.numel();
            let m = self.m.entry(group.name.clone()).or_insert_with(|| vec![0.0; n]);
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let mu = momentum as f32;
                    let lr = lr as f32;
                    for ((p, &gi), mi) in group.tensor.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *mi = mu * *mi + gi;
                        *p -= lr * *mi;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let v = self.v.entry(group.name.clone()).or_insert_with(|| vec![0.0; n]);
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (b1, b2) = (beta1 as f32, beta2 as f32);
                    let step = (lr * c2.sqrt() / c1) as f32;
                    let eps = (eps * c2.sqrt()) as f32;
                    for (((p, &gi), mi), vi) in group
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                        *p -= step * *mi / (vi.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut HashMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    let norm = names
        .iter()
        .map(|n| grads[*n].data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
