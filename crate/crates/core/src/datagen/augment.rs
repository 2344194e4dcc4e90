use serde::{Deserialize, Serialize};

use crate::numcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Chance that an utterance is augmented at all.
    pub probability: f64,
    pub snr_db: (f64, f64),
    pub max_taps: usize,
    pub decay: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probability: 0.6,
            snr_db: (5.0, 20.0),
            max_taps: 64,
            decay: (0.3, 0.9),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            probability: 0.0,
            ..Self::default()
        }
    }
}

fn power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// Unit-free noise sequence; pink noise uses Kellet's three-pole filter.
pub fn noise(n: usize, kind: NoiseKind, rng: &mut Rng) -> Vec<f32> {
    match kind {
        NoiseKind::White => (0..n).map(|_| rng.normal() as f32).collect(),
        NoiseKind::Pink => {
            let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
            (0..n)
                .map(|_| {
                    let w = rng.normal();
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    (b0 + b1 + b2 + w * 0.1848) as f32
                })
                .collect()
        }
    }
}

/// Adds noise scaled so that `10 log10(P_signal / P_noise) = snr_db` exactly
/// over the whole waveform.
pub fn add_noise(x: &[f32], snr_db: f64, kind: NoiseKind, rng: &mut Rng) -> Vec<f32> {
    let nz = noise(x.len(), kind, rng);
    let (ps, pn) = (power(x), power(&nz));
    if ps == 0.0 || pn == 0.0 {
        return x.to_vec();
    }
    let scale = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt() as f32;
    x.iter().zip(&nz).map(|(&s, &n)| s + scale * n).collect()
}

/// Random exponentially decaying impulse response `h[k] = decay^k * g_k`, `h[0] = 1`.
pub fn reverb_fir(taps: usize, decay: f64, rng: &mut Rng) -> Vec<f64> {
    (0..taps.max(1))
        .map(|k| if k == 0 { 1.0 } else { decay.powi(k as i32) * rng.normal() })
        .collect()
}

pub fn convolve(x: &[f32], h: &[f64]) -> Vec<f32> {
    (0..x.len())
        .map(|i| {
            h.iter()
                .enumerate()
                .take(i + 1)
                .map(|(k, &hk)| hk * x[i - k] as f64)
                .sum::<f64>() as f32
        })
        .collect()
}

/// Noise then reverberation, each drawn from `cfg`, applied with probability
/// `cfg.probability`. The result is rescaled if its peak exceeds 1.
pub fn augment_with(x: &[f32], rng: &mut Rng, cfg: &AugmentConfig) -> Vec<f32> {
    if !rng.bernoulli(cfg.probability) {
        return x.to_vec();
    }
    let snr = rng.uniform_range(cfg.snr_db.0, cfg.snr_db.1);
    let kind = if rng.bernoulli(0.5) { NoiseKind::White } else { NoiseKind::Pink };
    let noisy = add_noise(x, snr, kind, rng);
    let taps = 1 + rng.below(cfg.max_taps.max(1));
    let decay = rng.uniform_range(cfg.decay.0, cfg.decay.1);
    let h = reverb_fir(taps, decay, rng);
    let mut y = convolve(&noisy, &h);
    let peak = y.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        y.iter_mut().for_each(|v| *v /= peak);
    }
    y
}

pub fn augment(x: &[f32], rng: &mut Rng) -> Vec<f32> {
    augment_with(x, rng, &AugmentConfig::default())
}
