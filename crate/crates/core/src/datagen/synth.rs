use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::{hash_str, mix_seed};
use crate::numcore::Rng;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FIR_TAPS: usize = 16;
pub const PEAK: f32 = 0.9;
pub const MIN_DURATION_S: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Domain::A),
            "B" | "b" => Ok(Domain::B),
            other => Err(Error::Config(format!("unknown domain {other:?} (expected A or B)"))),
        }
    }

    fn tag(self) -> u64 {
        match self {
            Domain::A => 0xa,
            Domain::B => 0xb,
        }
    }
}

/// Per-speaker synthesis parameters: a vocal-tract-like FIR and a pitch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub fir: Vec<f64>,
    /// Fundamental frequency in Hz, within [80, 300].
    pub f0: f64,
    pub domain: Domain,
    /// One-pole coefficient shaping the domain-B excitation (0 for domain A).
    pub tilt: f64,
}

impl SpeakerProfile {
    pub fn derive(corpus_seed: u64, speaker_id: &str, domain: Domain) -> Self {
        let mut rng = Rng::new(mix_seed(mix_seed(corpus_seed, hash_str(speaker_id)), domain.tag()));
        let tau = rng.uniform_range(1.5, 6.0);
        let mut fir: Vec<f64> = (0..FIR_TAPS)
            .map(|k| rng.normal() * (-(k as f64) / tau).exp())
            .collect();
        let norm = fir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        fir.iter_mut().for_each(|v| *v /= norm);
        let f0 = rng.uniform_range(80.0, 300.0);
        let tilt = match domain {
            Domain::A => 0.0,
            Domain::B => rng.uniform_range(0.5, 0.9),
        };
        SpeakerProfile {
            speaker_id: speaker_id.to_string(),
            fir,
            f0,
            domain,
            tilt,
        }
    }

    fn seed(&self) -> u64 {
        self.fir
            .iter()
            .fold(hash_str(&self.speaker_id), |acc, v| mix_seed(acc, v.to_bits()))
    }
}

/// Synthesizes one utterance: a jittered excitation at the speaker's pitch
/// (pulse train in domain A, tilted sawtooth in domain B) under a random
/// syllable-rate gain envelope, filtered by the speaker FIR and
/// peak-normalized to 0.9.
pub fn synth_utterance(profile: &SpeakerProfile, utt_seed: u64, duration_s: f64, sample_rate: u32) -> Result<Vec<f32>> {
    if duration_s < MIN_DURATION_S || !duration_s.is_finite() {
        return Err(Error::Input(format!(
            "utterance duration {duration_s} s is below the {MIN_DURATION_S} s minimum"
        )));
    }
    let sr = sample_rate as f64;
    let n = (duration_s * sr).round() as usize;
    let mut rng = Rng::new(mix_seed(profile.seed(), utt_seed));

    let drift_rate = rng.uniform_range(0.5, 2.0);
    let drift_phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let env_rate = rng.uniform_range(2.0, 5.0);
    let env_phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let gain = rng.uniform_range(0.5, 1.0);
    let f0_scale = rng.uniform_range(0.95, 1.05);

    let pitch_at = |i: usize| {
        let t = i as f64 / sr;
        profile.f0 * f0_scale * (1.0 + 0.08 * (std::f64::consts::TAU * drift_rate * t + drift_phase).sin())
    };

    let mut excitation = vec![0.0f64; n];
    match profile.domain {
        Domain::A => {
            let mut next = 0.0f64;
            for (i, e) in excitation.iter_mut().enumerate() {
                if i as f64 >= next {
                    *e = 1.0;
                    let jitter = 1.0 + 0.02 * rng.normal();
                    next += sr / pitch_at(i) * jitter;
                }
                *e += 0.02 * rng.normal();
            }
        }
        Domain::B => {
            let mut phase = 0.0f64;
            let mut step_jitter = 1.0;
            let mut y = 0.0f64;
            for (i, e) in excitation.iter_mut().enumerate() {
                phase += pitch_at(i) / sr * step_jitter;
                if phase >= 1.0 {
                    phase -= 1.0;
                    step_jitter = 1.0 + 0.02 * rng.normal();
                }
                let saw = 2.0 * phase - 1.0 + 0.02 * rng.normal();
                y = saw + profile.tilt * y;
                *e = y;
            }
        }
    }

    for (i, e) in excitation.iter_mut().enumerate() {
        let t = i as f64 / sr;
        *e *= gain * (0.6 + 0.4 * (std::f64::consts::TAU * env_rate * t + env_phase).sin());
    }

    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            profile
                .fir
                .iter()
                .enumerate()
                .take(i + 1)
                .map(|(k, h)| h * excitation[i - k])
                .sum()
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let s = PEAK as f64 / peak;
        out.iter_mut().for_each(|v| *v *= s);
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_peak_normalized() {
        let p = SpeakerProfile::derive(7, "A000", Domain::A);
        let a = synth_utterance(&p, 3, 1.0, SAMPLE_RATE).unwrap();
        let b = synth_utterance(&p, 3, 1.0, SAMPLE_RATE).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16_000);
        let peak = a.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-6);
        assert!((80.0..=300.0).contains(&p.f0));
    }

    #[test]
    fn speakers_differ_for_same_seed() {
        for dom in [Domain::A, Domain::B] {
            let p1 = SpeakerProfile::derive(7, "S000", dom);
            let p2 = SpeakerProfile::derive(7, "S001", dom);
            let a = synth_utterance(&p1, 11, 0.5, SAMPLE_RATE).unwrap();
            let b = synth_utterance(&p2, 11, 0.5, SAMPLE_RATE).unwrap();
            let diff = a.iter().zip(&b).fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
            assert!(diff > 0.01);
        }
    }

    #[test]
    fn too_short_is_rejected() {
        let p = SpeakerProfile::derive(1, "A000", Domain::A);
        assert!(matches!(synth_utterance(&p, 0, 0.2, SAMPLE_RATE), Err(Error::Input(_))));
    }
}
