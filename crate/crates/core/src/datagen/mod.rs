//! Deterministic synthetic speaker corpora with a controllable domain shift.

pub mod augment;
pub mod corpus;
pub mod synth;

pub use augment::{augment, augment_with, AugmentConfig, NoiseKind};
pub use corpus::{desk_corpora, make_corpus, make_trials, CorpusSpec, Manifest, ManifestRow, Trial, TrialList};
pub use synth::{synth_utterance, Domain, SpeakerProfile, SAMPLE_RATE};
