//! Training loops: standard fine-tuning, large-margin continuation and the
//! two-stage intermediate-corpus pipeline.

pub mod config;
pub mod optim;
pub mod system;
pub mod train;

pub use config::{LmFtConfig, ModelConfig, OptimizerKind, TrainConfig, LARGE_SCALE_BATCH_SIZE};
pub use optim::Optimizer;
pub use system::{CheckpointMeta, SpeakerSystem};
pub use train::{lm_finetune, train, two_stage, MetricRecord, TrainOutcome, TwoStageOutcome};
