//! Convolutional frontend and pre-norm transformer encoder.

pub mod config;
pub mod model;

pub use config::{BackboneConfig, ConvLayer};
pub use model::{block_prefix, layout, BackboneModel, LayerOutputs};
