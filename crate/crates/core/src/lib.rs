//! Parameter-efficient transfer learning for transformer speaker verification.

pub mod backbone;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod numcore;
pub mod petl;
pub mod spkback;
pub mod trainer;

pub use error::{Error, Result};
