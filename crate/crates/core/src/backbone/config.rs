use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Activation;

/// One strided 1-D convolution of the waveform frontend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvLayer {
            channels,
            kernel,
            stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_layers: usize,
    pub d_hidden: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    /// Convolutions applied to the raw waveform; the last one must output
    /// `d_hidden` channels.
    pub frontend: Vec<ConvLayer>,
    #[serde(default)]
    pub activation: Activation,
}

impl BackboneConfig {
    /// 12 blocks of width 768, conv stack with total stride 320.
    pub fn base() -> Self {
        BackboneConfig {
            n_layers: 12,
            d_hidden: 768,
            n_heads: 12,
            d_ffn: 3072,
            frontend: wide_frontend(768),
            activation: Activation::Gelu,
        }
    }

    /// 24 blocks of width 1024.
    pub fn large() -> Self {
        BackboneConfig {
            n_layers: 24,
            d_hidden: 1024,
            n_heads: 16,
            d_ffn: 4096,
            frontend: wide_frontend(1024),
            activation: Activation::Gelu,
        }
    }

    /// CPU-sized model: 4 blocks of width 64, frontend strides (4, 4, 2).
    pub fn desk() -> Self {
        BackboneConfig {
            n_layers: 4,
            d_hidden: 64,
            n_heads: 4,
            d_ffn: 256,
            frontend: vec![
                ConvLayer::new(32, 4, 4),
                ConvLayer::new(32, 4, 4),
                ConvLayer::new(64, 2, 2),
            ],
            activation: Activation::Gelu,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(Self::base()),
            "large" => Ok(Self::large()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown backbone preset {other:?} (expected base, large or desk)"
            ))),
        }
    }

    pub fn preset_names() -> [&'static str; 3] {
        ["base", "large", "desk"]
    }

    /// Per-head projection width.
    pub fn d_proj(&self) -> usize {
        self.d_hidden / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_hidden == 0 || self.n_heads == 0 || self.d_ffn == 0 {
            return Err(Error::Config("backbone dimensions must be positive".into()));
        }
        if self.d_hidden % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_hidden {} is not divisible by n_heads {}",
                self.d_hidden, self.n_heads
            )));
        }
        let last = self
            .frontend
            .last()
            .ok_or_else(|| Error::Config("frontend needs at least one conv layer".into()))?;
        if last.channels != self.d_hidden {
            return Err(Error::Config(format!(
                "last frontend layer outputs {} channels, expected d_hidden = {}",
                last.channels, self.d_hidden
            )));
        }
        if self
            .frontend
            .iter()
            .any(|c| c.channels == 0 || c.kernel == 0 || c.stride == 0)
        {
            return Err(Error::Config("frontend layers need positive channels/kernel/stride".into()));
        }
        Ok(())
    }

    /// Number of frames produced from `samples` input samples, applying
    /// `floor((n - kernel) / stride) + 1` per layer. `None` if too short.
    pub fn frames_for(&self, samples: usize) -> Option<usize> {
        self.frontend.iter().try_fold(samples, |n, c| {
            (n >= c.kernel).then(|| (n - c.kernel) / c.stride + 1)
        })
    }

    /// Shortest waveform yielding at least one frame.
    pub fn min_samples(&self) -> usize {
        self.frontend
            .iter()
            .rev()
            .fold(1, |need, c| (need - 1) * c.stride + c.kernel)
    }

    pub fn hop(&self) -> usize {
        self.frontend.iter().map(|c| c.stride).product()
    }
}

/// Seven conv layers (kernels 10,3,3,3,3,2,2; strides 5,2,2,2,2,2,2), all `channels` wide.
fn wide_frontend(channels: usize) -> Vec<ConvLayer> {
    let mut layers = vec![ConvLayer::new(channels, 10, 5)];
    layers.extend(std::iter::repeat_n(ConvLayer::new(channels, 3, 2), 4));
    layers.extend(std::iter::repeat_n(ConvLayer::new(channels, 2, 2), 2));
    layers
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in BackboneConfig::preset_names() {
            BackboneConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(BackboneConfig::preset("huge").is_err());
    }

    #[test]
    fn desk_stride_arithmetic() {
        let cfg = BackboneConfig::desk();
        assert_eq!(cfg.frames_for(16_000), Some(500));
        assert_eq!(cfg.hop(), 32);
        assert_eq!(cfg.min_samples(), 32);
        assert_eq!(cfg.frames_for(31), None);
        for n in [1000usize, 4321, 16_000, 48_000] {
            let t1 = cfg.frames_for(n).unwrap();
            let t2 = cfg.frames_for(2 * n).unwrap();
            assert!(t2.abs_diff(2 * t1) <= cfg.frontend.len());
        }
    }

    #[test]
    fn base_hop_is_320() {
        let cfg = BackboneConfig::base();
        assert_eq!(cfg.hop(), 320);
        assert_eq!(cfg.d_proj(), 64);
        assert_eq!(cfg.min_samples(), 400);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = BackboneConfig::desk();
        cfg.n_heads = 5;
        assert!(cfg.validate().is_err());
    }
}
