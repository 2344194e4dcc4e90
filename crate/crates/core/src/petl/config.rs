use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::numcore::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PetlMode {
    /// Every backbone parameter is trained.
    Full,
    /// Backbone frozen, nothing inserted.
    Fixed,
    /// Two serial bottleneck adapters per block.
    Bottleneck,
    /// Learnable key/value prefixes in every attention head.
    Prefix,
    /// Parallel adapter around the feed-forward sublayer plus prefixes.
    Mam,
}

impl PetlMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(PetlMode::Full),
            "fixed" => Ok(PetlMode::Fixed),
            "bottleneck" => Ok(PetlMode::Bottleneck),
            "prefix" => Ok(PetlMode::Prefix),
            "mam" => Ok(PetlMode::Mam),
            other => Err(Error::Config(format!("unknown PETL mode {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PetlMode::Full => "full",
            PetlMode::Fixed => "fixed",
            PetlMode::Bottleneck => "bottleneck",
            PetlMode::Prefix => "prefix",
            PetlMode::Mam => "mam",
        }
    }

    /// Whether the backbone's own parameters stay frozen.
    pub fn freezes_backbone(self) -> bool {
        self != PetlMode::Full
    }
}

/// Where a serial adapter sits relative to its sublayer's residual addition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterPlacement {
    /// `h = adapter(h + sublayer(ln(h)))`
    #[default]
    AfterResidual,
    /// `h = h + adapter(sublayer(ln(h)))`
    BeforeResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PetlConfig {
    pub mode: PetlMode,
    #[serde(default = "default_bottleneck")]
    pub d_bottleneck: usize,
    /// Prefix length `l`.
    #[serde(default, alias = "l")]
    pub prefix_len: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub placement: AdapterPlacement,
}

fn default_bottleneck() -> usize {
    64
}

impl PetlConfig {
    pub fn full() -> Self {
        Self::with_mode(PetlMode::Full)
    }

    pub fn fixed() -> Self {
        Self::with_mode(PetlMode::Fixed)
    }

    pub fn bottleneck(d_bottleneck: usize) -> Self {
        PetlConfig {
            d_bottleneck,
            ..Self::with_mode(PetlMode::Bottleneck)
        }
    }

    pub fn prefix(prefix_len: usize) -> Self {
        PetlConfig {
            prefix_len,
            ..Self::with_mode(PetlMode::Prefix)
        }
    }

    pub fn mam(d_bottleneck: usize, prefix_len: usize) -> Self {
        PetlConfig {
            d_bottleneck,
            prefix_len,
            ..Self::with_mode(PetlMode::Mam)
        }
    }

    fn with_mode(mode: PetlMode) -> Self {
        PetlConfig {
            mode,
            d_bottleneck: default_bottleneck(),
            prefix_len: 0,
            activation: Activation::Gelu,
            placement: AdapterPlacement::AfterResidual,
        }
    }

    pub fn hooks(&self) -> BlockHooks {
        BlockHooks {
            serial_adapters: self.mode == PetlMode::Bottleneck,
            parallel_adapter: self.mode == PetlMode::Mam,
            prefix: matches!(self.mode, PetlMode::Prefix | PetlMode::Mam),
            activation: self.activation,
            placement: self.placement,
        }
    }

    pub fn validate(&self, backbone: &BackboneConfig) -> Result<()> {
        backbone.validate()?;
        if matches!(self.mode, PetlMode::Bottleneck | PetlMode::Mam) && self.d_bottleneck == 0 {
            return Err(Error::Config("d_bottleneck must be at least 1".into()));
        }
        Ok(())
    }

    /// Short human label, e.g. `mam(d=256,l=40)`.
    pub fn label(&self) -> String {
        match self.mode {
            PetlMode::Full | PetlMode::Fixed => self.mode.name().to_string(),
            PetlMode::Bottleneck => format!("bottleneck(d={})", self.d_bottleneck),
            PetlMode::Prefix => format!("prefix(l={})", self.prefix_len),
            PetlMode::Mam => format!("mam(d={},l={})", self.d_bottleneck, self.prefix_len),
        }
    }
}

/// Which PETL submodules a transformer block consults during its forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockHooks {
    pub serial_adapters: bool,
    pub parallel_adapter: bool,
    pub prefix: bool,
    pub activation: Activation,
    pub placement: AdapterPlacement,
}

impl BlockHooks {
    pub fn none() -> Self {
        Self::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_accepts_l_alias() {
        let cfg: PetlConfig = serde_json::from_str(r#"{"mode":"mam","d_bottleneck":256,"l":40}"#).unwrap();
        assert_eq!(cfg, PetlConfig::mam(256, 40));
        let back: PetlConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hooks_by_mode() {
        assert!(PetlConfig::bottleneck(8).hooks().serial_adapters);
        let mam = PetlConfig::mam(8, 2).hooks();
        assert!(mam.parallel_adapter && mam.prefix && !mam.serial_adapters);
        assert_eq!(PetlConfig::fixed().hooks(), BlockHooks::none());
    }
}
