//! Parameter-efficient transfer learning: bottleneck adapters, prefix tuning
//! and the mix-and-match combination, plus freezing and parameter accounting.

pub mod adapter;
pub mod config;
pub mod count;
pub mod instrument;
pub mod mam;
pub mod prefix;

pub use adapter::{bottleneck_forward, BottleneckAdapterParams};
pub use config::{AdapterPlacement, BlockHooks, PetlConfig, PetlMode};
pub use count::{count_params, count_params_with, millions, GroupCount, ParamReport};
pub use instrument::{adapter_count, apply_petl, layout};
pub use mam::mam_forward;
pub use prefix::{prefix_attention, PrefixParams};
