//! Dense tensors, forward kernels, a recording graph with exact reverse-mode
//! gradients, seeded randomness and the checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{gelu, layer_norm, linear, relu, softmax_rows, Activation};
pub use params::{Init, ParamGroup, ParamSpec, ParamStore};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
