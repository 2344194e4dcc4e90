//! Speaker back-end: attentive pooling over all encoder layers and the
//! angular-margin training head.

pub mod aam;
pub mod mhfa;
pub mod score;

pub use aam::{aam_graph, aam_loss, AamHead};
pub use mhfa::{layout, mhfa_graph, mhfa_pool, MhfaConfig, MhfaParams, MhfaVars};
pub use score::{cosine_score, read_embeddings, write_embeddings, EmbeddingRecord};
