//! Two-step regression over long documents: frozen per-window embeddings are
//! sequenced through an attention-pooled GRU head, with baselines, a
//! cross-validation harness, attention-based interpretability and a
//! planted-signal synthetic data generator.

pub mod baselines;
pub mod checkpoint;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod interpret;
pub mod manifest;
pub mod optim;
pub mod seq_head;
pub mod synth;
pub mod traits;
pub mod windowing;

pub use error::{Error, Result};
pub use traits::{ScoreScale, TraitId, TraitScores};
