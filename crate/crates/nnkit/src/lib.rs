//! Small reverse-mode differentiation kit for sequence models.
//!
//! Dense `f64` matrices, a recording [`Graph`], fused recurrent and
//! convolutional building blocks, optimizers, and a finite-difference
//! checker used to validate every differentiable op.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod layers;
pub mod optim;
pub mod temporal;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Mat, ParamId, ParamStore, Var};
pub use layers::{cosine_distance, BiGru, BiGruOutput, Conv1d, Embedding, GruLayer, Linear};
pub use optim::{clip_global_norm, Adam, Optimizer, PlateauSchedule, Sgd};
pub use temporal::{TemporalChain, TemporalLayer};
