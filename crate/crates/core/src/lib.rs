//! Fingerspelling search over frame-feature sequences: temporal proposal
//! detection, visual-text embedding matching, comparison systems and
//! retrieval evaluation.

pub mod baselines;
pub mod config;
pub mod detector;
pub mod domain;
pub mod error;
pub mod eval;
pub mod fssnet;
pub mod matcher;
pub mod net;
pub mod par;
pub mod search;
pub mod synth;
pub mod system;
pub mod train;

pub use error::{FssError, Result};
