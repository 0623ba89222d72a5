//! Network sizes and the shared per-frame feature trunk.

use fss_nnkit::{BiGru, Graph, Mat, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub trunk_hidden: usize,
    pub trunk_layers: usize,
    pub det_channels: usize,
    pub fs_hidden: usize,
    pub fs_layers: usize,
    pub char_dim: usize,
    pub text_hidden: usize,
    pub text_layers: usize,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            trunk_hidden: 32,
            trunk_layers: 1,
            det_channels: 32,
            fs_hidden: 32,
            fs_layers: 1,
            char_dim: 16,
            text_hidden: 32,
            text_layers: 1,
            embed_dim: 32,
        }
    }
}

/// Bidirectional recurrent encoder over the clip's frame features.
#[derive(Clone, Debug)]
pub struct Trunk {
    rnn: BiGru,
}

impl Trunk {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            rnn: BiGru::new(store, name, in_dim, cfg.trunk_hidden, cfg.trunk_layers, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.rnn.out_dim()
    }

    /// `T x D` frames to `T x 2H` features.
    pub fn forward(&self, g: &mut Graph, frames: &Mat) -> Result<Var> {
        let x = g.constant(frames.clone())?;
        Ok(self.rnn.forward(g, x)?.seq)
    }
}
