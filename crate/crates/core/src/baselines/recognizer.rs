use fss_nnkit::{Graph, Linear, Mat, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ctc::{beam_search, ctc_loss, log_softmax_rows, recognizer_score, split_words, transcript};
use crate::domain::{Alphabet, Clip, Query};
use crate::error::{FssError, Result};
use crate::fssnet::{fvs_map, vocabulary};
use crate::net::{ModelConfig, Trunk};
use crate::par::Exec;
use crate::search::ScoreMatrix;
use crate::train::Trainable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    pub beam_width: usize,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self { beam_width: 10 }
    }
}

/// Frame-level CTC recognizer over the alphabet plus `<x>` and blank.
#[derive(Clone, Debug)]
pub struct Recognizer {
    pub store: ParamStore,
    pub config: RecognizerConfig,
    trunk: Trunk,
    out: Linear,
}

impl Recognizer {
    pub fn new(feature_dim: usize, model: &ModelConfig, config: RecognizerConfig, seed: u64) -> Result<Self> {
        if config.beam_width == 0 {
            return Err(FssError::Config("beam_width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "trunk", feature_dim, model, &mut rng);
        let out = Linear::new(&mut store, "ctc.out", trunk.out_dim(), Alphabet::N_LABELS, &mut rng);
        Ok(Self {
            store,
            config,
            trunk,
            out,
        })
    }

    fn logits(&self, g: &mut Graph, frames: &Mat) -> Result<Var> {
        let f = self.trunk.forward(g, frames)?;
        Ok(self.out.forward(g, f)?)
    }

    /// Per-frame label distribution (`T x N_LABELS`, rows sum to 1).
    pub fn posteriors(&self, frames: &Mat) -> Result<Mat> {
        let mut g = Graph::new(&self.store);
        let l = self.logits(&mut g, frames)?;
        Ok(log_softmax_rows(g.value(l)).mapv(f64::exp))
    }

    /// Words of each beam hypothesis, best hypothesis first.
    pub fn decode(&self, frames: &Mat) -> Result<Vec<Vec<String>>> {
        let mut g = Graph::new(&self.store);
        let l = self.logits(&mut g, frames)?;
        let lp = log_softmax_rows(g.value(l));
        Ok(beam_search(&lp, self.config.beam_width, Alphabet::BLANK)
            .into_iter()
            .map(|h| split_words(&h.labels))
            .collect())
    }

    pub fn score_matrix(&self, clips: &[Clip], words: &[Query], exec: Exec) -> Result<ScoreMatrix> {
        let decoded = exec.try_map(clips, |c| self.decode(&c.frames))?;
        ScoreMatrix::from_rows(
            clips.iter().map(|c| c.id.clone()).collect(),
            words.to_vec(),
            exec,
            |i| words.iter().map(|w| recognizer_score(&decoded[i], w.as_str())).collect(),
        )
    }
}

impl Trainable for Recognizer {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&Clip], _: &mut ChaCha8Rng) -> Result<Var> {
        let mut total: Option<Var> = None;
        for clip in batch {
            let l = self.logits(g, &clip.frames)?;
            let loss = ctc_loss(g, l, &transcript(clip), Alphabet::BLANK)?;
            total = Some(match total {
                None => loss,
                Some(t) => g.add(t, loss)?,
            });
        }
        match total {
            Some(t) => Ok(g.scale(t, 1.0 / batch.len() as f64)?),
            None => Ok(g.scalar_const(0.0)?),
        }
    }

    fn validation_metric(&self, dev: &[Clip]) -> Result<f64> {
        let vocab = vocabulary(dev);
        if vocab.is_empty() {
            return Ok(0.0);
        }
        fvs_map(&self.score_matrix(dev, &vocab, Exec::default())?, dev)
    }
}
