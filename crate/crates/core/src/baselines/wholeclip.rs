use std::collections::BTreeSet;

use fss_nnkit::{Graph, Linear, Mat, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{Clip, Query};
use crate::error::Result;
use crate::fssnet::{fvs_map, vocabulary, PairBatch};
use crate::matcher::{triplet_loss_with, MatchConfig, TextEncoder};
use crate::net::{ModelConfig, Trunk};
use crate::par::Exec;
use crate::search::ScoreMatrix;
use crate::train::Trainable;

/// One embedding per clip (time-averaged trunk features), matched to words
/// with the same two-sided triplet objective.
#[derive(Clone, Debug)]
pub struct WholeClip {
    pub store: ParamStore,
    pub matching: MatchConfig,
    embed_dim: usize,
    trunk: Trunk,
    proj: Linear,
    text: TextEncoder,
}

impl WholeClip {
    pub fn new(feature_dim: usize, model: &ModelConfig, matching: MatchConfig, seed: u64) -> Result<Self> {
        matching.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "trunk", feature_dim, model, &mut rng);
        let proj = Linear::new(&mut store, "clip.proj", trunk.out_dim(), model.embed_dim, &mut rng);
        let text = TextEncoder::new(&mut store, "text", model, &mut rng);
        Ok(Self {
            store,
            matching,
            embed_dim: model.embed_dim,
            trunk,
            proj,
            text,
        })
    }

    fn embed(&self, g: &mut Graph, frames: &Mat) -> Result<Var> {
        let f = self.trunk.forward(g, frames)?;
        let s = g.sum_rows(f)?;
        let m = g.scale(s, 1.0 / frames.nrows() as f64)?;
        let e = self.proj.forward(g, m)?;
        Ok(g.normalize_rows(e)?)
    }

    pub fn clip_embedding(&self, frames: &Mat) -> Result<Mat> {
        let mut g = Graph::new(&self.store);
        let e = self.embed(&mut g, frames)?;
        Ok(g.value(e).clone())
    }

    pub fn score_matrix(&self, clips: &[Clip], words: &[Query], exec: Exec) -> Result<ScoreMatrix> {
        let mut wm = Mat::zeros((words.len(), self.embed_dim));
        {
            let mut g = Graph::new(&self.store);
            for (i, w) in words.iter().enumerate() {
                let e = self.text.encode(&mut g, w)?;
                wm.row_mut(i).assign(&g.value(e).row(0));
            }
        }
        let emb = exec.try_map(clips, |c| self.clip_embedding(&c.frames))?;
        ScoreMatrix::from_rows(
            clips.iter().map(|c| c.id.clone()).collect(),
            words.to_vec(),
            exec,
            |i| Ok(emb[i].dot(&wm.t()).row(0).iter().map(|&s| s.max(0.0)).collect()),
        )
    }
}

impl Trainable for WholeClip {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&Clip], _: &mut ChaCha8Rng) -> Result<Var> {
        let mut pairs = PairBatch::new();
        let mut row_clip = Vec::new();
        let mut clip_words: Vec<BTreeSet<usize>> = Vec::new();
        for clip in batch {
            let words: BTreeSet<&Query> = clip.ground_truth.iter().map(|g| &g.text).collect();
            if words.is_empty() {
                continue;
            }
            let e = self.embed(g, &clip.frames)?;
            let ids: BTreeSet<usize> = words.iter().map(|w| pairs.word_index(w)).collect();
            for w in words {
                pairs.push(e, w);
                row_clip.push(clip_words.len());
            }
            clip_words.push(ids);
        }
        let Some(dist) = pairs.distances(g, &self.text)? else {
            return Ok(g.scalar_const(0.0)?);
        };
        let related = |i: usize, j: usize| clip_words[row_clip[i]].contains(&j);
        let l = triplet_loss_with(g, dist, &pairs.labels, &related, &self.matching)?;
        Ok(g.scale(l, 1.0 / batch.len() as f64)?)
    }

    fn validation_metric(&self, dev: &[Clip]) -> Result<f64> {
        let vocab = vocabulary(dev);
        if vocab.is_empty() {
            return Ok(0.0);
        }
        fvs_map(&self.score_matrix(dev, &vocab, Exec::default())?, dev)
    }
}
