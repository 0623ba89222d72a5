use std::collections::BTreeSet;

use fss_nnkit::{Graph, Linear, Mat, ParamId, ParamStore, Var};
use ndarray::{array, Array1};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Clip, Query, Segment};
use crate::error::{FssError, Result};
use crate::eval::ScoredSegment;
use crate::fssnet::{fvs_map, vocabulary};
use crate::matcher::TextEncoder;
use crate::net::{ModelConfig, Trunk};
use crate::par::Exec;
use crate::search::ScoreMatrix;
use crate::train::Trainable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttnKwsConfig {
    /// Negative words sampled per positive pair.
    pub negatives: usize,
    /// Attention segmentation threshold as a fraction of the peak weight.
    pub attention_threshold: f64,
    /// Initial attention sharpness.
    pub alpha_init: f64,
}

impl Default for AttnKwsConfig {
    fn default() -> Self {
        Self {
            negatives: 5,
            attention_threshold: 0.5,
            alpha_init: 20.0,
        }
    }
}

/// Word-conditioned attention over frames followed by a presence classifier:
/// `s(t) = alpha cos^2(v_t, x) + theta`, `a = softmax(s)`,
/// `p = sigmoid(W sum_t a(t) v_t + b)`.
#[derive(Clone, Debug)]
pub struct AttnKws {
    pub store: ParamStore,
    pub config: AttnKwsConfig,
    embed_dim: usize,
    trunk: Trunk,
    vis: Linear,
    text: TextEncoder,
    alpha: ParamId,
    theta: ParamId,
    out: Linear,
    negative_pool: Vec<Query>,
}

/// Attention weights and presence probability for frame embeddings `v`
/// (`T x E`) and a text embedding `x`.
pub fn attn_kws_output(v: &Mat, x: &[f64], alpha: f64, theta: f64, w: &[f64], b: f64) -> (Vec<f64>, f64) {
    let x = Array1::from(x.to_vec());
    let xn = x.dot(&x).sqrt();
    let s: Vec<f64> = v
        .rows()
        .into_iter()
        .map(|r| {
            let c = r.dot(&x) / (r.dot(&r).sqrt() * xn);
            alpha * c * c + theta
        })
        .collect();
    let m = s.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let a: Vec<f64> = e.iter().map(|v| v / z).collect();
    let pooled = v.t().dot(&Array1::from(a.clone()));
    let logit = pooled.dot(&Array1::from(w.to_vec())) + b;
    (a, 1.0 / (1.0 + (-logit).exp()))
}

/// Thresholds attention at `tau * max`, merges consecutive frames at or
/// above it into segments, and scores each by its mean attention.
pub fn attention_to_segments(a: &[f64], tau: f64) -> Vec<(Segment, f64)> {
    let peak = a.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak <= 0.0 {
        return Vec::new();
    }
    let thr = tau * peak;
    let mut out = Vec::new();
    let mut start = None;
    for t in 0..=a.len() {
        let on = t < a.len() && a[t] >= thr;
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                let mean = a[s..t].iter().sum::<f64>() / (t - s) as f64;
                out.push((Segment::new(s, t).expect("non-empty run"), mean));
                start = None;
            }
            _ => {}
        }
    }
    out
}

impl AttnKws {
    pub fn new(
        feature_dim: usize,
        model: &ModelConfig,
        config: AttnKwsConfig,
        negative_pool: Vec<Query>,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.attention_threshold) {
            return Err(FssError::Config("attention_threshold must lie in [0, 1]".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "trunk", feature_dim, model, &mut rng);
        let vis = Linear::new(&mut store, "kws.vis", trunk.out_dim(), model.embed_dim, &mut rng);
        let text = TextEncoder::new(&mut store, "text", model, &mut rng);
        let alpha = store.add("kws.alpha", array![[config.alpha_init]]);
        let theta = store.add("kws.theta", array![[0.0]]);
        let out = Linear::new(&mut store, "kws.out", model.embed_dim, 1, &mut rng);
        Ok(Self {
            store,
            config,
            embed_dim: model.embed_dim,
            trunk,
            vis,
            text,
            alpha,
            theta,
            out,
            negative_pool,
        })
    }

    fn frames_embedding(&self, g: &mut Graph, frames: &Mat) -> Result<Var> {
        let f = self.trunk.forward(g, frames)?;
        Ok(self.vis.forward(g, f)?)
    }

    /// Presence logit node and attention node for one word.
    fn pair(&self, g: &mut Graph, v: Var, vn: Var, x: Var) -> Result<(Var, Var)> {
        let xt = g.transpose(x)?;
        let cos = g.matmul(vn, xt)?;
        let sq = g.square(cos)?;
        let alpha = g.param(self.alpha);
        let theta = g.param(self.theta);
        let s = g.mul_scalar(sq, alpha)?;
        let s = g.add_scalar(s, theta)?;
        let a = g.softmax(s)?;
        let at = g.transpose(a)?;
        let pooled = g.matmul(at, v)?;
        Ok((self.out.forward(g, pooled)?, a))
    }

    fn word_embeddings(&self, words: &[Query]) -> Result<Mat> {
        let mut g = Graph::new(&self.store);
        let mut out = Mat::zeros((words.len(), self.embed_dim));
        for (i, w) in words.iter().enumerate() {
            let e = self.text.encode(&mut g, w)?;
            out.row_mut(i).assign(&g.value(e).row(0));
        }
        Ok(out)
    }

    fn scalars(&self) -> (f64, f64, Vec<f64>, f64) {
        let s = &self.store;
        (
            s.get(self.alpha)[[0, 0]],
            s.get(self.theta)[[0, 0]],
            s.get(self.out.weight).column(0).to_vec(),
            s.get(self.out.bias)[[0, 0]],
        )
    }

    fn visual(&self, frames: &Mat) -> Result<Mat> {
        let mut g = Graph::new(&self.store);
        let v = self.frames_embedding(&mut g, frames)?;
        Ok(g.value(v).clone())
    }

    /// Attention over frames and presence probability for one word.
    pub fn attend(&self, frames: &Mat, word: &Query) -> Result<(Vec<f64>, f64)> {
        let v = self.visual(frames)?;
        let x = self.word_embeddings(std::slice::from_ref(word))?;
        let (alpha, theta, w, b) = self.scalars();
        Ok(attn_kws_output(&v, x.row(0).as_slice().expect("row"), alpha, theta, &w, b))
    }

    pub fn score_matrix(&self, clips: &[Clip], words: &[Query], exec: Exec) -> Result<ScoreMatrix> {
        let xm = self.word_embeddings(words)?;
        let (alpha, theta, w, b) = self.scalars();
        ScoreMatrix::from_rows(clips.iter().map(|c| c.id.clone()).collect(), words.to_vec(), exec, |i| {
            let v = self.visual(&clips[i].frames)?;
            Ok(xm
                .rows()
                .into_iter()
                .map(|x| attn_kws_output(&v, x.as_slice().expect("row"), alpha, theta, &w, b).1)
                .collect())
        })
    }

    /// Attention-derived segments: for each clip, the attention of its
    /// highest-scoring word in `words`, thresholded into segments.
    pub fn localize(&self, clips: &[Clip], words: &[Query], exec: Exec) -> Result<Vec<ScoredSegment>> {
        let xm = self.word_embeddings(words)?;
        let (alpha, theta, w, b) = self.scalars();
        let per_clip = exec.try_map(clips, |c| -> Result<Vec<ScoredSegment>> {
            let v = self.visual(&c.frames)?;
            let mut best: Option<(f64, Vec<f64>)> = None;
            for x in xm.rows() {
                let (a, p) = attn_kws_output(&v, x.as_slice().expect("row"), alpha, theta, &w, b);
                if best.as_ref().is_none_or(|(bp, _)| p > *bp) {
                    best = Some((p, a));
                }
            }
            Ok(best
                .map(|(_, a)| attention_to_segments(&a, self.config.attention_threshold))
                .unwrap_or_default()
                .into_iter()
                .map(|(segment, score)| ScoredSegment {
                    clip: c.id.clone(),
                    segment,
                    score,
                })
                .collect())
        })?;
        Ok(per_clip.into_iter().flatten().collect())
    }

    fn sample_negatives<R: Rng + ?Sized>(&self, exclude: &BTreeSet<&Query>, n: usize, rng: &mut R) -> Vec<Query> {
        let mut out = Vec::with_capacity(n);
        if self.negative_pool.iter().all(|w| exclude.contains(w)) {
            return out;
        }
        while out.len() < n {
            let w = self.negative_pool.choose(rng).expect("non-empty pool");
            if !exclude.contains(w) {
                out.push(w.clone());
            }
        }
        out
    }
}

impl Trainable for AttnKws {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&Clip], rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut logits = Vec::new();
        let mut targets = Vec::new();
        for clip in batch {
            let present: BTreeSet<&Query> = clip.ground_truth.iter().map(|g| &g.text).collect();
            let n_neg = self.config.negatives * present.len().max(1);
            let negatives = self.sample_negatives(&present, n_neg, rng);
            let v = self.frames_embedding(g, &clip.frames)?;
            let vn = g.normalize_rows(v)?;
            let items = present.iter().map(|w| (*w, 1.0)).chain(negatives.iter().map(|w| (w, 0.0)));
            for (w, y) in items {
                let x = self.text.encode(g, w)?;
                let (logit, _) = self.pair(g, v, vn, x)?;
                logits.push(logit);
                targets.push(y);
            }
        }
        if logits.is_empty() {
            return Ok(g.scalar_const(0.0)?);
        }
        let n = logits.len();
        let l = g.concat_rows(&logits)?;
        let t = Mat::from_shape_vec((n, 1), targets).expect("n targets");
        let w = Mat::from_elem((n, 1), 1.0 / n as f64);
        Ok(g.bce_with_logits(l, &t, &w)?)
    }

    fn validation_metric(&self, dev: &[Clip]) -> Result<f64> {
        let vocab = vocabulary(dev);
        if vocab.is_empty() {
            return Ok(0.0);
        }
        fvs_map(&self.score_matrix(dev, &vocab, Exec::default())?, dev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_frame_hand_value() {
        // cos = (1, 0), s = (1, 0), a = (e, 1) / (e + 1), pooled = a,
        // W = (1, 1): logit = 1.
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        let (a, p) = attn_kws_output(&v, &[1.0, 0.0], 1.0, 0.0, &[1.0, 1.0], 0.0);
        let e = std::f64::consts::E;
        assert!((a[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores_give_uniform_attention() {
        let v = Mat::from_shape_fn((7, 3), |(t, d)| if d == 0 { 1.0 + t as f64 } else { 0.0 });
        let (a, _) = attn_kws_output(&v, &[1.0, 0.0, 0.0], 2.0, 0.3, &[0.1, 0.2, 0.3], 0.0);
        for x in &a {
            assert!((x - 1.0 / 7.0).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_segments() {
        assert_eq!(
            attention_to_segments(&[0.0, 0.0, 0.3, 0.3, 0.3, 0.0, 0.1], 0.5),
            vec![(Segment::new(2, 5).unwrap(), 0.3)]
        );
        let flat = attention_to_segments(&[0.25; 4], 0.5);
        assert_eq!(flat, vec![(Segment::new(0, 4).unwrap(), 0.25)]);
        let two = attention_to_segments(&[0.3, 0.3, 0.05, 0.1, 0.25, 0.0], 0.5);
        let segs: Vec<Segment> = two.iter().map(|s| s.0).collect();
        assert_eq!(segs, vec![Segment::new(0, 2).unwrap(), Segment::new(4, 5).unwrap()]);
    }

    #[test]
    fn graph_forward_matches_closed_form() {
        let model = ModelConfig {
            trunk_hidden: 4,
            char_dim: 3,
            text_hidden: 4,
            embed_dim: 5,
            ..ModelConfig::default()
        };
        let words = vec![Query::new("AB").unwrap(), Query::new("C").unwrap()];
        let m = AttnKws::new(3, &model, AttnKwsConfig::default(), words.clone(), 4).unwrap();
        let frames = Mat::from_shape_fn((9, 3), |(t, d)| ((t * 5 + d) % 7) as f64 / 3.0 - 1.0);
        let mut g = Graph::new(&m.store);
        let v = m.frames_embedding(&mut g, &frames).unwrap();
        let vn = g.normalize_rows(v).unwrap();
        let x = m.text.encode(&mut g, &words[0]).unwrap();
        let (logit, a) = m.pair(&mut g, v, vn, x).unwrap();
        let (a2, p2) = m.attend(&frames, &words[0]).unwrap();
        let p = 1.0 / (1.0 + (-g.scalar(logit)).exp());
        assert!((p - p2).abs() < 1e-12);
        for (x, y) in g.value(a).iter().zip(&a2) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
