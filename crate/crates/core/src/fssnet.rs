//! The joint proposal-and-matching network, its ablation variants, and the
//! two-stage external-detector pipeline that shares its matcher.

use std::collections::BTreeMap;

use fss_nnkit::{Graph, Mat, ParamStore, Var};
use ndarray::concatenate;
use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    clip_detection_loss, proposals_from_outputs, Detector, DetectorConfig, DetectorHead, Proposal,
};
use crate::domain::{Clip, LabeledSegment, Query, Segment};
use crate::error::{FssError, Result};
use crate::eval::{build_judgments, evaluate};
use crate::matcher::{distance_matrix, filter_proposals, triplet_loss, FilterConfig, MatchConfig};
use crate::matcher::{SegmentEncoder, TextEncoder};
use crate::net::{ModelConfig, Trunk};
use crate::par::Exec;
use crate::search::{Direction, EncodedProposals, ScoreMatrix};
use crate::train::Trainable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// The jointly trained detection head.
    Learned,
    /// Every window of the configured lengths, with `p_det = 1`.
    SlidingWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FssNetConfig {
    pub proposals: ProposalKind,
    /// Add sampled near-ground-truth proposals to the matching positives.
    pub sampled_positives: bool,
    /// Train the detection head on a gradient-free copy of the trunk
    /// features, so only the matching loss reaches the trunk.
    pub detach_detector: bool,
    pub window_lengths: Vec<usize>,
    pub window_stride: usize,
}

impl Default for FssNetConfig {
    fn default() -> Self {
        Self {
            proposals: ProposalKind::Learned,
            sampled_positives: true,
            detach_detector: false,
            window_lengths: vec![6, 10, 16, 24, 36, 54],
            window_stride: 4,
        }
    }
}

impl FssNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proposals == ProposalKind::SlidingWindow
            && (self.window_lengths.is_empty() || self.window_lengths.contains(&0) || self.window_stride == 0)
        {
            return Err(FssError::Config("sliding windows need positive lengths and stride".into()));
        }
        Ok(())
    }
}

/// Windows of each length at every `stride`-th start that fit in `frames`.
pub fn sliding_windows(frames: usize, lengths: &[usize], stride: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    for &len in lengths {
        let mut s = 0;
        while s + len <= frames {
            out.push(Segment::new(s, s + len).expect("non-empty window"));
            s += stride;
        }
    }
    out.sort_unstable();
    out
}

/// Hyperparameters shared by the matcher-based systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatcherSettings {
    pub model: ModelConfig,
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    pub matching: MatchConfig,
    pub beta: f64,
    pub fssnet: FssNetConfig,
}

impl MatcherSettings {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.filter.validate()?;
        self.matching.validate()?;
        self.fssnet.validate()?;
        if !(self.beta >= 0.0) {
            return Err(FssError::Config("beta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Source {
    Learned(DetectorHead),
    Sliding,
    /// Frozen detector and its cached training-clip proposals.
    External(Box<Detector>, BTreeMap<String, Vec<Segment>>),
}

/// Shared trunk, proposal source, segment encoder and text encoder.
#[derive(Clone, Debug)]
pub struct FssNet {
    pub store: ParamStore,
    pub settings: MatcherSettings,
    trunk: Trunk,
    fs: SegmentEncoder,
    text: TextEncoder,
    source: Source,
}

impl FssNet {
    pub fn new(feature_dim: usize, settings: MatcherSettings, seed: u64) -> Result<Self> {
        Self::build(feature_dim, settings, seed, false)
    }

    fn build(feature_dim: usize, settings: MatcherSettings, seed: u64, external: bool) -> Result<Self> {
        settings.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = &settings.model;
        let trunk = Trunk::new(&mut store, "trunk", feature_dim, m, &mut rng);
        let source = match (external, settings.fssnet.proposals) {
            // Replaced by the caller.
            (true, _) => Source::Sliding,
            (false, ProposalKind::SlidingWindow) => Source::Sliding,
            (false, ProposalKind::Learned) => Source::Learned(DetectorHead::new(
                &mut store,
                "det",
                trunk.out_dim(),
                m.det_channels,
                settings.detector.grid.n_scales(),
                &mut rng,
            )),
        };
        let fs = SegmentEncoder::new(&mut store, "fs", trunk.out_dim(), m, &mut rng);
        let text = TextEncoder::new(&mut store, "text", m, &mut rng);
        Ok(Self {
            store,
            settings,
            trunk,
            fs,
            text,
            source,
        })
    }

    /// A matcher that takes proposals from a frozen, separately trained
    /// detector. Proposals for `train` clips are computed once here.
    pub fn with_external_detector(
        feature_dim: usize,
        settings: MatcherSettings,
        detector: Detector,
        train: &[Clip],
        exec: Exec,
        seed: u64,
    ) -> Result<Self> {
        let mut net = Self::build(feature_dim, settings, seed, true)?;
        let props = exec.try_map(train, |c| detector.propose(&c.frames))?;
        let cache = train
            .iter()
            .zip(props)
            .map(|(c, p)| (c.id.clone(), p.into_iter().map(|p| p.segment).collect()))
            .collect();
        net.source = Source::External(Box::new(detector), cache);
        Ok(net)
    }

    /// An external-detector matcher for inference only.
    pub fn with_frozen_detector(feature_dim: usize, settings: MatcherSettings, detector: Detector) -> Result<Self> {
        let mut net = Self::build(feature_dim, settings, 0, true)?;
        net.source = Source::External(Box::new(detector), BTreeMap::new());
        Ok(net)
    }

    pub fn external_detector(&self) -> Option<&Detector> {
        match &self.source {
            Source::External(d, _) => Some(d),
            _ => None,
        }
    }

    fn head_output(&self, g: &mut Graph, head: &DetectorHead, feats: Var, frames: usize) -> Result<Vec<Proposal>> {
        let anchors = self.settings.detector.grid.anchors(&head.chain(), frames)?;
        let out = head.forward(g, feats)?;
        Ok(proposals_from_outputs(
            g.value(out.cls),
            g.value(out.reg),
            &anchors,
            frames,
            &self.settings.detector,
        ))
    }

    /// Proposals for a clip.
    pub fn propose(&self, frames: &Mat) -> Result<Vec<Proposal>> {
        match &self.source {
            Source::Learned(head) => {
                let mut g = Graph::new(&self.store);
                let f = self.trunk.forward(&mut g, frames)?;
                self.head_output(&mut g, head, f, frames.nrows())
            }
            Source::Sliding => Ok(self.windows(frames.nrows())),
            Source::External(det, _) => det.propose(frames),
        }
    }

    fn windows(&self, frames: usize) -> Vec<Proposal> {
        let c = &self.settings.fssnet;
        sliding_windows(frames, &c.window_lengths, c.window_stride)
            .into_iter()
            .map(|segment| Proposal { segment, p_det: 1.0 })
            .collect()
    }

    /// Proposals of a clip with their visual embeddings.
    pub fn encode_clip(&self, frames: &Mat) -> Result<EncodedProposals> {
        let mut g = Graph::new(&self.store);
        let f = self.trunk.forward(&mut g, frames)?;
        let props = match &self.source {
            Source::Learned(head) => self.head_output(&mut g, head, f, frames.nrows())?,
            Source::Sliding => self.windows(frames.nrows()),
            Source::External(det, _) => det.propose(frames)?,
        };
        self.encode_on(&mut g, f, &props)
    }

    /// Embeds the given proposals instead of the model's own.
    pub fn encode_with(&self, frames: &Mat, proposals: &[Proposal]) -> Result<EncodedProposals> {
        let mut g = Graph::new(&self.store);
        let f = self.trunk.forward(&mut g, frames)?;
        self.encode_on(&mut g, f, proposals)
    }

    fn encode_on(&self, g: &mut Graph, feats: Var, proposals: &[Proposal]) -> Result<EncodedProposals> {
        let dim = self.settings.model.embed_dim;
        let mut rows = Vec::with_capacity(proposals.len());
        for p in proposals {
            let e = self.fs.encode(g, feats, p.segment)?;
            rows.push(g.value(e).clone());
        }
        let embeddings = if rows.is_empty() {
            Mat::zeros((0, dim))
        } else {
            let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
            concatenate(Axis(0), &views).expect("equal widths")
        };
        Ok(EncodedProposals {
            segments: proposals.iter().map(|p| p.segment).collect(),
            p_det: proposals.iter().map(|p| p.p_det).collect(),
            embeddings,
        })
    }

    /// Unit-norm text embeddings, one row per word.
    pub fn encode_words(&self, words: &[Query]) -> Result<Mat> {
        let mut g = Graph::new(&self.store);
        let mut out = Mat::zeros((words.len(), self.settings.model.embed_dim));
        for (i, w) in words.iter().enumerate() {
            let e = self.text.encode(&mut g, w)?;
            out.row_mut(i).assign(&g.value(e).row(0));
        }
        Ok(out)
    }

    pub fn encode_clips(&self, clips: &[Clip], exec: Exec) -> Result<Vec<EncodedProposals>> {
        exec.try_map(clips, |c| self.encode_clip(&c.frames))
    }

    pub fn score_encoded(&self, clips: &[Clip], encoded: &[EncodedProposals], words: &[Query], exec: Exec) -> Result<ScoreMatrix> {
        let w = self.encode_words(words)?;
        let beta = self.settings.beta;
        ScoreMatrix::from_rows(
            clips.iter().map(|c| c.id.clone()).collect(),
            words.to_vec(),
            exec,
            |i| Ok(encoded[i].score_words(&w, beta)),
        )
    }

    pub fn score_matrix(&self, clips: &[Clip], words: &[Query], exec: Exec) -> Result<ScoreMatrix> {
        let enc = self.encode_clips(clips, exec)?;
        self.score_encoded(clips, &enc, words, exec)
    }

    fn detection_input(&self, g: &mut Graph, feats: Var) -> Result<Var> {
        if self.settings.fssnet.detach_detector {
            let v = g.value(feats).clone();
            Ok(g.constant(v)?)
        } else {
            Ok(feats)
        }
    }
}

/// Dev-set FVS mAP over the dev vocabulary.
pub fn fvs_map(scores: &ScoreMatrix, clips: &[Clip]) -> Result<f64> {
    let lists = scores.rankings(Direction::Fvs);
    let j = build_judgments(clips, Direction::Fvs);
    Ok(evaluate(&lists, &j)?.summary.map.value)
}

/// Distinct ground-truth words of `clips`, sorted.
pub fn vocabulary(clips: &[Clip]) -> Vec<Query> {
    let set: std::collections::BTreeSet<Query> = clips
        .iter()
        .flat_map(|c| c.ground_truth.iter().map(|g| g.text.clone()))
        .collect();
    set.into_iter().collect()
}

/// Encodes labeled segments and builds the batch triplet loss.
pub(crate) struct PairBatch {
    pub rows: Vec<Var>,
    pub labels: Vec<usize>,
    pub words: Vec<Query>,
    index: BTreeMap<Query, usize>,
}

impl PairBatch {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            labels: Vec::new(),
            words: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn word_index(&mut self, w: &Query) -> usize {
        if let Some(&i) = self.index.get(w) {
            return i;
        }
        self.words.push(w.clone());
        self.index.insert(w.clone(), self.words.len() - 1);
        self.words.len() - 1
    }

    pub fn push(&mut self, row: Var, w: &Query) {
        let j = self.word_index(w);
        self.rows.push(row);
        self.labels.push(j);
    }

    /// Text embeddings and distances; `None` when the batch holds no pairs.
    pub fn distances(&self, g: &mut Graph, text: &TextEncoder) -> Result<Option<Var>> {
        if self.rows.is_empty() {
            return Ok(None);
        }
        let mut wv = Vec::with_capacity(self.words.len());
        for w in &self.words {
            wv.push(text.encode(g, w)?);
        }
        let seg = g.concat_rows(&self.rows)?;
        let words = g.concat_rows(&wv)?;
        Ok(Some(distance_matrix(g, seg, words)?))
    }
}

pub(crate) fn sum_vars(g: &mut Graph, vars: &[Var]) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        acc = Some(match acc {
            None => v,
            Some(a) => g.add(a, v)?,
        });
    }
    Ok(acc)
}

impl FssNet {
    /// `(1/B) (lambda * sum_c L_det(c) + L_tri(batch))`.
    pub fn loss<R: Rng + ?Sized>(&self, g: &mut Graph, batch: &[&Clip], rng: &mut R) -> Result<Var> {
        let s = &self.settings;
        let mut det_losses = Vec::new();
        let mut pairs = PairBatch::new();
        for clip in batch {
            let feats = self.trunk.forward(g, &clip.frames)?;
            let mut sampled: Vec<Segment> = Vec::new();
            match &self.source {
                Source::Learned(head) => {
                    let input = self.detection_input(g, feats)?;
                    let out = head.forward(g, input)?;
                    if s.matching.lambda_det > 0.0 || s.fssnet.detach_detector {
                        det_losses.push(clip_detection_loss(g, &out, clip, &s.detector, &head.chain(), rng)?);
                    }
                    if s.fssnet.sampled_positives {
                        let anchors = s.detector.grid.anchors(&head.chain(), clip.len())?;
                        sampled = proposals_from_outputs(g.value(out.cls), g.value(out.reg), &anchors, clip.len(), &s.detector)
                            .into_iter()
                            .map(|p| p.segment)
                            .collect();
                    }
                }
                Source::External(_, cache) => {
                    if s.fssnet.sampled_positives {
                        sampled = cache.get(&clip.id).cloned().ok_or_else(|| FssError::InvalidClip {
                            id: clip.id.clone(),
                            msg: "no cached external proposals".into(),
                        })?;
                    }
                }
                Source::Sliding => {}
            }
            let extra: Vec<LabeledSegment> = if sampled.is_empty() {
                Vec::new()
            } else {
                filter_proposals(&sampled, &clip.ground_truth, &s.filter, rng)
            };
            for ls in clip.ground_truth.iter().chain(&extra) {
                let e = self.fs.encode(g, feats, ls.segment)?;
                pairs.push(e, &ls.text);
            }
        }
        let mut terms = Vec::new();
        if let Some(d) = sum_vars(g, &det_losses)? {
            let w = if s.matching.lambda_det > 0.0 { s.matching.lambda_det } else { 1.0 };
            terms.push(g.scale(d, w)?);
        }
        if let Some(dist) = pairs.distances(g, &self.text)? {
            terms.push(triplet_loss(g, dist, &pairs.labels, &s.matching)?);
        }
        match sum_vars(g, &terms)? {
            Some(t) => Ok(g.scale(t, 1.0 / batch.len().max(1) as f64)?),
            None => Ok(g.scalar_const(0.0)?),
        }
    }
}

impl Trainable for FssNet {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&Clip], rng: &mut ChaCha8Rng) -> Result<Var> {
        self.loss(g, batch, rng)
    }

    fn validation_metric(&self, dev: &[Clip]) -> Result<f64> {
        let vocab = vocabulary(dev);
        if vocab.is_empty() {
            return Ok(0.0);
        }
        fvs_map(&self.score_matrix(dev, &vocab, Exec::default())?, dev)
    }
}
