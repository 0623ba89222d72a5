//! Synthetic fingerspelling corpus.
//!
//! Each letter has a fixed prototype feature vector; fingerspelling is a run of
//! letter prototypes (a few frames per letter) embedded in runs of distractor
//! prototypes standing in for lexical signing. Gaussian noise is added to every
//! frame. Clips come from longer "videos" cut into `clip_len` chunks that share
//! `overlap` frames with their predecessor.

mod io;

pub use io::{load, parse, save, to_string, FORMAT};

use std::collections::BTreeSet;

use ndarray::{s, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::domain::{intersection, Alphabet, Clip, LabeledSegment, Query, Segment};
use crate::error::{FssError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub feature_dim: usize,
    pub clip_len: usize,
    pub overlap: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub clips_per_video: usize,
    pub lexicon_size: usize,
    pub test_only_word_fraction: f64,
    pub word_len_min: usize,
    pub word_len_max: usize,
    pub zipf_exponent: f64,
    pub letter_dur_min: usize,
    pub letter_dur_max: usize,
    pub distractor_dur_min: usize,
    pub distractor_dur_max: usize,
    pub n_distractors: usize,
    pub noise_sigma: f64,
    pub fs_segments_per_clip_mean: f64,
    pub max_segments_per_clip: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            feature_dim: 64,
            clip_len: 300,
            overlap: 75,
            n_train: 500,
            n_dev: 40,
            n_test: 100,
            clips_per_video: 4,
            lexicon_size: 400,
            test_only_word_fraction: 0.2,
            word_len_min: 1,
            word_len_max: 12,
            zipf_exponent: 0.8,
            letter_dur_min: 2,
            letter_dur_max: 6,
            distractor_dur_min: 4,
            distractor_dur_max: 12,
            n_distractors: 40,
            noise_sigma: 0.25,
            fs_segments_per_clip_mean: 1.9,
            max_segments_per_clip: 4,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(FssError::Config(m.to_string()));
        if self.clip_len <= self.overlap {
            return fail("clip_len must exceed overlap");
        }
        if self.letter_dur_min < 1 || self.letter_dur_min > self.letter_dur_max {
            return fail("need 1 <= letter_dur_min <= letter_dur_max");
        }
        if self.distractor_dur_min < 1 || self.distractor_dur_min > self.distractor_dur_max {
            return fail("need 1 <= distractor_dur_min <= distractor_dur_max");
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be >= 0");
        }
        if self.feature_dim == 0 || self.n_distractors == 0 || self.clips_per_video == 0 {
            return fail("feature_dim, n_distractors and clips_per_video must be positive");
        }
        if self.word_len_min < 1 || self.word_len_min > self.word_len_max {
            return fail("need 1 <= word_len_min <= word_len_max");
        }
        if self.word_len_max * self.letter_dur_max > self.clip_len - self.overlap {
            return fail("longest word does not fit in a clip");
        }
        if !(0.0..=1.0).contains(&self.test_only_word_fraction) {
            return fail("test_only_word_fraction must be in [0, 1]");
        }
        if self.lexicon_size < 2 {
            return fail("lexicon_size must be at least 2");
        }
        if !(self.fs_segments_per_clip_mean >= 0.0) {
            return fail("fs_segments_per_clip_mean must be >= 0");
        }
        Ok(())
    }

    fn n_test_only(&self) -> usize {
        let n = (self.lexicon_size as f64 * self.test_only_word_fraction).round() as usize;
        n.min(self.lexicon_size - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(FssError::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordTag {
    /// Usable in every split.
    Common,
    /// Only ever placed in test clips.
    TestOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: Query,
    pub tag: WordTag,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    /// `N_CHARS x D`, one unit row per alphabet character.
    pub letter_prototypes: Array2<f64>,
    /// `n_distractors x D`.
    pub distractor_prototypes: Array2<f64>,
    pub lexicon: Vec<LexiconEntry>,
    pub train: Vec<Clip>,
    pub dev: Vec<Clip>,
    pub test: Vec<Clip>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Clip] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Distinct ground-truth words of a split, sorted.
    pub fn vocabulary(&self, split: Split) -> Vec<Query> {
        self.split(split)
            .iter()
            .flat_map(|c| c.ground_truth.iter().map(|g| g.text.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// Same corpus with every split replaced by the result of `f`.
    pub fn map_splits(&self, mut f: impl FnMut(Split, &[Clip]) -> Vec<Clip>) -> Corpus {
        Corpus {
            train: f(Split::Train, &self.train),
            dev: f(Split::Dev, &self.dev),
            test: f(Split::Test, &self.test),
            ..self.clone()
        }
    }
}

/// Independent seed for `(stream, index)` under a root seed.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the combined key.
    let mut z = root
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_unit_rows<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut m = Array2::from_shape_fn((rows, dim), |_| normal.sample(rng));
    for mut row in m.rows_mut() {
        let n: f64 = row.dot(&row);
        let n = n.sqrt().max(1e-12);
        row.mapv_inplace(|v| v / n);
    }
    m
}

/// Largest |cosine| between distinct rows of a row-normalized matrix.
pub fn max_abs_cosine(m: &Array2<f64>) -> f64 {
    let gram = m.dot(&m.t());
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..i {
            worst = worst.max(gram[[i, j]].abs());
        }
    }
    worst
}

/// Letter and distractor prototypes; at `dim >= 64` all pairs are re-drawn
/// until every |cosine| is below 0.5.
fn prototypes<R: Rng>(rng: &mut R, n_distractors: usize, dim: usize) -> (Array2<f64>, Array2<f64>) {
    let total = Alphabet::N_CHARS + n_distractors;
    for _ in 0..1000 {
        let all = random_unit_rows(rng, total, dim);
        if dim < 64 || max_abs_cosine(&all) < 0.5 {
            let letters = all.slice(s![..Alphabet::N_CHARS, ..]).to_owned();
            let distractors = all.slice(s![Alphabet::N_CHARS.., ..]).to_owned();
            return (letters, distractors);
        }
    }
    panic!("could not draw near-orthogonal prototypes in {dim} dimensions");
}

fn word_length_weights(cfg: &CorpusConfig) -> Vec<f64> {
    // Mode around 3-4 letters with a long tail, loosely shaped like
    // fingerspelling length histograms.
    (cfg.word_len_min..=cfg.word_len_max)
        .map(|l| l as f64 * (-(l as f64) / 3.5).exp())
        .collect()
}

fn random_word<R: Rng>(rng: &mut R, len: usize) -> String {
    let mut chars: Vec<char> = (0..len)
        .map(|_| Alphabet::symbol(rng.random_range(0..26)).unwrap())
        .collect();
    if len >= 5 && rng.random_bool(0.08) {
        let at = rng.random_range(2..len - 2);
        chars[at] = ' ';
    } else if len >= 3 && rng.random_bool(0.02) {
        let at = rng.random_range(1..len - 1);
        chars[at] = ['\'', '&', '.', '@'][rng.random_range(0..4)];
    }
    chars.into_iter().collect()
}

fn build_lexicon<R: Rng>(rng: &mut R, cfg: &CorpusConfig) -> Vec<LexiconEntry> {
    let lengths = WeightedIndex::new(word_length_weights(cfg)).unwrap();
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(cfg.lexicon_size);
    let mut attempts = 0;
    while words.len() < cfg.lexicon_size {
        attempts += 1;
        assert!(attempts < cfg.lexicon_size * 1000, "lexicon space exhausted");
        let len = cfg.word_len_min + lengths.sample(rng);
        let w = random_word(rng, len);
        if seen.insert(w.clone()) {
            words.push(Query::new(&w).expect("generated from the alphabet"));
        }
    }
    let n_test_only = cfg.n_test_only();
    words
        .into_iter()
        .enumerate()
        .map(|(i, word)| LexiconEntry {
            word,
            tag: if i < cfg.lexicon_size - n_test_only {
                WordTag::Common
            } else {
                WordTag::TestOnly
            },
        })
        .collect()
}

struct WordSampler<'a> {
    common: Vec<&'a Query>,
    test_only: Vec<&'a Query>,
    zipf: WeightedIndex<f64>,
    test_only_prob: f64,
}

impl<'a> WordSampler<'a> {
    fn new(lexicon: &'a [LexiconEntry], cfg: &CorpusConfig) -> Self {
        let common: Vec<_> = lexicon
            .iter()
            .filter(|e| e.tag == WordTag::Common)
            .map(|e| &e.word)
            .collect();
        let test_only: Vec<_> = lexicon
            .iter()
            .filter(|e| e.tag == WordTag::TestOnly)
            .map(|e| &e.word)
            .collect();
        let zipf = WeightedIndex::new(
            (1..=common.len()).map(|r| 1.0 / (r as f64).powf(cfg.zipf_exponent)),
        )
        .unwrap();
        Self {
            common,
            test_only,
            zipf,
            test_only_prob: cfg.test_only_word_fraction,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, split: Split) -> &'a Query {
        if split == Split::Test && !self.test_only.is_empty() && rng.random_bool(self.test_only_prob)
        {
            self.test_only[rng.random_range(0..self.test_only.len())]
        } else {
            self.common[self.zipf.sample(rng)]
        }
    }
}

/// Frame-level rendering plan for one clip: which prototype each fresh frame shows.
enum Frame {
    Letter(usize),
    Distractor(usize),
    Copied,
}

struct VideoGenerator<'a> {
    cfg: &'a CorpusConfig,
    letters: &'a Array2<f64>,
    distractors: &'a Array2<f64>,
    words: &'a WordSampler<'a>,
    split: Split,
    rng: ChaCha8Rng,
}

impl VideoGenerator<'_> {
    fn segment_count(&mut self) -> usize {
        let mean = self.cfg.fs_segments_per_clip_mean;
        if mean <= 0.0 {
            return 0;
        }
        let k = Poisson::new(mean).unwrap().sample(&mut self.rng) as usize;
        k.min(self.cfg.max_segments_per_clip)
    }

    fn letter_durations(&mut self, word: &Query) -> Vec<usize> {
        (0..word.len())
            .map(|_| {
                self.rng
                    .random_range(self.cfg.letter_dur_min..=self.cfg.letter_dur_max)
            })
            .collect()
    }

    /// Start frame for a run of `len` frames inside one zone, keeping a gap of
    /// `distractor_dur_min` frames to every placed segment.
    fn place(&mut self, len: usize, zones: &[(usize, usize)], taken: &[Segment]) -> Option<Segment> {
        let gap = self.cfg.distractor_dur_min;
        for _ in 0..50 {
            let (lo, hi) = zones[self.rng.random_range(0..zones.len())];
            if hi - lo < len {
                continue;
            }
            let start = self.rng.random_range(lo..=hi - len);
            let cand = Segment::new(start, start + len).unwrap();
            let padded = Segment::new(start.saturating_sub(gap), start + len + gap).unwrap();
            if taken.iter().all(|t| intersection(padded, *t) == 0) {
                return Some(cand);
            }
        }
        None
    }

    fn clip(&mut self, id: String, prev: Option<&Clip>) -> Clip {
        let (t_len, ov) = (self.cfg.clip_len, self.cfg.overlap);
        let shift = t_len - ov;
        let mut plan: Vec<Frame> = (0..t_len).map(|_| Frame::Distractor(0)).collect();
        let mut gt: Vec<LabeledSegment> = Vec::new();
        let fresh_from = if prev.is_some() { ov } else { 0 };
        if let Some(p) = prev {
            for f in plan.iter_mut().take(ov) {
                *f = Frame::Copied;
            }
            for g in &p.ground_truth {
                if g.segment.start() >= shift {
                    gt.push(LabeledSegment {
                        segment: Segment::new(g.segment.start() - shift, g.segment.end() - shift)
                            .unwrap(),
                        text: g.text.clone(),
                    });
                }
            }
        }
        // Segments never straddle the frame where the next chunk begins.
        let zones: Vec<(usize, usize)> = if ov == 0 {
            vec![(fresh_from, t_len)]
        } else {
            vec![(fresh_from, shift), (shift, t_len)]
        };
        let target = self.segment_count();
        let fresh = target.saturating_sub(gt.len());
        for _ in 0..fresh {
            for _attempt in 0..10 {
                let word = self.words.sample(&mut self.rng, self.split).clone();
                let durs = self.letter_durations(&word);
                let total: usize = durs.iter().sum();
                let taken: Vec<Segment> = gt.iter().map(|g| g.segment).collect();
                if let Some(seg) = self.place(total, &zones, &taken) {
                    let mut f = seg.start();
                    for (sym, d) in word.symbols().into_iter().zip(durs) {
                        for frame in plan.iter_mut().skip(f).take(d) {
                            *frame = Frame::Letter(sym);
                        }
                        f += d;
                    }
                    gt.push(LabeledSegment {
                        segment: seg,
                        text: word,
                    });
                    break;
                }
            }
        }
        // Distractor runs fill the remaining fresh frames.
        let mut t = fresh_from;
        while t < t_len {
            if matches!(plan[t], Frame::Letter(_)) {
                t += 1;
                continue;
            }
            let proto = self.rng.random_range(0..self.distractors.nrows());
            let dur = self
                .rng
                .random_range(self.cfg.distractor_dur_min..=self.cfg.distractor_dur_max);
            let mut k = 0;
            while k < dur && t < t_len && !matches!(plan[t], Frame::Letter(_)) {
                plan[t] = Frame::Distractor(proto);
                t += 1;
                k += 1;
            }
        }
        let dim = self.cfg.feature_dim;
        let mut frames = Array2::zeros((t_len, dim));
        let noise = Normal::new(0.0, self.cfg.noise_sigma.max(0.0)).unwrap();
        for (t, f) in plan.iter().enumerate() {
            let proto = match f {
                Frame::Copied => {
                    let p = prev.unwrap();
                    frames.row_mut(t).assign(&p.frames.row(t + shift));
                    continue;
                }
                Frame::Letter(l) => self.letters.row(*l),
                Frame::Distractor(d) => self.distractors.row(*d),
            };
            let mut row = frames.row_mut(t);
            for (v, &p) in row.iter_mut().zip(proto.iter()) {
                *v = if self.cfg.noise_sigma > 0.0 {
                    p + noise.sample(&mut self.rng)
                } else {
                    p
                };
            }
        }
        Clip::new(id, frames, gt).expect("generator keeps segments disjoint and in range")
    }
}

pub fn generate(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, 0));
    let (letters, distractors) = prototypes(&mut rng, cfg.n_distractors, cfg.feature_dim);
    let lexicon = build_lexicon(&mut rng, cfg);
    let sampler = WordSampler::new(&lexicon, cfg);

    let gen_split = |split: Split, n: usize| -> Vec<Clip> {
        let mut clips = Vec::with_capacity(n);
        let mut video = 0u64;
        while clips.len() < n {
            let mut g = VideoGenerator {
                cfg,
                letters: &letters,
                distractors: &distractors,
                words: &sampler,
                split,
                rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + split as u64, video)),
            };
            let mut prev: Option<Clip> = None;
            for chunk in 0..cfg.clips_per_video {
                if clips.len() >= n {
                    break;
                }
                let id = format!("{}-{video:04}-{chunk}", split.name());
                let clip = g.clip(id, prev.as_ref());
                clips.push(clip.clone());
                prev = Some(clip);
            }
            video += 1;
        }
        clips
    };

    Ok(Corpus {
        config: cfg.clone(),
        train: gen_split(Split::Train, cfg.n_train),
        dev: gen_split(Split::Dev, cfg.n_dev),
        test: gen_split(Split::Test, cfg.n_test),
        letter_prototypes: letters,
        distractor_prototypes: distractors,
        lexicon,
    })
}
