//! Proposal scoring and the two retrieval directions: word search over a
//! clip's vocabulary (FWS) and clip search for a word (FVS). Both come from
//! one clip-by-word score matrix.

mod io;

pub use io::{parse_ranked_lists, parse_score_matrix, ranked_lists_to_string, score_matrix_to_string};

use std::collections::BTreeSet;

use fss_nnkit::Mat;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::domain::{Query, Segment};
use crate::error::{FssError, Result};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Clip -> ranked words.
    Fws,
    /// Word -> ranked clips.
    Fvs,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Fws => "fws",
            Direction::Fvs => "fvs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fws" => Ok(Direction::Fws),
            "fvs" => Ok(Direction::Fvs),
            _ => Err(FssError::Config(format!("unknown direction {s:?}"))),
        }
    }
}

/// `p_det^beta * max(0, 1 - d)`.
pub fn score_word(p_det: f64, distance: f64, beta: f64) -> f64 {
    let m = (1.0 - distance).max(0.0);
    if beta == 0.0 {
        m
    } else {
        p_det.powf(beta) * m
    }
}

/// A clip's proposals with unit-norm visual embeddings (one row each).
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedProposals {
    pub segments: Vec<Segment>,
    pub p_det: Vec<f64>,
    pub embeddings: Mat,
}

impl EncodedProposals {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Highest proposal score for each word embedding (rows of `words`);
    /// zero when there are no proposals.
    pub fn score_words(&self, words: &Mat, beta: f64) -> Vec<f64> {
        let mut best = vec![0.0f64; words.nrows()];
        if self.is_empty() {
            return best;
        }
        let sim = self.embeddings.dot(&words.t());
        for (m, row) in sim.rows().into_iter().enumerate() {
            for (b, &s) in best.iter_mut().zip(row.iter()) {
                *b = b.max(score_word(self.p_det[m], 1.0 - s, beta));
            }
        }
        best
    }

    /// Best-scoring proposal for one word, if any.
    pub fn best_for(&self, word: &Mat, beta: f64) -> Option<(Segment, f64)> {
        let sim = self.embeddings.dot(&word.t());
        (0..self.len())
            .map(|m| (self.segments[m], score_word(self.p_det[m], 1.0 - sim[[m, 0]], beta)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
    }
}

/// Maximum of `score_word` over a clip's proposals; 0 with no proposals.
pub fn score_clip(proposals: &[(f64, f64)], beta: f64) -> f64 {
    proposals
        .iter()
        .map(|&(p, d)| score_word(p, d, beta))
        .fold(0.0, f64::max)
}

/// Scores of every (clip, word) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub clip_ids: Vec<String>,
    pub words: Vec<Query>,
    /// `clips x words`.
    pub scores: Mat,
}

fn check_unique<'a>(what: &str, items: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in items {
        if !seen.insert(s) {
            return Err(FssError::Duplicate(format!("{what} {s}")));
        }
    }
    Ok(())
}

impl ScoreMatrix {
    pub fn new(clip_ids: Vec<String>, words: Vec<Query>, scores: Mat) -> Result<Self> {
        if clip_ids.is_empty() {
            return Err(FssError::Empty("clip set"));
        }
        if words.is_empty() {
            return Err(FssError::Empty("vocabulary"));
        }
        check_unique("clip", clip_ids.iter().map(String::as_str))?;
        check_unique("word", words.iter().map(Query::as_str))?;
        if scores.dim() != (clip_ids.len(), words.len()) {
            return Err(FssError::Dimension(format!(
                "score matrix {:?} for {} clips and {} words",
                scores.dim(),
                clip_ids.len(),
                words.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(FssError::Dimension("non-finite score".into()));
        }
        Ok(Self {
            clip_ids,
            words,
            scores,
        })
    }

    /// Fills the matrix one clip row at a time.
    pub fn from_rows<F>(clip_ids: Vec<String>, words: Vec<Query>, exec: Exec, row: F) -> Result<Self>
    where
        F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
    {
        if words.is_empty() {
            return Err(FssError::Empty("vocabulary"));
        }
        let rows = exec.map_range(clip_ids.len(), row);
        let mut scores = Array2::zeros((clip_ids.len(), words.len()));
        for (i, r) in rows.into_iter().enumerate() {
            let r = r?;
            if r.len() != words.len() {
                return Err(FssError::Dimension(format!("row of {} scores for {} words", r.len(), words.len())));
            }
            scores.row_mut(i).assign(&ndarray::Array1::from(r));
        }
        Self::new(clip_ids, words, scores)
    }

    pub fn rankings(&self, direction: Direction) -> Vec<RankedList> {
        match direction {
            Direction::Fws => self
                .clip_ids
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    RankedList::new(
                        id.clone(),
                        self.words
                            .iter()
                            .enumerate()
                            .map(|(j, w)| (w.to_string(), self.scores[[i, j]]))
                            .collect(),
                    )
                })
                .collect(),
            Direction::Fvs => self
                .words
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    RankedList::new(
                        w.to_string(),
                        self.clip_ids
                            .iter()
                            .enumerate()
                            .map(|(i, id)| (id.clone(), self.scores[[i, j]]))
                            .collect(),
                    )
                })
                .collect(),
        }
    }
}

/// Items for one query, best first; equal scores are ordered by item id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query: String,
    pub items: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(query: String, mut items: Vec<(String, f64)>) -> Self {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { query, items }
    }

    pub fn item_ids(&self) -> Vec<&str> {
        self.items.iter().map(|(id, _)| id.as_str()).collect()
    }
}

/// Ranks a vocabulary for one clip given a per-word scoring function.
pub fn fws(clip_id: &str, vocabulary: &[Query], score: impl Fn(&Query) -> f64) -> Result<RankedList> {
    if vocabulary.is_empty() {
        return Err(FssError::Empty("vocabulary"));
    }
    check_unique("word", vocabulary.iter().map(Query::as_str))?;
    Ok(RankedList::new(
        clip_id.to_string(),
        vocabulary.iter().map(|w| (w.to_string(), score(w))).collect(),
    ))
}

/// Ranks clips for one query given a per-clip scoring function.
pub fn fvs(query: &Query, clip_ids: &[String], score: impl Fn(usize) -> f64) -> Result<RankedList> {
    if clip_ids.is_empty() {
        return Err(FssError::Empty("clip set"));
    }
    check_unique("clip", clip_ids.iter().map(String::as_str))?;
    Ok(RankedList::new(
        query.to_string(),
        clip_ids.iter().enumerate().map(|(i, id)| (id.clone(), score(i))).collect(),
    ))
}
