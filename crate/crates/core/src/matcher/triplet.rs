use fss_nnkit::{Graph, Mat, Var};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FssError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub margin: f64,
    /// Cap on visual negatives per anchor.
    pub max_neg_v: usize,
    /// Cap on word negatives per anchor.
    pub max_neg_w: usize,
    pub lambda_det: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            margin: 0.45,
            max_neg_v: 5,
            max_neg_w: 5,
            lambda_det: 0.1,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || self.max_neg_v == 0 || self.max_neg_w == 0 {
            return Err(FssError::Config("margin must be positive and negative caps at least 1".into()));
        }
        if !(self.lambda_det >= 0.0) {
            return Err(FssError::Config("lambda_det must be >= 0".into()));
        }
        Ok(())
    }
}

/// Semi-hard negatives: candidates strictly farther than the positive,
/// nearest first (ties by index), at most `cap`.
pub fn mine_negatives(pos: f64, candidates: &[(usize, f64)], cap: usize) -> Vec<usize> {
    let mut semi: Vec<(usize, f64)> = candidates.iter().copied().filter(|&(_, d)| d > pos).collect();
    semi.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    semi.truncate(cap);
    semi.into_iter().map(|(i, _)| i).collect()
}

/// Value and gradient of the two-sided triplet loss over a distance matrix.
///
/// `dist[i, j]` is the distance between visual segment `i` and word `j`;
/// segment `i` is labeled with word `seg_word[i]`. Every segment is an anchor.
/// Word negatives for segment `i` are the other words; visual negatives are
/// segments labeled with another word. An empty negative set contributes 0.
pub fn triplet_value_and_grad(dist: &Mat, seg_word: &[usize], cfg: &MatchConfig) -> (f64, Mat) {
    triplet_value_and_grad_with(dist, seg_word, &|i, j| seg_word[i] == j, cfg)
}

/// As [`triplet_value_and_grad`], but `related(i, j)` marks every word `j`
/// that is also a positive for row `i`; such pairs are never negatives.
pub fn triplet_value_and_grad_with(
    dist: &Mat,
    seg_word: &[usize],
    related: &dyn Fn(usize, usize) -> bool,
    cfg: &MatchConfig,
) -> (f64, Mat) {
    let (n, m) = dist.dim();
    assert_eq!(n, seg_word.len(), "one word label per segment");
    let mut total = 0.0;
    let mut grad = Array2::zeros((n, m));
    for i in 0..n {
        let w = seg_word[i];
        let pos = dist[[i, w]];
        let word_cands: Vec<(usize, f64)> = (0..m).filter(|&j| j != w && !related(i, j)).map(|j| (j, dist[[i, j]])).collect();
        let neg_w = mine_negatives(pos, &word_cands, cfg.max_neg_w);
        if !neg_w.is_empty() {
            let mean = neg_w.iter().map(|&j| dist[[i, j]]).sum::<f64>() / neg_w.len() as f64;
            let h = cfg.margin + pos - mean;
            if h > 0.0 {
                total += h;
                grad[[i, w]] += 1.0;
                for &j in &neg_w {
                    grad[[i, j]] -= 1.0 / neg_w.len() as f64;
                }
            }
        }
        let seg_cands: Vec<(usize, f64)> = (0..n)
            .filter(|&k| seg_word[k] != w && !related(k, w))
            .map(|k| (k, dist[[k, w]]))
            .collect();
        let neg_v = mine_negatives(pos, &seg_cands, cfg.max_neg_v);
        if !neg_v.is_empty() {
            let mean = neg_v.iter().map(|&k| dist[[k, w]]).sum::<f64>() / neg_v.len() as f64;
            let h = cfg.margin + pos - mean;
            if h > 0.0 {
                total += h;
                grad[[i, w]] += 1.0;
                for &k in &neg_v {
                    grad[[k, w]] -= 1.0 / neg_v.len() as f64;
                }
            }
        }
    }
    (total, grad)
}

/// Triplet loss node over a distance-matrix node.
pub fn triplet_loss(g: &mut Graph, dist: Var, seg_word: &[usize], cfg: &MatchConfig) -> Result<Var> {
    triplet_loss_with(g, dist, seg_word, &|i, j| seg_word[i] == j, cfg)
}

/// Triplet loss node with an explicit positive relation; see
/// [`triplet_value_and_grad_with`].
pub fn triplet_loss_with(
    g: &mut Graph,
    dist: Var,
    seg_word: &[usize],
    related: &dyn Fn(usize, usize) -> bool,
    cfg: &MatchConfig,
) -> Result<Var> {
    let (n, m) = g.shape(dist);
    if seg_word.len() != n || seg_word.iter().any(|&w| w >= m) {
        return Err(FssError::Dimension(format!(
            "{} segment labels for a {n} x {m} distance matrix",
            seg_word.len()
        )));
    }
    let (value, grad) = triplet_value_and_grad_with(g.value(dist), seg_word, related, cfg);
    Ok(g.scalar_loss(dist, value, grad)?)
}

/// Cosine distances `1 - s_i . w_j` between unit-norm rows.
pub fn distance_matrix(g: &mut Graph, segments: Var, words: Var) -> Result<Var> {
    let wt = g.transpose(words)?;
    let sim = g.matmul(segments, wt)?;
    let neg = g.scale(sim, -1.0)?;
    Ok(g.shift(neg, 1.0)?)
}

/// `lambda_det * l_det + l_tri`.
pub fn total_loss(g: &mut Graph, l_det: Var, l_tri: Var, lambda_det: f64) -> Result<Var> {
    let d = g.scale(l_det, lambda_det)?;
    Ok(g.add(d, l_tri)?)
}
