//! Ranking and localization metrics.
//!
//! Ranking metrics take a ranked item list (best first) and the set of
//! relevant items; they return `None` when nothing is relevant, and such
//! queries are left out of means.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{iou, Segment};
use crate::error::{FssError, Result};

fn hits<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>) -> Vec<bool> {
    let mut seen = BTreeSet::new();
    ranked
        .iter()
        .map(|x| relevant.contains(x) && seen.insert(x))
        .collect()
}

/// Mean over relevant items of the precision at each one's rank; relevant
/// items absent from the list contribute 0.
pub fn average_precision<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (rank, hit) in hits(ranked, relevant).into_iter().enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

/// Best F1 over all prefixes of the ranking.
pub fn mean_f1<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut found = 0usize;
    let mut best = 0.0f64;
    for (rank, hit) in hits(ranked, relevant).into_iter().enumerate() {
        if hit {
            found += 1;
            let p = found as f64 / (rank + 1) as f64;
            let r = found as f64 / relevant.len() as f64;
            best = best.max(2.0 * p * r / (p + r));
        }
    }
    Some(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtN {
    pub precision: f64,
    pub recall: f64,
    pub max_precision: f64,
    pub max_recall: f64,
}

/// Precision and recall of the top `n`, with the best values any ranking
/// could reach given the number of relevant items.
pub fn precision_recall_at_n<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, n: usize) -> Option<AtN> {
    if relevant.is_empty() || n == 0 {
        return None;
    }
    let top = ranked.len().min(n);
    let found = hits(&ranked[..top], relevant).into_iter().filter(|&h| h).count();
    let reachable = relevant.len().min(n);
    Some(AtN {
        precision: found as f64 / n as f64,
        recall: found as f64 / relevant.len() as f64,
        max_precision: reachable as f64 / n as f64,
        max_recall: reachable as f64 / relevant.len() as f64,
    })
}

/// Expected AP of a uniformly random ranking of `n` items with `r` relevant.
pub fn random_ranking_ap(n: usize, r: usize) -> f64 {
    assert!(r >= 1 && r <= n, "need 1 <= r <= n");
    let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let spread = if n > 1 {
        (r - 1) as f64 / (n - 1) as f64 * (n as f64 - h)
    } else {
        0.0
    };
    (h + spread) / n as f64
}

/// A scored segment prediction in clip `clip`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub clip: String,
    pub segment: Segment,
    pub score: f64,
}

/// A ground-truth segment in clip `clip`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSegment {
    pub clip: String,
    pub segment: Segment,
}

/// Average precision of pooled segment predictions. Predictions are visited
/// by descending score (ties by clip id, then start, then end); each is a
/// true positive when an unmatched ground truth in its clip overlaps it with
/// IoU at least `tau`, taking the highest-IoU one. AP uses all-point
/// interpolation of the precision-recall curve.
pub fn ap_at_iou(predictions: &[ScoredSegment], ground_truth: &[ClipSegment], tau: f64) -> Result<f64> {
    if ground_truth.is_empty() {
        return Err(FssError::Empty("ground truth"));
    }
    let mut order: Vec<&ScoredSegment> = predictions.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.clip.cmp(&b.clip))
            .then(a.segment.cmp(&b.segment))
    });
    let mut used = vec![false; ground_truth.len()];
    let mut tp_flags = Vec::with_capacity(order.len());
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in ground_truth.iter().enumerate() {
            if used[j] || g.clip != p.clip {
                continue;
            }
            let v = iou(p.segment, g.segment);
            if v >= tau && v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
        }
        tp_flags.push(best.is_some());
    }
    Ok(interpolated_ap(&tp_flags, ground_truth.len()))
}

/// All-point interpolated AP of a ranked list of hit flags.
pub fn interpolated_ap(hits: &[bool], n_relevant: usize) -> f64 {
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        if h {
            tp += 1;
        }
        points.push((tp as f64 / n_relevant as f64, tp as f64 / (i + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut running_max = vec![0.0; points.len()];
    let mut m = 0.0f64;
    for i in (0..points.len()).rev() {
        m = m.max(points[i].1);
        running_max[i] = m;
    }
    for (i, &(r, _)) in points.iter().enumerate() {
        if r > prev_recall {
            ap += (r - prev_recall) * running_max[i];
            prev_recall = r;
        }
    }
    ap
}
