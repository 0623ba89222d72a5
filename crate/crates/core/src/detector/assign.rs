use serde::{Deserialize, Serialize};

use super::anchors::{regression_target, Anchor};
use crate::domain::{iou, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignConfig {
    /// Positive iff max IoU is strictly above this.
    pub positive_iou: f64,
    /// Negative iff max IoU is strictly below this.
    pub negative_iou: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            positive_iou: 0.6,
            negative_iou: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTargets {
    pub labels: Vec<AnchorLabel>,
    /// Ground-truth index each positive anchor regresses towards.
    pub matched: Vec<Option<usize>>,
    /// Regression targets; zero for non-positives.
    pub regression: Vec<[f64; 2]>,
}

impl DetectionTargets {
    pub fn n_positive(&self) -> usize {
        self.count(AnchorLabel::Positive)
    }

    pub fn n_negative(&self) -> usize {
        self.count(AnchorLabel::Negative)
    }

    fn count(&self, label: AnchorLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Labels anchors against ground truth. A ground truth with no anchor above
/// the positive threshold is force-matched to its highest-IoU anchor (the
/// earliest one on ties), so every ground truth owns at least one positive.
pub fn assign_anchors(anchors: &[Anchor], gt: &[Segment], cfg: &AssignConfig) -> DetectionTargets {
    let n = anchors.len();
    let mut labels = vec![AnchorLabel::Negative; n];
    let mut matched = vec![None; n];
    let mut best_iou = vec![0.0f64; n];
    for (i, a) in anchors.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let v = iou(a.segment, *g);
            if v > best_iou[i] {
                best_iou[i] = v;
                matched[i] = Some(j);
            }
        }
        labels[i] = if best_iou[i] > cfg.positive_iou {
            AnchorLabel::Positive
        } else if best_iou[i] < cfg.negative_iou {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }
    for (j, g) in gt.iter().enumerate() {
        let covered = (0..n).any(|i| labels[i] == AnchorLabel::Positive && matched[i] == Some(j));
        if covered {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in anchors.iter().enumerate() {
            let v = iou(a.segment, *g);
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            labels[i] = AnchorLabel::Positive;
            matched[i] = Some(j);
        }
    }
    let regression = anchors
        .iter()
        .zip(&labels)
        .zip(&matched)
        .map(|((a, l), m)| match (l, m) {
            (AnchorLabel::Positive, Some(j)) => regression_target(a, gt[*j]),
            _ => [0.0, 0.0],
        })
        .collect();
    for (l, m) in labels.iter().zip(matched.iter_mut()) {
        if *l != AnchorLabel::Positive {
            *m = None;
        }
    }
    DetectionTargets {
        labels,
        matched,
        regression,
    }
}
