use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::{iou, Segment};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub segment: Segment,
    pub p_det: f64,
}

/// Descending score; ties go to the earlier start, then the longer segment.
pub fn proposal_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.p_det
        .total_cmp(&a.p_det)
        .then(a.segment.start().cmp(&b.segment.start()))
        .then(b.segment.len().cmp(&a.segment.len()))
}

/// Greedy non-maximum suppression: a candidate is dropped when its IoU with
/// an already kept proposal is at least `iou_threshold`. Keeps at most
/// `max_keep`, sorted by [`proposal_order`].
pub fn nms(candidates: &[Proposal], iou_threshold: f64, max_keep: usize) -> Vec<Proposal> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(proposal_order);
    let mut kept: Vec<Proposal> = Vec::with_capacity(max_keep.min(sorted.len()));
    for c in sorted {
        if kept.len() >= max_keep {
            break;
        }
        if kept.iter().all(|k| iou(k.segment, c.segment) < iou_threshold) {
            kept.push(c);
        }
    }
    kept
}
