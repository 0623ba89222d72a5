use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{iou, is_ratio, LabeledSegment, Segment};
use crate::error::{FssError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub delta_iou: f64,
    pub delta_is: f64,
    /// Proposals sampled per ground-truth segment.
    pub k: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            delta_iou: 0.8,
            delta_is: 0.8,
            k: 4,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta_iou) || !(0.0..=1.0).contains(&self.delta_is) {
            return Err(FssError::Config("delta_iou and delta_is must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Both overlap tests, inclusive.
    pub fn accepts(&self, proposal: Segment, gt: Segment) -> bool {
        iou(proposal, gt) >= self.delta_iou && is_ratio(proposal, gt) >= self.delta_is
    }
}

/// Proposals close to a ground-truth segment, relabeled with its text. At
/// most `k` are drawn uniformly per ground truth from the survivors (taken in
/// segment order, so the result does not depend on proposal order).
pub fn filter_proposals<R: Rng + ?Sized>(
    proposals: &[Segment],
    ground_truth: &[LabeledSegment],
    cfg: &FilterConfig,
    rng: &mut R,
) -> Vec<LabeledSegment> {
    let mut out = Vec::new();
    for gt in ground_truth {
        let mut survivors: Vec<Segment> = proposals
            .iter()
            .copied()
            .filter(|p| cfg.accepts(*p, gt.segment))
            .collect();
        survivors.sort_unstable();
        let n = survivors.len();
        let mut picks = sample(rng, n, cfg.k.min(n)).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| LabeledSegment {
            segment: survivors[i],
            text: gt.text.clone(),
        }));
    }
    out
}
