use fss_nnkit::{Graph, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use crate::detector::{Detector, Proposal};
use crate::domain::Clip;
use crate::error::Result;
use crate::eval::{ap_at_iou, ClipSegment, ScoredSegment};
use crate::fssnet::sum_vars;
use crate::par::Exec;
use crate::train::Trainable;

/// Pools per-clip proposals into scored predictions.
pub fn detector_predictions(clips: &[Clip], proposals: &[Vec<Proposal>]) -> Vec<ScoredSegment> {
    clips
        .iter()
        .zip(proposals)
        .flat_map(|(c, ps)| {
            ps.iter().map(|p| ScoredSegment {
                clip: c.id.clone(),
                segment: p.segment,
                score: p.p_det,
            })
        })
        .collect()
}

/// AP at `tau` of a detector's proposals on `clips`.
pub fn detection_ap(det: &Detector, clips: &[Clip], tau: f64, exec: Exec) -> Result<f64> {
    let props = exec.try_map(clips, |c| det.propose(&c.frames))?;
    let gt: Vec<ClipSegment> = clips
        .iter()
        .flat_map(|c| {
            c.segments().map(|segment| ClipSegment {
                clip: c.id.clone(),
                segment,
            })
        })
        .collect();
    if gt.is_empty() {
        return Ok(0.0);
    }
    ap_at_iou(&detector_predictions(clips, &props), &gt, tau)
}

impl Trainable for Detector {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&Clip], rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut losses = Vec::with_capacity(batch.len());
        for clip in batch {
            losses.push(self.loss(g, clip, rng)?);
        }
        match sum_vars(g, &losses)? {
            Some(t) => Ok(g.scale(t, 1.0 / batch.len() as f64)?),
            None => Ok(g.scalar_const(0.0)?),
        }
    }

    /// Dev AP@0.5 of the proposals.
    fn validation_metric(&self, dev: &[Clip]) -> Result<f64> {
        detection_ap(self, dev, 0.5, Exec::default())
    }
}
