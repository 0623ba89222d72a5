//! Temporal proposal generation: anchors over the pooled feature map,
//! fingerspelling/background classification, boundary regression and NMS.

mod anchors;
mod assign;
mod head;
mod io;
mod loss;
mod nms;

pub use anchors::{decode, default_chain, regression_target, Anchor, AnchorGrid, DEFAULT_SCALES};
pub use assign::{assign_anchors, AnchorLabel, AssignConfig, DetectionTargets};
pub use head::{decode_all, proposals_from_outputs, DetectorConfig, DetectorHead, HeadOutput};
pub use io::{parse_proposals, proposals_to_string, ClipProposals, PROPOSALS_FORMAT};
pub use loss::{detection_loss, loss_weights, LossWeights};
pub use nms::{nms, proposal_order, Proposal};

use fss_nnkit::{Graph, Mat, ParamStore, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Clip, Segment};
use crate::error::Result;
use crate::net::{ModelConfig, Trunk};

/// Detection loss for one clip given the head outputs.
pub fn clip_detection_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    out: &HeadOutput,
    clip: &Clip,
    cfg: &DetectorConfig,
    chain: &fss_nnkit::TemporalChain,
    rng: &mut R,
) -> Result<Var> {
    let anchors = cfg.grid.anchors(chain, clip.len())?;
    let gt: Vec<Segment> = clip.ground_truth.iter().map(|g| g.segment).collect();
    let targets = assign_anchors(&anchors, &gt, &cfg.assign);
    let w = loss_weights(&targets, cfg.grid.n_scales(), cfg.neg_ratio, cfg.reg_std, rng);
    detection_loss(g, out.cls, out.reg, &w)
}

/// A trunk plus proposal head trained on the detection loss alone.
#[derive(Clone, Debug)]
pub struct Detector {
    pub store: ParamStore,
    pub config: DetectorConfig,
    trunk: Trunk,
    head: DetectorHead,
}

impl Detector {
    pub fn new(feature_dim: usize, model: &ModelConfig, config: DetectorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "det.trunk", feature_dim, model, &mut rng);
        let head = DetectorHead::new(
            &mut store,
            "det.head",
            trunk.out_dim(),
            model.det_channels,
            config.grid.n_scales(),
            &mut rng,
        );
        Self {
            store,
            config,
            trunk,
            head,
        }
    }

    pub fn outputs(&self, frames: &Mat) -> Result<(Mat, Mat)> {
        let mut g = Graph::new(&self.store);
        let f = self.trunk.forward(&mut g, frames)?;
        let out = self.head.forward(&mut g, f)?;
        Ok((g.value(out.cls).clone(), g.value(out.reg).clone()))
    }

    /// At most `max_proposals` proposals sorted by `p_det`.
    pub fn propose(&self, frames: &Mat) -> Result<Vec<Proposal>> {
        let anchors = self.config.grid.anchors(&self.head.chain(), frames.nrows())?;
        let (cls, reg) = self.outputs(frames)?;
        Ok(proposals_from_outputs(
            &cls,
            &reg,
            &anchors,
            frames.nrows(),
            &self.config,
        ))
    }

    pub fn loss<R: Rng + ?Sized>(&self, g: &mut Graph, clip: &Clip, rng: &mut R) -> Result<Var> {
        let f = self.trunk.forward(g, &clip.frames)?;
        let out = self.head.forward(g, f)?;
        clip_detection_loss(g, &out, clip, &self.config, &self.head.chain(), rng)
    }
}
