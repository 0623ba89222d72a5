use fss_nnkit::{Conv1d, Graph, Linear, Mat, ParamStore, TemporalChain, TemporalLayer, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchors::{decode, Anchor, AnchorGrid};
use super::assign::AssignConfig;
use super::nms::{nms, Proposal};
use crate::error::{FssError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub grid: AnchorGrid,
    pub assign: AssignConfig,
    /// Negatives kept per positive in the classification loss.
    pub neg_ratio: usize,
    pub nms_iou: f64,
    /// Proposals kept after NMS.
    pub max_proposals: usize,
    /// The head regresses deltas divided by these (center, log-length).
    pub reg_std: [f64; 2],
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            grid: AnchorGrid::default(),
            assign: AssignConfig::default(),
            neg_ratio: 3,
            nms_iou: 0.7,
            max_proposals: 50,
            reg_std: [0.1, 0.2],
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        AnchorGrid::new(self.grid.scales.clone())?;
        let a = &self.assign;
        if !(0.0..=1.0).contains(&a.negative_iou) || !(0.0..=1.0).contains(&a.positive_iou) {
            return Err(FssError::Config("anchor IoU thresholds must lie in [0, 1]".into()));
        }
        if a.negative_iou > a.positive_iou {
            return Err(FssError::Config("negative_iou exceeds positive_iou".into()));
        }
        if !self.reg_std.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(FssError::Config("reg_std must be positive".into()));
        }
        if self.max_proposals == 0 {
            return Err(FssError::Config("max_proposals must be positive".into()));
        }
        Ok(())
    }
}

/// Raw head outputs: `positions x n_scales` logits and
/// `positions x 2 n_scales` regression deltas (pairs per scale).
pub struct HeadOutput {
    pub cls: Var,
    pub reg: Var,
}

/// Convolutional proposal head over trunk features.
#[derive(Clone, Debug)]
pub struct DetectorHead {
    conv1: Conv1d,
    conv2: Conv1d,
    conv3: Conv1d,
    cls: Linear,
    reg: Linear,
    pool: (usize, usize),
    n_scales: usize,
}

impl DetectorHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        channels: usize,
        n_scales: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), in_dim, channels, 8, rng),
            conv2: Conv1d::new(store, &format!("{name}.conv2"), channels, channels, 3, rng),
            conv3: Conv1d::new(store, &format!("{name}.conv3"), channels, channels, 3, rng),
            cls: Linear::new(store, &format!("{name}.cls"), channels, n_scales, rng),
            reg: Linear::new(store, &format!("{name}.reg"), channels, 2 * n_scales, rng),
            pool: (8, 4),
            n_scales,
        }
    }

    pub fn chain(&self) -> TemporalChain {
        TemporalChain::new(vec![
            TemporalLayer::Conv {
                kernel: self.conv1.kernel,
            },
            TemporalLayer::Pool {
                kernel: self.pool.0,
                stride: self.pool.1,
            },
            TemporalLayer::Conv {
                kernel: self.conv2.kernel,
            },
            TemporalLayer::Conv {
                kernel: self.conv3.kernel,
            },
        ])
    }

    pub fn n_scales(&self) -> usize {
        self.n_scales
    }

    pub fn forward(&self, g: &mut Graph, feats: Var) -> Result<HeadOutput> {
        let frames = g.shape(feats).0;
        if frames < self.pool.0 {
            return Err(FssError::ClipTooShort {
                len: frames,
                min: self.pool.0,
            });
        }
        let h = self.conv1.forward(g, feats)?;
        let h = g.relu(h)?;
        let h = g.max_pool(h, self.pool.0, self.pool.1)?;
        let h = self.conv2.forward(g, h)?;
        let h = g.relu(h)?;
        let h = self.conv3.forward(g, h)?;
        let h = g.relu(h)?;
        let cls = self.cls.forward(g, h)?;
        let reg = self.reg.forward(g, h)?;
        Ok(HeadOutput { cls, reg })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Every anchor's decoded segment and probability, in anchor order.
/// `reg` holds deltas in units of `reg_std`.
pub fn decode_all(cls: &Mat, reg: &Mat, anchors: &[Anchor], frames: usize, reg_std: [f64; 2]) -> Vec<Proposal> {
    let n_scales = cls.ncols();
    anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (r, k) = (i / n_scales, i % n_scales);
            Proposal {
                segment: decode(
                    a,
                    [reg[[r, 2 * k]] * reg_std[0], reg[[r, 2 * k + 1]] * reg_std[1]],
                    frames,
                ),
                p_det: sigmoid(cls[[r, k]]),
            }
        })
        .collect()
}

/// Decoded, clipped and NMS-filtered proposals sorted by `p_det`.
pub fn proposals_from_outputs(
    cls: &Mat,
    reg: &Mat,
    anchors: &[Anchor],
    frames: usize,
    cfg: &DetectorConfig,
) -> Vec<Proposal> {
    nms(
        &decode_all(cls, reg, anchors, frames, cfg.reg_std),
        cfg.nms_iou,
        cfg.max_proposals,
    )
}
