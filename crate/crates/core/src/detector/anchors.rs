use fss_nnkit::{TemporalChain, TemporalLayer};
use serde::{Deserialize, Serialize};

use crate::domain::Segment;
use crate::error::{FssError, Result};

pub const DEFAULT_SCALES: [usize; 20] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 14, 16, 18, 20, 24, 32, 40, 60, 75,
];

/// conv(k=8), max-pool(k=8, s=4), conv(k=3), conv(k=3).
pub fn default_chain() -> TemporalChain {
    TemporalChain::new(vec![
        TemporalLayer::Conv { kernel: 8 },
        TemporalLayer::Pool {
            kernel: 8,
            stride: 4,
        },
        TemporalLayer::Conv { kernel: 3 },
        TemporalLayer::Conv { kernel: 3 },
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor {
    /// Feature-map position.
    pub pos: usize,
    /// Index into the grid's scale list.
    pub scale: usize,
    pub center: f64,
    pub len: f64,
    /// The anchor clipped to the clip.
    pub segment: Segment,
}

/// Anchors of every scale at every feature-map position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub scales: Vec<usize>,
}

impl Default for AnchorGrid {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

impl AnchorGrid {
    pub fn new(scales: Vec<usize>) -> Result<Self> {
        if scales.is_empty() || scales.contains(&0) {
            return Err(FssError::Config("anchor scales must be non-empty and positive".into()));
        }
        Ok(Self { scales })
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    /// Anchors for a clip of `frames` frames, position-major then scale.
    /// Anchor `pos * n_scales + k` has scale `k`.
    pub fn anchors(&self, chain: &TemporalChain, frames: usize) -> Result<Vec<Anchor>> {
        let positions = chain.output_len(frames).map_err(|_| FssError::ClipTooShort {
            len: frames,
            min: chain.min_len(),
        })?;
        let mut out = Vec::with_capacity(positions * self.scales.len());
        for pos in 0..positions {
            let center = chain.frame_center(pos);
            for (scale, &len) in self.scales.iter().enumerate() {
                out.push(Anchor {
                    pos,
                    scale,
                    center,
                    len: len as f64,
                    segment: Segment::from_center(center, len as f64, frames),
                });
            }
        }
        Ok(out)
    }
}

/// Largest `|log length ratio|` the decoder accepts.
const MAX_LOG_RATIO: f64 = 6.0;

/// `(Δcenter / anchor_len, ln(len / anchor_len))`.
pub fn regression_target(anchor: &Anchor, gt: Segment) -> [f64; 2] {
    [
        (gt.center() - anchor.center) / anchor.len,
        (gt.len() as f64 / anchor.len).ln(),
    ]
}

/// Inverse of [`regression_target`], clipped to `[0, frames)`.
pub fn decode(anchor: &Anchor, delta: [f64; 2], frames: usize) -> Segment {
    let center = anchor.center + delta[0] * anchor.len;
    let len = anchor.len * delta[1].clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    let center = if center.is_finite() { center } else { anchor.center };
    Segment::from_center(center, len, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_on_standard_clip() {
        let grid = AnchorGrid::default();
        let a = grid.anchors(&default_chain(), 300).unwrap();
        assert_eq!(a.len(), 74 * 20);
        assert_eq!(a[0].center, 4.0);
        assert_eq!(a[20].center, 8.0);
        assert_eq!(a[19].segment, Segment::new(0, 42).unwrap());
        assert!(a.iter().all(|x| x.segment.end() <= 300));
        let last = a.last().unwrap();
        assert_eq!(last.center, 296.0);
    }

    #[test]
    fn too_short_clip() {
        let e = AnchorGrid::default().anchors(&default_chain(), 5).unwrap_err();
        assert!(matches!(e, FssError::ClipTooShort { len: 5, min: 8 }));
    }

    #[test]
    fn decode_inverts_target() {
        let grid = AnchorGrid::default();
        let anchors = grid.anchors(&default_chain(), 300).unwrap();
        let gt = Segment::new(101, 117).unwrap();
        for a in anchors.iter().filter(|a| a.pos > 20 && a.pos < 35) {
            let t = regression_target(a, gt);
            assert_eq!(decode(a, t, 300), gt, "{a:?}");
        }
        let exact = anchors.iter().find(|a| a.segment == Segment::new(8, 16).unwrap()).unwrap();
        assert_eq!(regression_target(exact, exact.segment), [0.0, 0.0]);
    }
}
