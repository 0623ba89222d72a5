use serde::{Deserialize, Serialize};

use crate::error::{FssError, Result};

/// Half-open frame interval `[start, end)` with at least one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct Segment {
    start: usize,
    end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start < end {
            Ok(Self { start, end })
        } else {
            Err(FssError::InvalidSegment { start, end })
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    /// Always false; a segment holds at least one frame.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn center(&self) -> f64 {
        (self.start + self.end) as f64 / 2.0
    }

    /// Builds the segment covering `[center - len/2, center + len/2)` rounded
    /// to frames and clipped to `[0, frames)`; at least one frame long.
    pub fn from_center(center: f64, len: f64, frames: usize) -> Self {
        let frames = frames.max(1);
        let lo = (center - len / 2.0).round().clamp(0.0, (frames - 1) as f64) as usize;
        let hi = (center + len / 2.0).round().clamp(1.0, frames as f64) as usize;
        let hi = hi.max(lo + 1);
        Self { start: lo, end: hi }
    }
}

impl TryFrom<(usize, usize)> for Segment {
    type Error = FssError;

    fn try_from((s, t): (usize, usize)) -> Result<Self> {
        Segment::new(s, t)
    }
}

impl From<Segment> for (usize, usize) {
    fn from(s: Segment) -> Self {
        (s.start, s.end)
    }
}

pub fn intersection(a: Segment, b: Segment) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

pub fn iou(a: Segment, b: Segment) -> f64 {
    let inter = intersection(a, b);
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Fraction of `y` covered by `x`.
pub fn is_ratio(x: Segment, y: Segment) -> f64 {
    intersection(x, y) as f64 / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn seg(s: usize, t: usize) -> Segment {
        Segment::new(s, t).unwrap()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(intersection(seg(0, 10), seg(5, 15)), 5);
        assert_eq!(intersection(seg(0, 10), seg(0, 10)), 10);
        assert_eq!(intersection(seg(0, 5), seg(5, 10)), 0);
        assert!((iou(seg(0, 10), seg(5, 15)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(seg(3, 9), seg(3, 9)), 1.0);
        assert_eq!(iou(seg(0, 3), seg(7, 9)), 0.0);
        assert_eq!(is_ratio(seg(0, 10), seg(5, 15)), 0.5);
        assert_eq!(is_ratio(seg(0, 10), seg(2, 6)), 1.0);
        assert_eq!(is_ratio(seg(0, 2), seg(4, 6)), 0.0);
    }

    #[test]
    fn rejects_empty_segment() {
        assert!(Segment::new(4, 4).is_err());
        assert!(Segment::new(5, 4).is_err());
        assert!(serde_json::from_str::<Segment>("[3,3]").is_err());
    }

    #[test]
    fn from_center_clips() {
        let s = Segment::from_center(2.0, 20.0, 300);
        assert_eq!((s.start(), s.end()), (0, 12));
        let s = Segment::from_center(299.0, 20.0, 300);
        assert_eq!((s.start(), s.end()), (289, 300));
        let s = Segment::from_center(-50.0, 1.0, 300);
        assert_eq!((s.start(), s.end()), (0, 1));
    }

    fn frames(s: Segment) -> BTreeSet<usize> {
        (s.start()..s.end()).collect()
    }

    fn arb_seg() -> impl Strategy<Value = Segment> {
        (0usize..60, 1usize..30).prop_map(|(s, l)| seg(s, s + l))
    }

    proptest! {
        #[test]
        fn matches_frame_set_oracle(a in arb_seg(), b in arb_seg()) {
            let (fa, fb) = (frames(a), frames(b));
            let inter = fa.intersection(&fb).count();
            let union = fa.union(&fb).count();
            prop_assert_eq!(intersection(a, b), inter);
            prop_assert_eq!(intersection(a, b), intersection(b, a));
            prop_assert!((iou(a, b) - inter as f64 / union as f64).abs() < 1e-15);
            prop_assert_eq!(iou(a, b), iou(b, a));
            prop_assert!((is_ratio(a, b) - inter as f64 / fb.len() as f64).abs() < 1e-15);
            if a == b {
                prop_assert_eq!(is_ratio(a, b), iou(a, b));
            }
        }
    }
}
