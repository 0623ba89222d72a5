use fss_nnkit::{Graph, Mat, Var};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use super::assign::{AnchorLabel, DetectionTargets};
use crate::error::Result;

/// Per-element targets and weights for one clip's detection loss, laid out
/// like the head outputs: `positions x n_scales` for classification and
/// `positions x 2 n_scales` for regression.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub cls_targets: Mat,
    pub cls_weights: Mat,
    pub reg_targets: Mat,
    pub reg_weights: Mat,
}

/// Keeps every positive and at most `neg_ratio * max(n_pos, 1)` negatives
/// drawn uniformly. Classification weights average over the kept anchors;
/// regression weights average over positives, whose targets are divided by
/// `reg_std`.
pub fn loss_weights<R: Rng + ?Sized>(
    targets: &DetectionTargets,
    n_scales: usize,
    neg_ratio: usize,
    reg_std: [f64; 2],
    rng: &mut R,
) -> LossWeights {
    let n = targets.labels.len();
    let rows = n / n_scales;
    let positives: Vec<usize> = (0..n)
        .filter(|&i| targets.labels[i] == AnchorLabel::Positive)
        .collect();
    let negatives: Vec<usize> = (0..n)
        .filter(|&i| targets.labels[i] == AnchorLabel::Negative)
        .collect();
    let keep = negatives.len().min(neg_ratio * positives.len().max(1));
    let mut kept_neg: Vec<usize> = sample(rng, negatives.len(), keep)
        .into_iter()
        .map(|k| negatives[k])
        .collect();
    kept_neg.sort_unstable();

    let mut w = LossWeights {
        cls_targets: Array2::zeros((rows, n_scales)),
        cls_weights: Array2::zeros((rows, n_scales)),
        reg_targets: Array2::zeros((rows, 2 * n_scales)),
        reg_weights: Array2::zeros((rows, 2 * n_scales)),
    };
    let n_cls = positives.len() + kept_neg.len();
    if n_cls > 0 {
        let cw = 1.0 / n_cls as f64;
        for &i in &positives {
            w.cls_targets[[i / n_scales, i % n_scales]] = 1.0;
            w.cls_weights[[i / n_scales, i % n_scales]] = cw;
        }
        for &i in &kept_neg {
            w.cls_weights[[i / n_scales, i % n_scales]] = cw;
        }
    }
    if !positives.is_empty() {
        let rw = 1.0 / positives.len() as f64;
        for &i in &positives {
            let (r, k) = (i / n_scales, i % n_scales);
            for c in 0..2 {
                w.reg_targets[[r, 2 * k + c]] = targets.regression[i][c] / reg_std[c];
                w.reg_weights[[r, 2 * k + c]] = rw;
            }
        }
    }
    w
}

/// Mean BCE over the kept anchors plus mean smooth-L1 over positives.
pub fn detection_loss(g: &mut Graph, cls: Var, reg: Var, w: &LossWeights) -> Result<Var> {
    let a = g.bce_with_logits(cls, &w.cls_targets, &w.cls_weights)?;
    let b = g.smooth_l1(reg, &w.reg_targets, &w.reg_weights)?;
    Ok(g.add(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::anchors::Anchor;
    use crate::detector::assign::{assign_anchors, AssignConfig};
    use crate::domain::Segment;
    use fss_nnkit::ParamStore;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn anchor(s: usize, t: usize) -> Anchor {
        let segment = Segment::new(s, t).unwrap();
        Anchor {
            pos: 0,
            scale: 0,
            center: segment.center(),
            len: segment.len() as f64,
            segment,
        }
    }

    fn eval(cls: Mat, reg: Mat, w: &LossWeights) -> f64 {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let c = g.constant(cls).unwrap();
        let r = g.constant(reg).unwrap();
        let l = detection_loss(&mut g, c, r, w).unwrap();
        g.scalar(l)
    }

    #[test]
    fn two_anchor_toy_case() {
        // (0,8) has IoU 0.8 with the GT (positive); (20,28) is disjoint (negative).
        let anchors = [anchor(0, 8), anchor(20, 28)];
        let t = assign_anchors(&anchors, &[Segment::new(0, 10).unwrap()], &AssignConfig::default());
        let w = loss_weights(&t, 1, 3, [1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0));
        let cls = array![[1.0], [-2.0]];
        let reg = array![[0.1, 0.5], [7.0, 7.0]];
        // targets: dc = (5 - 4)/8 = 0.125, dl = ln(10/8)
        let dl = (10.0f64 / 8.0).ln();
        let bce_pos = (1.0 + (-1.0f64).exp()).ln();
        let bce_neg = (1.0 + (-2.0f64).exp()).ln();
        let sl1 = 0.5 * (0.1f64 - 0.125).powi(2) + 0.5 * (0.5 - dl).powi(2);
        let expected = (bce_pos + bce_neg) / 2.0 + sl1;
        assert!((eval(cls, reg, &w) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_positives_uniform_logits_give_ln2() {
        let anchors: Vec<Anchor> = (0..10).map(|i| anchor(10 * i, 10 * i + 5)).collect();
        let t = assign_anchors(&anchors, &[], &AssignConfig::default());
        let w = loss_weights(&t, 1, 3, [1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(w.cls_weights.iter().filter(|&&v| v > 0.0).count(), 3);
        let v = eval(Array2::zeros((10, 1)), Array2::zeros((10, 2)), &w);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_exact_predictions_approach_zero() {
        let anchors = [anchor(0, 10), anchor(40, 50)];
        let t = assign_anchors(&anchors, &[Segment::new(0, 10).unwrap()], &AssignConfig::default());
        let w = loss_weights(&t, 1, 3, [1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0));
        let v = eval(array![[40.0], [-40.0]], Array2::zeros((2, 2)), &w);
        assert!(v < 1e-15);
    }

    #[test]
    fn nothing_labeled_gives_zero() {
        let t = DetectionTargets {
            labels: vec![AnchorLabel::Ignore],
            matched: vec![None],
            regression: vec![[0.0, 0.0]],
        };
        let w = loss_weights(&t, 1, 3, [1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(eval(array![[3.0]], array![[1.0, 1.0]], &w), 0.0);
    }
}
