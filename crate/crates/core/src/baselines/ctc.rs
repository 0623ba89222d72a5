//! CTC loss, prefix beam search and edit-distance scoring of decoded words.

use std::collections::BTreeMap;

use fss_nnkit::{Graph, Mat, Var};
use ndarray::Array2;

use crate::domain::{ler, Alphabet, Clip};
use crate::error::{FssError, Result};

fn lse(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - z);
    }
    out
}

/// Frames needed to emit `target`: one per label plus a blank between
/// repeated neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under per-frame `logits` (`T x C`,
/// unnormalized) summed over all alignments, and its gradient with respect
/// to the logits.
pub fn ctc_value_and_grad(logits: &Mat, target: &[usize], blank: usize) -> Result<(f64, Mat)> {
    let (t_len, n_cls) = logits.dim();
    if blank >= n_cls || target.iter().any(|&l| l >= n_cls || l == blank) {
        return Err(FssError::Dimension(format!(
            "labels must be non-blank indices below {n_cls}"
        )));
    }
    let need = min_frames(target).max(1);
    if t_len < need {
        return Err(FssError::TargetTooLong { needed: need, frames: t_len });
    }
    let lp = log_softmax_rows(logits);
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    let s_len = ext.len();
    let skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    alpha[[0, 0]] = lp[[0, blank]];
    if s_len > 1 {
        alpha[[0, 1]] = lp[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[[t - 1, s]];
            if s >= 1 {
                a = lse(a, alpha[[t - 1, s - 1]]);
            }
            if skip(s) {
                a = lse(a, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = a + lp[[t, ext[s]]];
        }
    }
    let last = t_len - 1;
    let log_p = if s_len > 1 {
        lse(alpha[[last, s_len - 1]], alpha[[last, s_len - 2]])
    } else {
        alpha[[last, 0]]
    };

    // beta[t, s]: log-probability of completing the target from state s at t,
    // excluding frame t's emission.
    let mut beta = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    beta[[last, s_len - 1]] = 0.0;
    if s_len > 1 {
        beta[[last, s_len - 2]] = 0.0;
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut b = beta[[t + 1, s]] + lp[[t + 1, ext[s]]];
            if s + 1 < s_len {
                b = lse(b, beta[[t + 1, s + 1]] + lp[[t + 1, ext[s + 1]]]);
            }
            if s + 2 < s_len && skip(s + 2) {
                b = lse(b, beta[[t + 1, s + 2]] + lp[[t + 1, ext[s + 2]]]);
            }
            beta[[t, s]] = b;
        }
    }

    let mut grad = lp.mapv(f64::exp);
    for t in 0..t_len {
        for s in 0..s_len {
            let v = alpha[[t, s]] + beta[[t, s]];
            if v > f64::NEG_INFINITY {
                grad[[t, ext[s]]] -= (v - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// CTC loss node over a `T x C` logits node.
pub fn ctc_loss(g: &mut Graph, logits: Var, target: &[usize], blank: usize) -> Result<Var> {
    let (value, grad) = ctc_value_and_grad(g.value(logits), target, blank)?;
    Ok(g.scalar_loss(logits, value, grad)?)
}

/// Training target of a clip: its words in temporal order separated by
/// `<x>`, with `<x>` at either end when the clip starts or ends outside
/// fingerspelling. A clip without words is the single label `<x>`.
pub fn transcript(clip: &Clip) -> Vec<usize> {
    let mut out = Vec::new();
    let mut cursor = 0;
    for gt in &clip.ground_truth {
        if !out.is_empty() || gt.segment.start() > 0 {
            out.push(Alphabet::X);
        }
        out.extend(gt.text.symbols());
        cursor = gt.segment.end();
    }
    if out.is_empty() || cursor < clip.len() {
        out.push(Alphabet::X);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Collapsed labels, no blanks.
    pub labels: Vec<usize>,
    pub log_prob: f64,
}

/// Collapses repeats and drops blanks from the per-frame argmax.
pub fn greedy_decode(log_probs: &Mat, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.rows() {
        let best = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if Some(best.0) != prev && best.0 != blank {
            out.push(best.0);
        }
        prev = Some(best.0);
    }
    out
}

/// Prefix beam search over `T x C` log-probabilities. Returns up to `width`
/// hypotheses, most probable first (ties by label order).
pub fn beam_search(log_probs: &Mat, width: usize, blank: usize) -> Vec<Hypothesis> {
    let width = width.max(1);
    let ninf = f64::NEG_INFINITY;
    // prefix -> (ends in blank, ends in label)
    let mut beams: Vec<(Vec<usize>, f64, f64)> = vec![(Vec::new(), 0.0, ninf)];
    for row in log_probs.rows() {
        let mut next: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        for (prefix, pb, pnb) in &beams {
            let total = lse(*pb, *pnb);
            let e = next.entry(prefix.clone()).or_insert((ninf, ninf));
            e.0 = lse(e.0, total + row[blank]);
            let last = prefix.last().copied();
            for (c, &p) in row.iter().enumerate() {
                if c == blank {
                    continue;
                }
                let mut ext = prefix.clone();
                ext.push(c);
                if last == Some(c) {
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = lse(e.1, pb + p);
                    let same = next.get_mut(prefix).expect("inserted above");
                    same.1 = lse(same.1, pnb + p);
                } else {
                    let e = next.entry(ext).or_insert((ninf, ninf));
                    e.1 = lse(e.1, total + p);
                }
            }
        }
        let mut all: Vec<(Vec<usize>, f64, f64)> = next.into_iter().map(|(k, (b, n))| (k, b, n)).collect();
        all.sort_by(|a, b| lse(b.1, b.2).total_cmp(&lse(a.1, a.2)).then_with(|| a.0.cmp(&b.0)));
        all.truncate(width);
        beams = all;
    }
    beams
        .into_iter()
        .map(|(labels, pb, pnb)| Hypothesis {
            labels,
            log_prob: lse(pb, pnb),
        })
        .collect()
}

/// Splits labels on `<x>` into non-empty words.
pub fn split_words(labels: &[usize]) -> Vec<String> {
    labels
        .split(|&l| l == Alphabet::X)
        .filter(|w| !w.is_empty())
        .map(Alphabet::decode)
        .collect()
}

/// `1 - min LER` between `query` and any decoded word, LER capped at 1. A
/// hypothesis without words counts as LER 1; no hypotheses score 0.
pub fn recognizer_score(hypotheses: &[Vec<String>], query: &str) -> Result<f64> {
    let mut best = 1.0f64;
    for words in hypotheses {
        for w in words {
            best = best.min(ler(w, query)?.min(1.0));
        }
    }
    Ok(1.0 - best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{LabeledSegment, Query, Segment};
    use fss_nnkit::gradcheck::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, t: usize, c: usize) -> Mat {
        Mat::from_shape_fn((t, c), |_| rng.random_range(-2.0..2.0))
    }

    fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut prev = None;
        for &p in path {
            if Some(p) != prev && p != blank {
                out.push(p);
            }
            prev = Some(p);
        }
        out
    }

    /// Probability mass of every collapsed label sequence, by enumerating
    /// all `C^T` frame paths.
    fn path_sums(lp: &Mat, blank: usize) -> BTreeMap<Vec<usize>, f64> {
        let (t, c) = lp.dim();
        let mut sums = BTreeMap::new();
        let mut path = vec![0usize; t];
        loop {
            let logp: f64 = path.iter().enumerate().map(|(i, &k)| lp[[i, k]]).sum();
            *sums.entry(collapse(&path, blank)).or_insert(0.0) += logp.exp();
            let mut i = 0;
            loop {
                if i == t {
                    return sums;
                }
                path[i] += 1;
                if path[i] < c {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn single_frame_single_label() {
        let logits = ndarray::array![[0.3, -1.0, 2.0]];
        let lp = log_softmax_rows(&logits);
        let (v, _) = ctc_value_and_grad(&logits, &[0], 2).unwrap();
        assert!((v + lp[[0, 0]]).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let t = rng.random_range(1..=6);
            let c = rng.random_range(2..=4);
            let blank = c - 1;
            let logits = random_logits(&mut rng, t, c);
            let sums = path_sums(&log_softmax_rows(&logits), blank);
            for (target, p) in &sums {
                let (v, _) = ctc_value_and_grad(&logits, target, blank).unwrap();
                assert!((v + p.ln()).abs() < 1e-10, "{target:?}: {v} vs {}", -p.ln());
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let t = rng.random_range(3..=6);
            let c = 4;
            let logits = random_logits(&mut rng, t, c);
            let target: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(0..3)).collect();
            let (_, grad) = ctc_value_and_grad(&logits, &target, 3).unwrap();
            let h = 1e-4;
            for i in 0..t {
                for k in 0..c {
                    let mut up = logits.clone();
                    up[[i, k]] += h;
                    let mut dn = logits.clone();
                    dn[[i, k]] -= h;
                    let num = (ctc_value_and_grad(&up, &target, 3).unwrap().0
                        - ctc_value_and_grad(&dn, &target, 3).unwrap().0)
                        / (2.0 * h);
                    assert!(relative_error(grad[[i, k]], num) < 1e-4, "{} vs {num}", grad[[i, k]]);
                }
            }
        }
    }

    #[test]
    fn too_long_target_is_rejected() {
        let logits = Mat::zeros((2, 3));
        assert!(matches!(
            ctc_value_and_grad(&logits, &[0, 0], 2),
            Err(FssError::TargetTooLong { needed: 3, frames: 2 })
        ));
        assert!(ctc_value_and_grad(&logits, &[2], 2).is_err());
    }

    #[test]
    fn wide_beam_is_exact_on_tiny_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let logits = random_logits(&mut rng, 4, 3);
            let lp = log_softmax_rows(&logits);
            let sums = path_sums(&lp, 2);
            let best = sums
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
                .unwrap();
            // 31 distinct prefixes of length <= 4 over two labels.
            let hyps = beam_search(&lp, 31, 2);
            assert_eq!(&hyps[0].labels, best.0);
            assert!((hyps[0].log_prob - best.1.ln()).abs() < 1e-10);
            for w in hyps.windows(2) {
                assert!(w[0].log_prob >= w[1].log_prob);
            }
        }
    }

    #[test]
    fn width_one_is_greedy_on_peaked_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut logits = random_logits(&mut rng, 8, 5);
            for mut row in logits.rows_mut() {
                let k = rng.random_range(0..5);
                row[k] += 12.0;
            }
            let lp = log_softmax_rows(&logits);
            assert_eq!(beam_search(&lp, 1, 4)[0].labels, greedy_decode(&lp, 4));
            assert_eq!(beam_search(&lp, 10, 4), beam_search(&lp, 10, 4));
        }
    }

    #[test]
    fn transcript_marks_non_fingerspelling() {
        let ls = |s, t, w| LabeledSegment {
            segment: Segment::new(s, t).unwrap(),
            text: Query::new(w).unwrap(),
        };
        let clip = Clip::new("c".into(), Mat::zeros((30, 1)), vec![ls(0, 5, "AB"), ls(10, 20, "C")]).unwrap();
        let x = Alphabet::X;
        assert_eq!(transcript(&clip), vec![0, 1, x, 2, x]);
        let empty = Clip::new("e".into(), Mat::zeros((30, 1)), vec![]).unwrap();
        assert_eq!(transcript(&empty), vec![x]);
        let full = Clip::new("f".into(), Mat::zeros((30, 1)), vec![ls(3, 30, "A")]).unwrap();
        assert_eq!(transcript(&full), vec![x, 0]);
    }

    #[test]
    fn recognizer_score_examples() {
        let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(recognizer_score(&[words(&["NEW", "ASL"])], "ASL").unwrap(), 1.0);
        let v = recognizer_score(&[words(&["ALL"])], "ASL").unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(recognizer_score(&[], "ASL").unwrap(), 0.0);
        assert_eq!(recognizer_score(&[words(&[])], "ASL").unwrap(), 0.0);
        assert_eq!(recognizer_score(&[words(&["QQQQQQQ"])], "ASL").unwrap(), 0.0);
        assert_eq!(split_words(&[Alphabet::X, 0, 18, 11, Alphabet::X, Alphabet::X, 1]), words(&["ASL", "B"]));
    }
}
