use crate::error::{FssError, Result};

/// Levenshtein distance with unit insert/delete/substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Letter error rate: edit distance normalized by the reference length.
pub fn ler(hyp: &str, reference: &str) -> Result<f64> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(FssError::EmptyReference);
    }
    let h: Vec<char> = hyp.chars().collect();
    Ok(levenshtein(&h, &r) as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Full-matrix recursion, kept separate from the rolling-row version.
    fn oracle(a: &[u8], b: &[u8]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + c);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn ler_examples() {
        assert_eq!(ler("ASL", "ASL").unwrap(), 0.0);
        assert!((ler("ALL", "ASL").unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ler("", "ASL").unwrap(), 1.0);
        assert!(matches!(ler("A", ""), Err(FssError::EmptyReference)));
    }

    proptest! {
        #[test]
        fn matches_dp_oracle(a in "[ABC]{0,8}", b in "[ABC]{0,8}", c in "[ABC]{0,8}") {
            let (a, b, c) = (a.as_bytes(), b.as_bytes(), c.as_bytes());
            prop_assert_eq!(levenshtein(a, b), oracle(a, b));
            prop_assert_eq!(levenshtein(a, b), levenshtein(b, a));
            prop_assert_eq!(levenshtein(a, a), 0);
            prop_assert!(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
        }
    }
}
