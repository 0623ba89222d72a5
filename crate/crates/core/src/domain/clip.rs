use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::alphabet::Alphabet;
use super::interval::{intersection, Segment};
use crate::error::{FssError, Result};

/// A word or phrase over the alphabet; stored uppercase.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Query(String);

impl Query {
    pub fn new(text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(FssError::EmptyText);
        }
        Alphabet::encode(text)?;
        Ok(Self(text.to_ascii_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Character indices, e.g. "ASL" -> A, S, L.
    pub fn symbols(&self) -> Vec<usize> {
        Alphabet::encode(&self.0).expect("validated at construction")
    }

    pub fn len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<String> for Query {
    type Error = FssError;

    fn try_from(s: String) -> Result<Self> {
        Query::new(&s)
    }
}

impl From<Query> for String {
    fn from(q: Query) -> Self {
        q.0
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub segment: Segment,
    pub text: Query,
}

/// A `T x D` frame-feature sequence with its labeled fingerspelling segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub id: String,
    pub frames: Array2<f64>,
    pub ground_truth: Vec<LabeledSegment>,
}

impl Clip {
    pub fn new(id: String, frames: Array2<f64>, mut ground_truth: Vec<LabeledSegment>) -> Result<Self> {
        let len = frames.nrows();
        let bad = |msg: String| FssError::InvalidClip {
            id: id.clone(),
            msg,
        };
        if len == 0 {
            return Err(bad("no frames".into()));
        }
        ground_truth.sort_by_key(|g| g.segment);
        for g in &ground_truth {
            if g.segment.end() > len {
                return Err(bad(format!(
                    "segment {:?} beyond {len} frames",
                    g.segment
                )));
            }
        }
        for pair in ground_truth.windows(2) {
            if intersection(pair[0].segment, pair[1].segment) > 0 {
                return Err(bad(format!(
                    "segments {:?} and {:?} overlap",
                    pair[0].segment, pair[1].segment
                )));
            }
        }
        Ok(Self {
            id,
            frames,
            ground_truth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.ground_truth.iter().map(|g| g.segment)
    }

    pub fn contains_word(&self, w: &Query) -> bool {
        self.ground_truth.iter().any(|g| &g.text == w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(s: usize, t: usize, w: &str) -> LabeledSegment {
        LabeledSegment {
            segment: Segment::new(s, t).unwrap(),
            text: Query::new(w).unwrap(),
        }
    }

    #[test]
    fn query_invariants() {
        assert!(Query::new("").is_err());
        assert!(Query::new("A1").is_err());
        assert_eq!(Query::new("asl").unwrap().as_str(), "ASL");
        assert_eq!(Query::new("ASL").unwrap().symbols(), vec![0, 18, 11]);
    }

    #[test]
    fn clip_validates_ground_truth() {
        let f = Array2::zeros((20, 2));
        assert!(Clip::new("a".into(), f.clone(), vec![lab(0, 5, "A"), lab(5, 9, "B")]).is_ok());
        assert!(Clip::new("a".into(), f.clone(), vec![lab(0, 6, "A"), lab(5, 9, "B")]).is_err());
        assert!(Clip::new("a".into(), f, vec![lab(15, 21, "A")]).is_err());
    }
}
