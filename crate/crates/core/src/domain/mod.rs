//! Domain types shared by every stage: the symbol alphabet, frame intervals,
//! clips, queries, and edit distance.

mod alphabet;
mod clip;
mod edit;
mod interval;

pub use alphabet::Alphabet;
pub use clip::{Clip, LabeledSegment, Query};
pub use edit::{ler, levenshtein};
pub use interval::{intersection, iou, is_ratio, Segment};
