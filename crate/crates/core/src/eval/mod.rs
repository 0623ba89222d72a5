//! Relevance judgments, retrieval and localization metrics, and reports.

mod metrics;
mod report;

pub use metrics::{
    ap_at_iou, average_precision, interpolated_ap, mean_f1, precision_recall_at_n, random_ranking_ap, AtN,
    ClipSegment, ScoredSegment,
};
pub use report::{
    evaluate, localization, render_table, DirectionReport, Metric, MetricReport, QueryRecord, Summary,
    IOU_THRESHOLDS,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::Clip;
use crate::search::Direction;

/// Relevant items per query for one split and direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgments {
    pub direction: Direction,
    /// Every query, in order.
    pub queries: Vec<String>,
    /// Every candidate item, in order.
    pub candidates: Vec<String>,
    pub relevant: BTreeMap<String, BTreeSet<String>>,
}

impl Judgments {
    pub fn relevant_to(&self, query: &str) -> BTreeSet<String> {
        self.relevant.get(query).cloned().unwrap_or_default()
    }
}

/// Vocabulary is the set of ground-truth words of `clips`. For word search
/// each clip is a query and its words are relevant; for video search each
/// word is a query and the clips containing it are relevant.
pub fn build_judgments(clips: &[Clip], direction: Direction) -> Judgments {
    let vocab: BTreeSet<String> = clips
        .iter()
        .flat_map(|c| c.ground_truth.iter().map(|g| g.text.to_string()))
        .collect();
    let clip_ids: Vec<String> = clips.iter().map(|c| c.id.clone()).collect();
    let mut relevant: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    match direction {
        Direction::Fws => {
            for c in clips {
                relevant.insert(
                    c.id.clone(),
                    c.ground_truth.iter().map(|g| g.text.to_string()).collect(),
                );
            }
            Judgments {
                direction,
                queries: clip_ids,
                candidates: vocab.into_iter().collect(),
                relevant,
            }
        }
        Direction::Fvs => {
            for c in clips {
                for g in &c.ground_truth {
                    relevant.entry(g.text.to_string()).or_default().insert(c.id.clone());
                }
            }
            Judgments {
                direction,
                queries: vocab.into_iter().collect(),
                candidates: clip_ids,
                relevant,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{LabeledSegment, Query, Segment};
    use fss_nnkit::Mat;

    fn clip(id: &str, words: &[(usize, usize, &str)]) -> Clip {
        Clip::new(
            id.into(),
            Mat::zeros((50, 2)),
            words
                .iter()
                .map(|&(s, t, w)| LabeledSegment {
                    segment: Segment::new(s, t).unwrap(),
                    text: Query::new(w).unwrap(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn set_semantics_and_counts() {
        let clips = [
            clip("a", &[(0, 5, "HI"), (10, 15, "HI")]),
            clip("b", &[(0, 5, "HI"), (20, 25, "YO")]),
            clip("c", &[(0, 5, "HI")]),
            clip("d", &[]),
        ];
        let fws = build_judgments(&clips, Direction::Fws);
        assert_eq!(fws.relevant_to("a").len(), 1);
        assert_eq!(fws.candidates, vec!["HI", "YO"]);
        assert!(fws.relevant_to("d").is_empty());
        let fvs = build_judgments(&clips, Direction::Fvs);
        assert_eq!(fvs.relevant_to("HI").len(), 3);
        assert_eq!(fvs.queries, vec!["HI", "YO"]);
        assert_eq!(fvs.candidates.len(), 4);
    }
}
