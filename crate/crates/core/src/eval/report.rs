use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{ap_at_iou, average_precision, mean_f1, precision_recall_at_n, ClipSegment, ScoredSegment};
use super::Judgments;
use crate::error::{FssError, Result};
use crate::search::{Direction, RankedList};

pub const IOU_THRESHOLDS: [f64; 3] = [0.1, 0.3, 0.5];

/// A mean metric value and the best value any ranking could reach.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
    pub n_relevant: usize,
    /// Character count for word queries.
    pub query_len: Option<usize>,
    pub ap: f64,
    pub f1: f64,
    pub p_at_1: f64,
    pub p_at_10: f64,
    pub r_at_1: f64,
    pub r_at_10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_queries: usize,
    pub map: Metric,
    pub mf1: Metric,
    pub p_at_1: Metric,
    pub p_at_10: Metric,
    pub r_at_1: Metric,
    pub r_at_10: Metric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: Direction,
    pub summary: Summary,
    pub queries: Vec<QueryRecord>,
}

impl DirectionReport {
    /// Mean AP over queries whose character count satisfies `keep`.
    pub fn map_where(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let aps: Vec<f64> = self
            .queries
            .iter()
            .filter(|q| q.query_len.is_some_and(&keep))
            .map(|q| q.ap)
            .collect();
        (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub system: String,
    pub split: String,
    pub directions: Vec<DirectionReport>,
    /// `(threshold, AP)` pairs for segment localization.
    pub ap_at_iou: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn direction(&self, d: Direction) -> Option<&DirectionReport> {
        self.directions.iter().find(|r| r.direction == d)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FssError::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Scores rankings against judgments. Queries without relevant items are
/// skipped; a query with no ranking counts as retrieving nothing.
pub fn evaluate(lists: &[RankedList], judgments: &Judgments) -> Result<DirectionReport> {
    let mut by_query: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for l in lists {
        if !judgments.relevant.contains_key(&l.query) && !judgments.queries.contains(&l.query) {
            return Err(FssError::Dimension(format!("ranking for unknown query {:?}", l.query)));
        }
        if by_query
            .insert(l.query.as_str(), l.items.iter().map(|(id, _)| id.clone()).collect())
            .is_some()
        {
            return Err(FssError::Duplicate(format!("query {}", l.query)));
        }
    }
    let mut records = Vec::new();
    let mut maxima = Vec::new();
    for q in &judgments.queries {
        let rel = judgments.relevant_to(q);
        if rel.is_empty() {
            continue;
        }
        let ranked = by_query.get(q.as_str()).cloned().unwrap_or_default();
        let at1 = precision_recall_at_n(&ranked, &rel, 1).expect("non-empty");
        let at10 = precision_recall_at_n(&ranked, &rel, 10).expect("non-empty");
        records.push(QueryRecord {
            query: q.clone(),
            n_relevant: rel.len(),
            query_len: (judgments.direction == Direction::Fvs).then(|| q.chars().count()),
            ap: average_precision(&ranked, &rel).expect("non-empty"),
            f1: mean_f1(&ranked, &rel).expect("non-empty"),
            p_at_1: at1.precision,
            p_at_10: at10.precision,
            r_at_1: at1.recall,
            r_at_10: at10.recall,
        });
        maxima.push((at1, at10));
    }
    let m = |f: fn(&QueryRecord) -> f64, mx: f64| Metric {
        value: mean(records.iter().map(f)),
        max: mx,
    };
    let summary = Summary {
        n_queries: records.len(),
        map: m(|r| r.ap, 1.0),
        mf1: m(|r| r.f1, 1.0),
        p_at_1: m(|r| r.p_at_1, mean(maxima.iter().map(|x| x.0.max_precision))),
        p_at_10: m(|r| r.p_at_10, mean(maxima.iter().map(|x| x.1.max_precision))),
        r_at_1: m(|r| r.r_at_1, mean(maxima.iter().map(|x| x.0.max_recall))),
        r_at_10: m(|r| r.r_at_10, mean(maxima.iter().map(|x| x.1.max_recall))),
    };
    Ok(DirectionReport {
        direction: judgments.direction,
        summary,
        queries: records,
    })
}

/// AP at each of [`IOU_THRESHOLDS`].
pub fn localization(predictions: &[ScoredSegment], ground_truth: &[ClipSegment]) -> Result<Vec<(f64, f64)>> {
    IOU_THRESHOLDS
        .iter()
        .map(|&t| Ok((t, ap_at_iou(predictions, ground_truth, t)?)))
        .collect()
}

/// Method-by-metric grid: one row per report, `value (max)` cells.
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for d in [Direction::Fws, Direction::Fvs] {
        if !reports.iter().any(|r| r.direction(d).is_some()) {
            continue;
        }
        let _ = writeln!(out, "{} ({})", d.name().to_uppercase(), reports.first().map_or("", |r| r.split.as_str()));
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15}",
            "method", "n", "mAP", "mF1", "P@1", "P@10", "R@1", "R@10"
        );
        for r in reports {
            if let Some(dr) = r.direction(d) {
                let s = &dr.summary;
                let cell = |m: &Metric| format!("{:.4} ({:.4})", m.value, m.max);
                let _ = writeln!(
                    out,
                    "{:<14} {:>6} {:>15} {:>15} {:>15} {:>15} {:>15} {:>15}",
                    r.system,
                    s.n_queries,
                    cell(&s.map),
                    cell(&s.mf1),
                    cell(&s.p_at_1),
                    cell(&s.p_at_10),
                    cell(&s.r_at_1),
                    cell(&s.r_at_10)
                );
            }
        }
        out.push('\n');
    }
    if reports.iter().any(|r| !r.ap_at_iou.is_empty()) {
        let _ = writeln!(out, "AP@IoU");
        for r in reports.iter().filter(|r| !r.ap_at_iou.is_empty()) {
            let cells: Vec<String> = r.ap_at_iou.iter().map(|(t, v)| format!("{t}: {v:.4}")).collect();
            let _ = writeln!(out, "{:<14} {}", r.system, cells.join("  "));
        }
    }
    out
}
