//! Proposal records as tab-separated text:
//!
//! ```text
//! # fss-proposals/1
//! clip_id	start	end	p_det
//! test-0000-0	12	30	0.93
//! ```
//!
//! Probabilities use the shortest representation that parses back to the
//! same `f64`.

use std::collections::BTreeMap;

use super::nms::Proposal;
use crate::domain::Segment;
use crate::error::{FssError, Result};

pub const PROPOSALS_FORMAT: &str = "fss-proposals/1";
const HEADER: &str = "clip_id\tstart\tend\tp_det";

/// Proposals per clip id, each list kept in file order.
pub type ClipProposals = BTreeMap<String, Vec<Proposal>>;

pub fn proposals_to_string<'a>(items: impl IntoIterator<Item = (&'a str, &'a [Proposal])>) -> String {
    let mut out = format!("# {PROPOSALS_FORMAT}\n{HEADER}\n");
    for (id, props) in items {
        for p in props {
            out.push_str(&format!(
                "{id}\t{}\t{}\t{}\n",
                p.segment.start(),
                p.segment.end(),
                p.p_det
            ));
        }
    }
    out
}

pub fn parse_proposals(text: &str) -> Result<ClipProposals> {
    let err = |line: usize, msg: String| FssError::Parse { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == format!("# {PROPOSALS_FORMAT}") => {}
        _ => return Err(err(1, format!("missing '# {PROPOSALS_FORMAT}' header"))),
    }
    match lines.next() {
        Some((_, l)) if l == HEADER => {}
        _ => return Err(err(2, format!("expected column header {HEADER:?}"))),
    }
    let mut out = ClipProposals::new();
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(no, format!("expected 4 columns, found {}", cols.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| err(no, format!("{s:?}: {e}")));
        let p_det: f64 = cols[3]
            .parse()
            .map_err(|e| err(no, format!("{:?}: {e}", cols[3])))?;
        if !(0.0..=1.0).contains(&p_det) {
            return Err(err(no, format!("p_det {p_det} outside [0, 1]")));
        }
        let segment = Segment::new(num(cols[1])?, num(cols[2])?).map_err(|e| err(no, e.to_string()))?;
        out.entry(cols[0].to_string())
            .or_default()
            .push(Proposal { segment, p_det });
    }
    Ok(out)
}
