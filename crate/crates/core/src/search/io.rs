//! Tab-separated score and ranking files.
//!
//! Score matrix, one row per (clip, word) pair in matrix order:
//!
//! ```text
//! # fss-scores/1
//! clip_id	word	score
//! ```
//!
//! Ranked lists, queries in order and items best first:
//!
//! ```text
//! # fss-ranked/1 fvs
//! query	rank	item	score
//! ```
//!
//! Scores use the shortest text that parses back to the same `f64`.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::{Direction, RankedList, ScoreMatrix};
use crate::domain::Query;
use crate::error::{FssError, Result};

const SCORES_FORMAT: &str = "fss-scores/1";
const SCORES_HEADER: &str = "clip_id\tword\tscore";
const RANKED_FORMAT: &str = "fss-ranked/1";
const RANKED_HEADER: &str = "query\trank\titem\tscore";

fn err(line: usize, msg: impl Into<String>) -> FssError {
    FssError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_score(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s.parse().map_err(|e| err(line, format!("{s:?}: {e}")))?;
    if !v.is_finite() {
        return Err(err(line, format!("non-finite score {s:?}")));
    }
    Ok(v)
}

pub fn score_matrix_to_string(m: &ScoreMatrix) -> String {
    let mut out = format!("# {SCORES_FORMAT}\n{SCORES_HEADER}\n");
    for (i, c) in m.clip_ids.iter().enumerate() {
        for (j, w) in m.words.iter().enumerate() {
            out.push_str(&format!("{c}\t{w}\t{}\n", m.scores[[i, j]]));
        }
    }
    out
}

pub fn parse_score_matrix(text: &str) -> Result<ScoreMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    if lines.next().map(|(_, l)| l) != Some(&format!("# {SCORES_FORMAT}")) {
        return Err(err(1, format!("missing '# {SCORES_FORMAT}' header")));
    }
    if lines.next().map(|(_, l)| l) != Some(SCORES_HEADER) {
        return Err(err(2, format!("expected column header {SCORES_HEADER:?}")));
    }
    let mut clips: Vec<String> = Vec::new();
    let mut words: Vec<Query> = Vec::new();
    let mut clip_ix: BTreeMap<String, usize> = BTreeMap::new();
    let mut word_ix: BTreeMap<String, usize> = BTreeMap::new();
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut last = 2;
    for (no, line) in lines {
        last = no;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(no, format!("expected 3 columns, found {}", cols.len())));
        }
        let i = *clip_ix.entry(cols[0].to_string()).or_insert_with(|| {
            clips.push(cols[0].to_string());
            clips.len() - 1
        });
        let j = match word_ix.get(cols[1]) {
            Some(&j) => j,
            None => {
                words.push(Query::new(cols[1]).map_err(|e| err(no, e.to_string()))?);
                word_ix.insert(cols[1].to_string(), words.len() - 1);
                words.len() - 1
            }
        };
        if cells.insert((i, j), parse_score(cols[2], no)?).is_some() {
            return Err(err(no, format!("duplicate pair ({}, {})", cols[0], cols[1])));
        }
    }
    if cells.len() != clips.len() * words.len() {
        return Err(err(
            last,
            format!(
                "{} scores for {} clips x {} words",
                cells.len(),
                clips.len(),
                words.len()
            ),
        ));
    }
    let mut scores = Array2::zeros((clips.len(), words.len()));
    for ((i, j), v) in cells {
        scores[[i, j]] = v;
    }
    ScoreMatrix::new(clips, words, scores)
}

pub fn ranked_lists_to_string(direction: Direction, lists: &[RankedList]) -> String {
    let mut out = format!("# {RANKED_FORMAT} {}\n{RANKED_HEADER}\n", direction.name());
    for l in lists {
        for (rank, (item, score)) in l.items.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{item}\t{score}\n", l.query, rank + 1));
        }
    }
    out
}

pub fn parse_ranked_lists(text: &str) -> Result<(Direction, Vec<RankedList>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let first = lines.next().map(|(_, l)| l).unwrap_or("");
    let direction = first
        .strip_prefix(&format!("# {RANKED_FORMAT} "))
        .ok_or_else(|| err(1, format!("missing '# {RANKED_FORMAT} <direction>' header")))
        .and_then(|d| Direction::parse(d.trim()).map_err(|e| err(1, e.to_string())))?;
    if lines.next().map(|(_, l)| l) != Some(RANKED_HEADER) {
        return Err(err(2, format!("expected column header {RANKED_HEADER:?}")));
    }
    let mut lists: Vec<RankedList> = Vec::new();
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(no, format!("expected 4 columns, found {}", cols.len())));
        }
        let rank: usize = cols[1].parse().map_err(|e| err(no, format!("rank {:?}: {e}", cols[1])))?;
        let score = parse_score(cols[3], no)?;
        let same = lists.last().is_some_and(|l| l.query == cols[0]);
        if !same {
            if lists.iter().any(|l| l.query == cols[0]) {
                return Err(err(no, format!("query {:?} is not contiguous", cols[0])));
            }
            lists.push(RankedList {
                query: cols[0].to_string(),
                items: Vec::new(),
            });
        }
        let list = lists.last_mut().unwrap();
        if rank != list.items.len() + 1 {
            return Err(err(no, format!("rank {rank} out of sequence")));
        }
        if let Some((_, prev)) = list.items.last() {
            if score > *prev {
                return Err(err(no, "scores must not increase down a list"));
            }
        }
        list.items.push((cols[2].to_string(), score));
    }
    Ok((direction, lists))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn matrix() -> ScoreMatrix {
        ScoreMatrix::new(
            vec!["c0".into(), "c1".into()],
            vec![Query::new("ASL").unwrap(), Query::new("NEW YORK").unwrap()],
            array![[0.1 + 0.2, 1.0 / 3.0], [0.0, 1e-17]],
        )
        .unwrap()
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = matrix();
        assert_eq!(parse_score_matrix(&score_matrix_to_string(&m)).unwrap(), m);
    }

    #[test]
    fn ranked_round_trip_is_exact() {
        let m = matrix();
        for d in [Direction::Fws, Direction::Fvs] {
            let lists = m.rankings(d);
            let (d2, back) = parse_ranked_lists(&ranked_lists_to_string(d, &lists)).unwrap();
            assert_eq!(d2, d);
            assert_eq!(back, lists);
        }
    }

    #[test]
    fn incomplete_matrix_rejected() {
        let text = score_matrix_to_string(&matrix());
        let cut: Vec<&str> = text.lines().collect();
        assert!(parse_score_matrix(&cut[..cut.len() - 1].join("\n")).is_err());
    }
}
