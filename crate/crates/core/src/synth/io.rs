//! Corpus files.
//!
//! Line 1 is a header object:
//!
//! ```text
//! {"format":"fss-corpus/1","config":{...},"counts":{"train":n,"dev":n,"test":n},
//!  "letter_prototypes":{"rows":31,"cols":D,"data":"<base64>"},
//!  "distractor_prototypes":{...},"lexicon":[{"word":"ASL","tag":"common"},...]}
//! ```
//!
//! followed by one object per clip, train then dev then test:
//!
//! ```text
//! {"split":"train","id":"train-0000-0","frames":{"rows":T,"cols":D,"data":"<base64>"},
//!  "ground_truth":[{"segment":[s,t],"text":"ASL"}]}
//! ```
//!
//! Matrices are row-major little-endian `f64` bytes, so files round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use fss_nnkit::checkpoint::{decode_f64s, encode_f64s};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusConfig, LexiconEntry, Split};
use crate::domain::{Clip, LabeledSegment};
use crate::error::{FssError, Result};

pub const FORMAT: &str = "fss-corpus/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: String,
}

impl MatrixRecord {
    fn from(m: &Array2<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: encode_f64s(m.iter()),
        }
    }

    fn to_array(&self) -> std::result::Result<Array2<f64>, String> {
        let values = decode_f64s(&self.data)?;
        Array2::from_shape_vec((self.rows, self.cols), values).map_err(|e| e.to_string())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Counts {
    train: usize,
    dev: usize,
    test: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    config: CorpusConfig,
    counts: Counts,
    letter_prototypes: MatrixRecord,
    distractor_prototypes: MatrixRecord,
    lexicon: Vec<LexiconEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipRecord {
    split: Split,
    id: String,
    frames: MatrixRecord,
    ground_truth: Vec<LabeledSegment>,
}

pub fn to_string(corpus: &Corpus) -> String {
    let header = Header {
        format: FORMAT.to_string(),
        config: corpus.config.clone(),
        counts: Counts {
            train: corpus.train.len(),
            dev: corpus.dev.len(),
            test: corpus.test.len(),
        },
        letter_prototypes: MatrixRecord::from(&corpus.letter_prototypes),
        distractor_prototypes: MatrixRecord::from(&corpus.distractor_prototypes),
        lexicon: corpus.lexicon.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for split in Split::ALL {
        for clip in corpus.split(split) {
            let rec = ClipRecord {
                split,
                id: clip.id.clone(),
                frames: MatrixRecord::from(&clip.frames),
                ground_truth: clip.ground_truth.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("clip serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn parse(text: &str) -> Result<Corpus> {
    let err = |line: usize, msg: String| FssError::Parse { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty corpus file".into()))?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(err(
            1,
            format!("unsupported format {:?}, expected {FORMAT:?}", header.format),
        ));
    }
    header
        .config
        .validate()
        .map_err(|e| err(1, e.to_string()))?;
    let letter_prototypes = header
        .letter_prototypes
        .to_array()
        .map_err(|e| err(1, format!("letter prototypes: {e}")))?;
    let distractor_prototypes = header
        .distractor_prototypes
        .to_array()
        .map_err(|e| err(1, format!("distractor prototypes: {e}")))?;
    let dim = header.config.feature_dim;
    if letter_prototypes.ncols() != dim || distractor_prototypes.ncols() != dim {
        return Err(err(1, format!("prototype width differs from feature_dim {dim}")));
    }

    let mut splits: BTreeMap<Split, Vec<Clip>> = Split::ALL.iter().map(|s| (*s, Vec::new())).collect();
    let mut last_split = Split::Train;
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(line).map_err(|e| err(no, e.to_string()))?;
        if rec.split < last_split {
            return Err(err(no, format!("{} clip after {} clips", rec.split.name(), last_split.name())));
        }
        last_split = rec.split;
        let frames = rec.frames.to_array().map_err(|e| err(no, e))?;
        if frames.ncols() != dim {
            return Err(err(
                no,
                format!("clip {} has {} features, corpus has {dim}", rec.id, frames.ncols()),
            ));
        }
        let clip = Clip::new(rec.id, frames, rec.ground_truth).map_err(|e| err(no, e.to_string()))?;
        splits.get_mut(&rec.split).unwrap().push(clip);
    }
    let expected = [
        (Split::Train, header.counts.train),
        (Split::Dev, header.counts.dev),
        (Split::Test, header.counts.test),
    ];
    let total_lines = text.lines().count();
    for (split, n) in expected {
        let got = splits[&split].len();
        if got != n {
            return Err(err(
                total_lines + 1,
                format!("expected {n} {} clips, found {got} (truncated file?)", split.name()),
            ));
        }
    }
    let mut take = |s| splits.remove(&s).unwrap();
    Ok(Corpus {
        config: header.config,
        letter_prototypes,
        distractor_prototypes,
        lexicon: header.lexicon,
        train: take(Split::Train),
        dev: take(Split::Dev),
        test: take(Split::Test),
    })
}

pub fn save(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(corpus))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Corpus> {
    parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    fn corpus() -> Corpus {
        generate(&CorpusConfig {
            n_train: 6,
            n_dev: 2,
            n_test: 3,
            lexicon_size: 30,
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save(&c, &path).unwrap();
        assert_eq!(load(&path).unwrap(), c);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = to_string(&corpus());
        let cut: Vec<&str> = text.lines().collect();
        let truncated = cut[..cut.len() - 1].join("\n");
        let e = parse(&truncated).unwrap_err().to_string();
        assert!(e.contains("expected 3 test clips"), "{e}");
        let half = &text[..text.len() / 2];
        assert!(parse(half).is_err());
    }

    #[test]
    fn bad_line_reports_line_number() {
        let text = to_string(&corpus());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = "{not json".into();
        let e = parse(&lines.join("\n")).unwrap_err().to_string();
        assert!(e.starts_with("line 4:"), "{e}");
    }

    #[test]
    fn hand_written_single_clip() {
        let enc = |v: &[f64]| encode_f64s(v.iter());
        let letters = vec![0.0; 31 * 2];
        let header = serde_json::json!({
            "format": FORMAT,
            "config": {"feature_dim": 2, "clip_len": 4, "overlap": 1, "n_train": 1, "n_dev": 0,
                       "n_test": 0, "word_len_max": 1, "letter_dur_max": 2, "letter_dur_min": 1,
                       "n_distractors": 1},
            "counts": {"train": 1, "dev": 0, "test": 0},
            "letter_prototypes": {"rows": 31, "cols": 2, "data": enc(&letters)},
            "distractor_prototypes": {"rows": 1, "cols": 2, "data": enc(&[0.0, 1.0])},
            "lexicon": [{"word": "A", "tag": "common"}, {"word": "B", "tag": "test_only"}],
        });
        let clip = serde_json::json!({
            "split": "train", "id": "c0",
            "frames": {"rows": 4, "cols": 2, "data": enc(&[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0])},
            "ground_truth": [{"segment": [0, 2], "text": "a"}],
        });
        let c = parse(&format!("{header}\n{clip}\n")).unwrap();
        assert_eq!(c.train.len(), 1);
        let clip = &c.train[0];
        assert_eq!(clip.id, "c0");
        assert_eq!(clip.frames.dim(), (4, 2));
        assert_eq!(clip.frames[[2, 1]], 1.0);
        assert_eq!(clip.ground_truth[0].text.as_str(), "A");
        assert_eq!((clip.ground_truth[0].segment.start(), clip.ground_truth[0].segment.end()), (0, 2));
        assert_eq!(c.lexicon[1].tag, super::super::WordTag::TestOnly);
    }
}
