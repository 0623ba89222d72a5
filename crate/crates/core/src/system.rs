//! The five search systems behind one interface: training, scoring,
//! localization, checkpoints and metric reports.

use fss_nnkit::{checkpoint, ParamStore};
use serde::{Deserialize, Serialize};

use crate::baselines::{detector_predictions, AttnKws, Recognizer, WholeClip};
use crate::config::RunConfig;
use crate::detector::Detector;
use crate::domain::{Clip, Query};
use crate::error::{FssError, Result};
use crate::eval::{build_judgments, evaluate, localization, ClipSegment, MetricReport, ScoredSegment};
use crate::fssnet::{vocabulary, FssNet};
use crate::par::Exec;
use crate::search::{Direction, ScoreMatrix};
use crate::synth::derive_seed;
use crate::train::{fit, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Fssnet,
    Recognizer,
    Wholeclip,
    Attnkws,
    Extdet,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::Fssnet,
        SystemKind::Recognizer,
        SystemKind::Wholeclip,
        SystemKind::Attnkws,
        SystemKind::Extdet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Fssnet => "fssnet",
            SystemKind::Recognizer => "recognizer",
            SystemKind::Wholeclip => "wholeclip",
            SystemKind::Attnkws => "attnkws",
            SystemKind::Extdet => "extdet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| FssError::Config(format!("unknown system {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub enum System {
    FssNet(FssNet),
    Recognizer(Recognizer),
    WholeClip(WholeClip),
    AttnKws(AttnKws),
    /// Matcher over a frozen, separately trained detector.
    ExtDet(FssNet),
}

/// Per-stage training logs, in training order.
pub type TrainLogs = Vec<(String, TrainLog)>;

const EXTERNAL_PREFIX: &str = "external.";

fn feature_dim(clips: &[Clip]) -> Result<usize> {
    clips
        .first()
        .map(|c| c.feature_dim())
        .ok_or(FssError::Empty("training split"))
}

impl System {
    /// Builds and trains `kind` on `train`, selecting parameters on `dev`.
    pub fn train(kind: SystemKind, cfg: &RunConfig, train: &[Clip], dev: &[Clip], exec: Exec) -> Result<(Self, TrainLogs)> {
        cfg.validate()?;
        let dim = feature_dim(train)?;
        let init = derive_seed(cfg.seed, 101, 0);
        let order = derive_seed(cfg.seed, 102, 0);
        let mut logs = Vec::new();
        let system = match kind {
            SystemKind::Fssnet => {
                let mut net = FssNet::new(dim, cfg.matcher_settings(), init)?;
                logs.push(("fssnet".into(), fit(&mut net, train, dev, &cfg.train, order)?));
                System::FssNet(net)
            }
            SystemKind::Recognizer => {
                let mut r = Recognizer::new(dim, &cfg.model, cfg.recognizer.clone(), init)?;
                logs.push(("recognizer".into(), fit(&mut r, train, dev, &cfg.train, order)?));
                System::Recognizer(r)
            }
            SystemKind::Wholeclip => {
                let mut w = WholeClip::new(dim, &cfg.model, cfg.matching, init)?;
                logs.push(("wholeclip".into(), fit(&mut w, train, dev, &cfg.train, order)?));
                System::WholeClip(w)
            }
            SystemKind::Attnkws => {
                let pool = vocabulary(train);
                let mut a = AttnKws::new(dim, &cfg.model, cfg.attnkws.clone(), pool, init)?;
                logs.push(("attnkws".into(), fit(&mut a, train, dev, &cfg.train, order)?));
                System::AttnKws(a)
            }
            SystemKind::Extdet => {
                let mut det = Detector::new(dim, &cfg.model, cfg.detector.clone(), init);
                logs.push(("detector".into(), fit(&mut det, train, dev, &cfg.train, order)?));
                let seed = derive_seed(cfg.seed, 101, 1);
                let mut net = FssNet::with_external_detector(dim, cfg.matcher_settings(), det, train, exec, seed)?;
                let order = derive_seed(cfg.seed, 102, 1);
                logs.push(("matcher".into(), fit(&mut net, train, dev, &cfg.train, order)?));
                System::ExtDet(net)
            }
        };
        Ok((system, logs))
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            System::FssNet(_) => SystemKind::Fssnet,
            System::Recognizer(_) => SystemKind::Recognizer,
            System::WholeClip(_) => SystemKind::Wholeclip,
            System::AttnKws(_) => SystemKind::Attnkws,
            System::ExtDet(_) => SystemKind::Extdet,
        }
    }

    pub fn score_matrix(&self, clips: &[Clip], words: &[Query], exec: Exec) -> Result<ScoreMatrix> {
        match self {
            System::FssNet(n) | System::ExtDet(n) => n.score_matrix(clips, words, exec),
            System::Recognizer(r) => r.score_matrix(clips, words, exec),
            System::WholeClip(w) => w.score_matrix(clips, words, exec),
            System::AttnKws(a) => a.score_matrix(clips, words, exec),
        }
    }

    /// Scored segment predictions pooled over `clips`, for systems that
    /// localize fingerspelling.
    pub fn localize(&self, clips: &[Clip], words: &[Query], exec: Exec) -> Result<Option<Vec<ScoredSegment>>> {
        match self {
            System::FssNet(n) | System::ExtDet(n) => {
                let props = exec.try_map(clips, |c| n.propose(&c.frames))?;
                Ok(Some(detector_predictions(clips, &props)))
            }
            System::AttnKws(a) => Ok(Some(a.localize(clips, words, exec)?)),
            System::Recognizer(_) | System::WholeClip(_) => Ok(None),
        }
    }

    fn stores(&self) -> ParamStore {
        match self {
            System::FssNet(n) => n.store.clone(),
            System::Recognizer(r) => r.store.clone(),
            System::WholeClip(w) => w.store.clone(),
            System::AttnKws(a) => a.store.clone(),
            System::ExtDet(n) => {
                let mut s = n.store.clone();
                let det = n.external_detector().expect("external detector");
                for (_, name, m) in det.store.iter() {
                    s.add(format!("{EXTERNAL_PREFIX}{name}"), m.clone());
                }
                s
            }
        }
    }

    /// Checkpoint text: parameters plus the configuration and feature
    /// dimension needed to rebuild the model.
    pub fn to_checkpoint(&self, cfg: &RunConfig, feature_dim: usize, logs: &TrainLogs) -> String {
        let meta = serde_json::json!({
            "system": self.kind(),
            "feature_dim": feature_dim,
            "config": cfg,
            "train_logs": logs,
        });
        checkpoint::to_string(&self.stores(), &meta)
    }

    pub fn from_checkpoint(text: &str) -> Result<(Self, RunConfig, usize)> {
        let (store, meta) = checkpoint::from_str(text)?;
        let bad = |m: &str| FssError::Config(format!("checkpoint metadata: {m}"));
        let kind: SystemKind =
            serde_json::from_value(meta["system"].clone()).map_err(|e| bad(&format!("system: {e}")))?;
        let dim = meta["feature_dim"].as_u64().ok_or_else(|| bad("feature_dim missing"))? as usize;
        let cfg: RunConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| bad(&format!("config: {e}")))?;
        let mut system = match kind {
            SystemKind::Fssnet => System::FssNet(FssNet::new(dim, cfg.matcher_settings(), 0)?),
            SystemKind::Recognizer => System::Recognizer(Recognizer::new(dim, &cfg.model, cfg.recognizer.clone(), 0)?),
            SystemKind::Wholeclip => System::WholeClip(WholeClip::new(dim, &cfg.model, cfg.matching, 0)?),
            SystemKind::Attnkws => System::AttnKws(AttnKws::new(dim, &cfg.model, cfg.attnkws.clone(), vec![], 0)?),
            SystemKind::Extdet => {
                let mut det = Detector::new(dim, &cfg.model, cfg.detector.clone(), 0);
                let mut own = ParamStore::new();
                let mut ext = ParamStore::new();
                for (_, name, m) in store.iter() {
                    match name.strip_prefix(EXTERNAL_PREFIX) {
                        Some(n) => ext.add(n, m.clone()),
                        None => own.add(name, m.clone()),
                    };
                }
                checkpoint::assign(&mut det.store, &ext)?;
                let mut net = FssNet::with_frozen_detector(dim, cfg.matcher_settings(), det)?;
                checkpoint::assign(&mut net.store, &own)?;
                return Ok((System::ExtDet(net), cfg, dim));
            }
        };
        let dst = match &mut system {
            System::FssNet(n) | System::ExtDet(n) => &mut n.store,
            System::Recognizer(r) => &mut r.store,
            System::WholeClip(w) => &mut w.store,
            System::AttnKws(a) => &mut a.store,
        };
        checkpoint::assign(dst, &store)?;
        Ok((system, cfg, dim))
    }
}

/// Ground-truth segments of `clips`, pooled.
pub fn ground_truth_segments(clips: &[Clip]) -> Vec<ClipSegment> {
    clips
        .iter()
        .flat_map(|c| {
            c.segments().map(|segment| ClipSegment {
                clip: c.id.clone(),
                segment,
            })
        })
        .collect()
}

/// Both retrieval directions from one score matrix, plus AP@IoU when
/// `predictions` are given.
pub fn build_report(
    system: &str,
    split: &str,
    scores: &ScoreMatrix,
    clips: &[Clip],
    directions: &[Direction],
    predictions: Option<&[ScoredSegment]>,
) -> Result<MetricReport> {
    let mut reports = Vec::new();
    for &d in directions {
        reports.push(evaluate(&scores.rankings(d), &build_judgments(clips, d))?);
    }
    let ap_at_iou = match predictions {
        Some(p) => {
            let gt = ground_truth_segments(clips);
            if gt.is_empty() {
                Vec::new()
            } else {
                localization(p, &gt)?
            }
        }
        None => Vec::new(),
    };
    Ok(MetricReport {
        system: system.to_string(),
        split: split.to_string(),
        directions: reports,
        ap_at_iou,
    })
}

/// Scores `clips` against their own vocabulary and reports every metric.
pub fn evaluate_system(system: &System, split: &str, clips: &[Clip], exec: Exec) -> Result<(ScoreMatrix, MetricReport)> {
    let vocab = vocabulary(clips);
    let scores = system.score_matrix(clips, &vocab, exec)?;
    let preds = system.localize(clips, &vocab, exec)?;
    let report = build_report(
        system.kind().name(),
        split,
        &scores,
        clips,
        &[Direction::Fws, Direction::Fvs],
        preds.as_deref(),
    )?;
    Ok((scores, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, CorpusConfig};

    fn tiny() -> (RunConfig, crate::synth::Corpus) {
        let mut cfg = RunConfig::default();
        cfg.corpus = CorpusConfig {
            feature_dim: 6,
            n_train: 6,
            n_dev: 2,
            n_test: 3,
            lexicon_size: 20,
            ..CorpusConfig::default()
        };
        cfg.model.trunk_hidden = 4;
        cfg.model.det_channels = 4;
        cfg.model.fs_hidden = 4;
        cfg.model.text_hidden = 4;
        cfg.model.char_dim = 3;
        cfg.model.embed_dim = 5;
        cfg.train.epochs = 1;
        cfg.train.batch_size = 3;
        let corpus = generate(&cfg.corpus).unwrap();
        (cfg, corpus)
    }

    #[test]
    fn every_system_round_trips_through_a_checkpoint() {
        let (cfg, c) = tiny();
        let vocab = vocabulary(&c.test);
        for kind in SystemKind::ALL {
            let (sys, logs) = System::train(kind, &cfg, &c.train, &c.dev, Exec::default()).unwrap();
            assert_eq!(sys.kind(), kind);
            let text = sys.to_checkpoint(&cfg, 6, &logs);
            let (back, cfg2, dim) = System::from_checkpoint(&text).unwrap();
            assert_eq!((cfg2, dim), (cfg.clone(), 6));
            let a = sys.score_matrix(&c.test, &vocab, Exec::default()).unwrap();
            let b = back.score_matrix(&c.test, &vocab, Exec::default()).unwrap();
            assert_eq!(a, b, "{}", kind.name());
            let (_, rep) = evaluate_system(&back, "test", &c.test, Exec::default()).unwrap();
            assert_eq!(rep.directions.len(), 2);
        }
    }

    #[test]
    fn parallel_and_sequential_scores_agree() {
        let (cfg, c) = tiny();
        let (sys, _) = System::train(SystemKind::Fssnet, &cfg, &c.train, &c.dev, Exec::Sequential).unwrap();
        let vocab = vocabulary(&c.test);
        assert_eq!(
            sys.score_matrix(&c.test, &vocab, Exec::Sequential).unwrap(),
            sys.score_matrix(&c.test, &vocab, Exec::Parallel).unwrap()
        );
    }
}
