//! Run configuration: every tunable of every system in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{AttnKwsConfig, RecognizerConfig};
use crate::detector::DetectorConfig;
use crate::error::{FssError, Result};
use crate::fssnet::{FssNetConfig, MatcherSettings};
use crate::matcher::{FilterConfig, MatchConfig};
use crate::net::ModelConfig;
use crate::synth::CorpusConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Exponent on the detection probability in proposal scores.
    pub beta: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for model initialization and training order.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub detector: DetectorConfig,
    pub filter: FilterConfig,
    pub matching: MatchConfig,
    pub search: SearchConfig,
    pub fssnet: FssNetConfig,
    pub train: TrainConfig,
    pub recognizer: RecognizerConfig,
    pub attnkws: AttnKwsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.matcher_settings().validate()?;
        self.train.validate()?;
        if self.recognizer.beam_width == 0 {
            return Err(FssError::Config("recognizer.beam_width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.attnkws.attention_threshold) {
            return Err(FssError::Config("attnkws.attention_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn matcher_settings(&self) -> MatcherSettings {
        MatcherSettings {
            model: self.model.clone(),
            detector: self.detector.clone(),
            filter: self.filter,
            matching: self.matching,
            beta: self.search.beta,
            fssnet: self.fssnet.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| FssError::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies `section.key=value` overrides; values are TOML literals, or
    /// bare strings when they do not parse as one.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| FssError::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_literal(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut table = &mut doc;
            for part in &path[..path.len() - 1] {
                table = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| FssError::Config(format!("{key}: {part} is not a section")))?;
            }
            table.insert(path[path.len() - 1].to_string(), value);
        }
        Self::from_toml(&toml::to_string(&doc).expect("table serializes"))
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[matching]\nmargn = 0.4").is_err());
        assert!(RunConfig::default().with_overrides(&["train.epoch=3"]).is_err());
    }

    #[test]
    fn overrides_apply_typed_values() {
        let cfg = RunConfig::default()
            .with_overrides(&[
                "train.epochs=3",
                "matching.lambda_det=0",
                "fssnet.proposals=sliding_window",
                "detector.grid.scales=[4, 8]",
            ])
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.matching.lambda_det, 0.0);
        assert_eq!(cfg.fssnet.proposals, crate::fssnet::ProposalKind::SlidingWindow);
        assert_eq!(cfg.detector.grid.scales, vec![4, 8]);
        assert!(RunConfig::default().with_overrides(&["search.beta=-1"]).is_err());
        assert!(RunConfig::default().with_overrides(&["nonsense"]).is_err());
    }
}
