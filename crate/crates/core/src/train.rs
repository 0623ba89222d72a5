//! Mini-batch training with Adam, gradient clipping, learning-rate halving on
//! a dev plateau, and best-on-dev parameter selection.

use fss_nnkit::{clip_global_norm, Adam, Graph, Optimizer, ParamStore, PlateauSchedule, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Clip;
use crate::error::{FssError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clips per step.
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Epochs without dev improvement before the learning rate is cut.
    pub patience: usize,
    pub lr_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 8,
            lr: 3e-3,
            clip_norm: 5.0,
            patience: 3,
            lr_factor: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FssError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(FssError::Config("need lr > 0 and 0 < lr_factor <= 1".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(FssError::Config("clip_norm must be >= 0".into()));
        }
        Ok(())
    }
}

/// A model trained on clip batches.
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Scalar loss of one batch, built on `g` (whose store is `self.store()`).
    fn batch_loss(&self, g: &mut Graph, batch: &[&Clip], rng: &mut ChaCha8Rng) -> Result<Var>;
    /// Model-selection metric on held-out clips; higher is better.
    fn validation_metric(&self, dev: &[Clip]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_metric: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

/// Trains `model` in place. With a non-empty `dev` set the parameters of the
/// best dev epoch are restored at the end.
pub fn fit<M: Trainable>(model: &mut M, train: &[Clip], dev: &[Clip], cfg: &TrainConfig, seed: u64) -> Result<TrainLog> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(cfg.lr);
    let mut schedule = PlateauSchedule::new(cfg.patience.max(1), cfg.lr_factor);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Clip> = chunk.iter().map(|&i| &train[i]).collect();
            let mut grads = {
                let mut g = Graph::new(model.store());
                let loss = model.batch_loss(&mut g, &batch, &mut rng)?;
                total += g.scalar(loss);
                g.backward(loss)?
            };
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            opt.step(model.store_mut(), &grads);
            steps += 1;
        }
        let lr = opt.learning_rate();
        let dev_metric = if dev.is_empty() {
            None
        } else {
            let m = model.validation_metric(dev)?;
            if best.as_ref().is_none_or(|(b, _)| m > *b) {
                best = Some((m, model.store().clone()));
                log.best_epoch = Some(epoch);
            }
            schedule.observe(m, &mut opt);
            Some(m)
        };
        let mean_loss = if steps == 0 { 0.0 } else { total / steps as f64 };
        log::info!("epoch {epoch}: loss {mean_loss:.5} dev {dev_metric:?} lr {lr:.2e}");
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            dev_metric,
            lr,
        });
    }
    match best {
        Some((_, store)) => *model.store_mut() = store,
        None if cfg.epochs > 0 => log.best_epoch = Some(cfg.epochs),
        None => {}
    }
    Ok(log)
}
