//! Training loop plumbing shared by every learned predictor.

use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csi::ComplexCsi;
use crate::error::{PlaError, Result};
use crate::scenario::{add_estimation_noise, derived_rng};

const SHUFFLE_TAG: u64 = 0x5348_5546;
const AUGMENT_TAG: u64 = 0x4155_474d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }

    pub fn of(dtype: DType) -> Self {
        if dtype == DType::F64 {
            Precision::F64
        } else {
            Precision::F32
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// When nonempty, each epoch the condition inputs are re-observed at an
    /// SNR drawn from this list.
    pub condition_snr_db: Vec<f64>,
    /// Stop after this many optimiser steps, if set.
    pub max_steps: Option<usize>,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 5e-3,
            weight_decay: 0.0,
            final_lr_fraction: 0.05,
            seed: 0,
            condition_snr_db: Vec::new(),
            max_steps: None,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(PlaError::config("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(PlaError::config("batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PlaError::config("learning_rate", "must be positive and finite"));
        }
        if self.condition_snr_db.iter().any(|s| s.is_nan()) {
            return Err(PlaError::config("condition_snr_db", "NaN entry"));
        }
        Ok(())
    }

    pub fn total_steps(&self, n_items: usize) -> usize {
        let per_epoch = n_items.div_ceil(self.batch_size);
        let all = per_epoch * self.epochs;
        self.max_steps.map_or(all, |m| m.min(all))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub loss: f64,
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = derived_rng(seed, SHUFFLE_TAG, epoch as u64);
    idx.shuffle(&mut rng);
    idx
}

/// Condition inputs for one epoch: either the clean inputs or fresh noisy
/// observations at randomly chosen SNRs.
pub fn augment_conditions(items: &[ComplexCsi], cfg: &TrainConfig, epoch: usize) -> Result<Vec<ComplexCsi>> {
    if cfg.condition_snr_db.is_empty() {
        return Ok(items.to_vec());
    }
    let mut rng = derived_rng(cfg.seed, AUGMENT_TAG, epoch as u64);
    let noise_seed = rng.random::<u64>();
    items
        .iter()
        .map(|x| {
            let snr = cfg.condition_snr_db[rng.random_range(0..cfg.condition_snr_db.len())];
            add_estimation_noise(x, snr, noise_seed)
        })
        .collect()
}

/// Divergence watch: abort once the epoch loss exceeds `factor` times the
/// first epoch's loss for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct DivergenceGuard {
    factor: f64,
    patience: usize,
    initial: Option<f64>,
    strikes: usize,
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        Self {
            factor: 10.0,
            patience: 3,
            initial: None,
            strikes: 0,
        }
    }
}

impl DivergenceGuard {
    pub fn observe(&mut self, epoch: usize, loss: f64, log: &[LogEntry]) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if loss > self.factor * initial {
            self.strikes += 1;
        } else {
            self.strikes = 0;
        }
        if self.strikes >= self.patience {
            let history: Vec<String> = log.iter().map(|e| format!("{}:{:.4e}", e.epoch, e.loss)).collect();
            return Err(PlaError::Training(format!(
                "diverged at epoch {epoch}: loss {loss:.4e} > {}x initial {initial:.4e} for {} epochs; log [{}]",
                self.factor,
                self.patience,
                history.join(", ")
            )));
        }
        Ok(())
    }
}

/// AdamW with cosine learning-rate decay over a known number of steps.
pub struct Trainer {
    opt: AdamW,
    base_lr: f64,
    final_fraction: f64,
    total_steps: usize,
    step: usize,
}

impl Trainer {
    pub fn new(vars: Vec<Var>, cfg: &TrainConfig, total_steps: usize) -> Result<Self> {
        let opt = AdamW::new(
            vars,
            ParamsAdamW {
                lr: cfg.learning_rate,
                weight_decay: cfg.weight_decay,
                ..Default::default()
            },
        )?;
        Ok(Self {
            opt,
            base_lr: cfg.learning_rate,
            final_fraction: cfg.final_lr_fraction,
            total_steps: total_steps.max(1),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn finished(&self) -> bool {
        self.step >= self.total_steps
    }

    pub fn step(&mut self, loss: &Tensor) -> Result<()> {
        let progress = self.step as f64 / self.total_steps as f64;
        let scale = self.final_fraction
            + (1.0 - self.final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.opt.set_learning_rate(self.base_lr * scale);
        self.opt.backward_step(loss)?;
        self.step += 1;
        Ok(())
    }
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(50, 1, 0);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(50, 1, 0));
        assert_ne!(a, epoch_order(50, 1, 1));
    }

    #[test]
    fn guard_trips_after_patience() {
        let mut g = DivergenceGuard::default();
        g.observe(0, 1.0, &[]).unwrap();
        g.observe(1, 20.0, &[]).unwrap();
        g.observe(2, 20.0, &[]).unwrap();
        g.observe(3, 2.0, &[]).unwrap();
        g.observe(4, 20.0, &[]).unwrap();
        g.observe(5, 20.0, &[]).unwrap();
        let err = g.observe(6, 20.0, &[]).unwrap_err();
        assert_eq!(err.code(), "E_TRAINING");
    }

    #[test]
    fn step_budget() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            max_steps: Some(5),
            ..Default::default()
        };
        assert_eq!(cfg.total_steps(10), 5);
        assert_eq!(TrainConfig { max_steps: None, ..cfg }.total_steps(10), 9);
    }
}
