use serde::{Deserialize, Serialize};

use crate::autodiff::SgdConfig;
use crate::error::{config_err, Result};

/// Optimizer settings for both training stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `epochs` after which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub stage2_iterations: usize,
    pub stage2_lr: f64,
    /// Stage-2 iterations between evaluations.
    pub eval_every: usize,
    pub eval_batch_size: usize,
    pub augment: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_milestones: vec![0.5, 0.75],
            lr_decay: 0.1,
            batch_size: 128,
            stage2_iterations: 10_000,
            stage2_lr: 1e-4,
            eval_every: 500,
            eval_batch_size: 500,
            augment: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.eval_every == 0 {
            return Err(config_err!("batch sizes and eval_every must be positive"));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("stage2_lr", self.stage2_lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lr_decay", self.lr_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(m) = self.lr_milestones.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(config_err!("lr milestone {m} is not a fraction of training"));
        }
        Ok(())
    }

    /// Stage-1 learning rate during `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&f| epoch >= (f * self.epochs as f64).round() as usize)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }

    pub fn sgd(&self, lr: f64) -> SgdConfig {
        SgdConfig { lr, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    /// Optimizer steps per pass over `n` samples; a trailing partial batch is dropped.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        (n / self.batch_size).max(1)
    }
}
