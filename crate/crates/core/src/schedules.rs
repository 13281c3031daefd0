//! Phase structure and annealing curves for a training run.
//!
//! A run splits into warmup, intermediate and fine-tuning phases. The keep
//! fraction anneals linearly from fully dense down to `1 - target_sparsity`
//! over the warmup phase and stays there; sharpness ramps linearly from
//! `beta_start` to `beta_max` until the fine-tuning boundary, where the mask
//! is frozen. Values are held constant within an epoch.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Intermediate,
    FineTune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSchedule {
    pub total_epochs: usize,
    /// Warmup ends at this fraction of the run.
    pub warmup_frac: f64,
    /// Fine-tuning starts at this fraction of the run.
    pub intermediate_end_frac: f64,
    /// Target fraction of mask mass removed, in [0, 1).
    pub target_sparsity: f64,
    pub beta_start: f64,
    pub beta_max: f64,
}

impl TrainingSchedule {
    /// Standard phase split (20% warmup, fine-tune over the final 20%) with
    /// `beta_start = 1`.
    pub fn new(total_epochs: usize, target_sparsity: f64, beta_max: f64) -> Result<Self> {
        let s = TrainingSchedule {
            total_epochs,
            warmup_frac: 0.2,
            intermediate_end_frac: 0.8,
            target_sparsity,
            beta_start: 1.0,
            beta_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0
            && self.warmup_frac < self.intermediate_end_frac
            && self.intermediate_end_frac < 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "phase fractions must satisfy 0 < warmup ({}) < intermediate_end ({}) < 1",
                self.warmup_frac, self.intermediate_end_frac
            )));
        }
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(Error::InvalidConfig(format!(
                "target sparsity must lie in [0, 1), got {}",
                self.target_sparsity
            )));
        }
        if !self.beta_start.is_finite() || !self.beta_max.is_finite() || self.beta_start < 0.0 {
            return Err(Error::InvalidConfig("betas must be finite and >= 0".into()));
        }
        if self.beta_max < self.beta_start {
            return Err(Error::InvalidConfig(format!(
                "beta_max ({}) must be >= beta_start ({})",
                self.beta_max, self.beta_start
            )));
        }
        Ok(())
    }

    fn warmup_end(&self) -> f64 {
        self.warmup_frac * self.total_epochs as f64
    }

    fn fine_tune_start(&self) -> f64 {
        self.intermediate_end_frac * self.total_epochs as f64
    }

    /// Fraction of mask mass kept at an epoch: linear from 1 at epoch 0 to
    /// `1 - target_sparsity` at the end of warmup, constant afterwards.
    pub fn keep_fraction_at(&self, epoch: f64) -> f64 {
        let end = self.warmup_end();
        if end <= 0.0 || epoch >= end {
            1.0 - self.target_sparsity
        } else {
            1.0 - (epoch / end) * self.target_sparsity
        }
    }

    /// Sharpness at an epoch: linear from `beta_start` at epoch 0 to
    /// `beta_max` at the fine-tuning boundary, constant afterwards.
    pub fn beta_at(&self, epoch: f64) -> f64 {
        let end = self.fine_tune_start();
        if end <= 0.0 || epoch >= end {
            self.beta_max
        } else {
            self.beta_start + (epoch / end) * (self.beta_max - self.beta_start)
        }
    }

    pub fn phase_at(&self, epoch: f64) -> Phase {
        if epoch < self.warmup_end() {
            Phase::Warmup
        } else if epoch < self.fine_tune_start() {
            Phase::Intermediate
        } else {
            Phase::FineTune
        }
    }
}
