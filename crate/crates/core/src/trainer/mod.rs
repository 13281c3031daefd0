//! Training loop wiring update rules and schedules, with metrics capture.
//!
//! Each epoch fixes the keep budget and sharpness from the schedule, runs
//! mini-batch SGD (optional momentum and weight decay, applied to the dense
//! parameter vector after the rule computes its raw direction), snapshots the
//! hard unit mask at the epoch end and freezes it at the fine-tuning
//! boundary. Runs are bit-reproducible for a fixed config and seed: all
//! reductions are sequential and all randomness flows from one seeded
//! generator.

mod data;
mod model;

pub use data::{DataSource, Dataset, DatasetSpec, Targets};
pub use model::{Architecture, ModelSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::masking::PruningGroupSpec;
use crate::ot_topk::HardMask;
use crate::schedules::{Phase, TrainingSchedule};
use crate::updates::{realized_support, update_direction, RuleKind, UpdateRuleState};

/// One per-epoch metrics record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// MSE for regression datasets, accuracy for classification.
    pub eval_metric: f64,
    /// Fraction of parameter entries masked to zero.
    pub realized_sparsity: f64,
    /// Total unit cost of the kept support.
    pub support_cost: f64,
    pub sinkhorn_iters_mean: f64,
    pub sinkhorn_iters_max: usize,
    /// Pearson correlation with the previous epoch's mask; `None` while the
    /// correlation is undefined (first epoch or constant indicator).
    pub mask_corr_prev: Option<f64>,
    pub support_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::InvalidConfig("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Observer invoked after every completed epoch; lets callers persist
/// artifacts incrementally.
pub trait EpochObserver {
    fn on_epoch(&mut self, row: &MetricsRow, support: &[usize]) -> Result<()>;
}

/// No-op observer for library callers.
pub struct NoopObserver;

impl EpochObserver for NoopObserver {
    fn on_epoch(&mut self, _row: &MetricsRow, _support: &[usize]) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub final_params: Vec<f64>,
    /// Per-epoch kept unit indices.
    pub mask_archive: Vec<Vec<usize>>,
    pub n_units: usize,
    /// Set when a non-finite loss aborted the run; `final_params` then hold
    /// the last finite state.
    pub diverged: bool,
}

/// Runs the full schedule. See the module docs for the per-epoch contract.
pub fn train(
    model: &ModelSpec,
    dataset: &Dataset,
    rule: &mut UpdateRuleState,
    schedule: &TrainingSchedule,
    optimizer: &OptimizerConfig,
    group: &PruningGroupSpec,
    seed: u64,
    observer: &mut dyn EpochObserver,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    optimizer.validate()?;
    if dataset.dim != model.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset dimension {} but model input {}",
            dataset.dim, model.input_dim
        )));
    }
    if group.total_entries() != model.param_count() {
        return Err(Error::ShapeMismatch(format!(
            "group covers {} entries but model has {} parameters",
            group.total_entries(),
            model.param_count()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = model.init_params(&mut rng);
    let mut velocity = vec![0.0; theta.len()];
    let total_cost = group.total_cost();
    let total_entries = group.total_entries();

    let mut metrics = Vec::with_capacity(schedule.total_epochs);
    let mut archive: Vec<Vec<usize>> = Vec::with_capacity(schedule.total_epochs);
    let mut prev_mask: Option<HardMask> = None;
    let mut indices: Vec<usize> = (0..dataset.n_train()).collect();

    for epoch in 0..schedule.total_epochs {
        let e = epoch as f64;
        let keep = schedule.keep_fraction_at(e);
        let k = keep * total_cost;
        if rule.kind == RuleKind::Spartan {
            rule.beta = schedule.beta_at(e);
        }
        if schedule.phase_at(e) == Phase::FineTune && rule.frozen_mask.is_none() {
            let frozen = realized_support(rule, &theta, k, group)?;
            rule.freeze(frozen);
        }

        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut iter_sum = 0usize;
        let mut iter_max = 0usize;
        let mut spartan_steps = 0usize;

        for batch in indices.chunks(optimizer.batch_size) {
            let mut batch_loss = f64::NAN;
            let grad_fn = |params: &[f64]| {
                let (loss, grad) = model
                    .loss_and_grad(params, &dataset.train_features, &dataset.train_targets, batch)
                    .expect("shapes validated before the loop");
                batch_loss = loss;
                grad
            };
            let (direction, diag) = update_direction(rule, &theta, grad_fn, k, group)?;
            if !batch_loss.is_finite() {
                return Ok(diverged_outcome(metrics, theta, archive, group));
            }
            for i in 0..theta.len() {
                velocity[i] = optimizer.momentum * velocity[i]
                    + direction[i]
                    + optimizer.weight_decay * theta[i];
                theta[i] -= optimizer.learning_rate * velocity[i];
            }
            if theta.iter().any(|t| !t.is_finite()) {
                // Roll the half-applied step back so the checkpoint stays finite.
                for i in 0..theta.len() {
                    theta[i] += optimizer.learning_rate * velocity[i];
                }
                return Ok(diverged_outcome(metrics, theta, archive, group));
            }
            loss_sum += batch_loss;
            batches += 1;
            if rule.kind == RuleKind::Spartan && rule.frozen_mask.is_none() {
                iter_sum += diag.sinkhorn_iterations;
                iter_max = iter_max.max(diag.sinkhorn_iterations);
                spartan_steps += 1;
            }
        }

        let mask = realized_support(rule, &theta, k, group)?;
        let entry_mask = group.expand_mask(&mask.indicator_f64())?;
        let kept_entries: f64 = entry_mask.iter().sum();
        let support_cost: f64 = mask.support.iter().map(|&u| group.unit_cost()[u]).sum();
        // Evaluate the pruned model: hard mask applied to the dense
        // parameters, as it would be deployed.
        let pruned: Vec<f64> = theta
            .iter()
            .zip(&entry_mask)
            .map(|(&t, &m)| t * m)
            .collect();
        let eval_metric =
            model.eval_metric(&pruned, &dataset.eval_features, &dataset.eval_targets)?;
        let mask_corr_prev = prev_mask
            .as_ref()
            .and_then(|p| mask_pearson(&p.indicator, &mask.indicator).ok());

        let row = MetricsRow {
            epoch,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            eval_metric,
            realized_sparsity: 1.0 - kept_entries / total_entries as f64,
            support_cost,
            sinkhorn_iters_mean: if spartan_steps > 0 {
                iter_sum as f64 / spartan_steps as f64
            } else {
                0.0
            },
            sinkhorn_iters_max: iter_max,
            mask_corr_prev,
            support_size: mask.support_size(),
        };
        observer.on_epoch(&row, &mask.support)?;
        metrics.push(row);
        archive.push(mask.support.clone());
        prev_mask = Some(mask);
    }

    Ok(TrainOutcome {
        metrics,
        final_params: theta,
        mask_archive: archive,
        n_units: group.n_units(),
        diverged: false,
    })
}

fn diverged_outcome(
    metrics: Vec<MetricsRow>,
    theta: Vec<f64>,
    archive: Vec<Vec<usize>>,
    group: &PruningGroupSpec,
) -> TrainOutcome {
    TrainOutcome {
        metrics,
        final_params: theta,
        mask_archive: archive,
        n_units: group.n_units(),
        diverged: true,
    }
}

/// Pearson correlation between two binary indicators of equal length.
/// Undefined (error) when either indicator is constant.
pub fn mask_pearson(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "indicator lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a.len();
    if d == 0 {
        return Err(Error::DegenerateCorrelation("empty indicators".into()));
    }
    let ka = a.iter().filter(|&&x| x).count();
    let kb = b.iter().filter(|&&x| x).count();
    if ka == 0 || ka == d || kb == 0 || kb == d {
        return Err(Error::DegenerateCorrelation(
            "constant indicator has no variance".into(),
        ));
    }
    let overlap = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let num = (d * overlap) as f64 - (ka * kb) as f64;
    let den = ((ka * (d - ka)) as f64 * (kb * (d - kb)) as f64).sqrt();
    Ok(num / den)
}

/// F1 score of a predicted support against the ground truth.
pub fn support_f1(predicted: &[usize], truth: &[usize]) -> f64 {
    if predicted.is_empty() || truth.is_empty() {
        return 0.0;
    }
    let truth_set: std::collections::BTreeSet<usize> = truth.iter().copied().collect();
    let tp = predicted.iter().filter(|i| truth_set.contains(i)).count() as f64;
    let precision = tp / predicted.len() as f64;
    let recall = tp / truth.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}
