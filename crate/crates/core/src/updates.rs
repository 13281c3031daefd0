//! Sparse-training parameter update rules.
//!
//! All three rules evaluate the loss gradient at hard-projected (exactly
//! k-sparse at the unit level) parameters and differ in how the gradient is
//! routed back to the dense parameter vector:
//!
//! * IMP: masked entries receive zero gradient.
//! * Dual averaging (Top-KAST style): the dense vector receives the full
//!   gradient taken at the projected parameters.
//! * Spartan: parameters are soft-masked before projection and the gradient
//!   flows through the closed-form backward pass of the soft mask.
//!
//! The rule owns sparsification; the caller supplies `grad_fn`, which
//! evaluates the loss gradient at whatever parameters it is handed. A frozen
//! mask (fine-tuning) overrides mask computation for every rule and reduces
//! the update to an IMP-style masked step on that support.

use crate::error::Result;
use crate::masking::PruningGroupSpec;
use crate::ot_topk::{
    hard_project_parameters, masked_parameter_gradient, soft_mask_parameters, HardMask,
    InitStrategy, SinkhornConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Imp,
    DualAveraging,
    Spartan,
}

/// Mutable state carried across steps of one training loop.
#[derive(Debug, Clone)]
pub struct UpdateRuleState {
    pub kind: RuleKind,
    /// Sharpness; only meaningful for Spartan.
    pub beta: f64,
    pub sinkhorn: SinkhornConfig,
    /// When present, overrides mask computation (fine-tuning phase).
    pub frozen_mask: Option<HardMask>,
    /// Last converged scalar dual, reused when the init strategy is
    /// `DualCache`.
    pub last_dual: Option<f64>,
}

impl UpdateRuleState {
    pub fn imp() -> Self {
        UpdateRuleState {
            kind: RuleKind::Imp,
            beta: 0.0,
            sinkhorn: SinkhornConfig::default(),
            frozen_mask: None,
            last_dual: None,
        }
    }

    pub fn dual_averaging() -> Self {
        UpdateRuleState {
            kind: RuleKind::DualAveraging,
            ..Self::imp()
        }
    }

    pub fn spartan(beta: f64, sinkhorn: SinkhornConfig) -> Self {
        UpdateRuleState {
            kind: RuleKind::Spartan,
            beta,
            sinkhorn,
            frozen_mask: None,
            last_dual: None,
        }
    }

    pub fn freeze(&mut self, mask: HardMask) {
        self.frozen_mask = Some(mask);
    }
}

/// Per-step observability: the realized hard support and Sinkhorn effort.
#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics {
    /// Unit indices evaluated as nonzero in the forward pass.
    pub support: Vec<usize>,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_converged: bool,
}

/// Raw update direction `d` such that the plain-SGD step is
/// `theta' = theta - eta * d`. Momentum and weight decay are the caller's
/// business (they apply to the dense vector after the rule).
pub fn update_direction<F>(
    state: &mut UpdateRuleState,
    theta: &[f64],
    grad_fn: F,
    k: f64,
    group: &PruningGroupSpec,
) -> Result<(Vec<f64>, StepDiagnostics)>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    if let Some(frozen) = state.frozen_mask.clone() {
        return masked_step_on(&frozen, theta, grad_fn, group);
    }
    match state.kind {
        RuleKind::Imp => {
            let hm = hard_project_parameters(theta, group, k)?;
            masked_step_on(&hm, theta, grad_fn, group)
        }
        RuleKind::DualAveraging => {
            let hm = hard_project_parameters(theta, group, k)?;
            let entry_ind = group.expand_mask(&hm.indicator_f64())?;
            let projected: Vec<f64> = theta
                .iter()
                .zip(&entry_ind)
                .map(|(&t, &m)| t * m)
                .collect();
            let grad = grad_fn(&projected);
            Ok((
                grad,
                StepDiagnostics {
                    support: hm.support,
                    ..StepDiagnostics::default()
                },
            ))
        }
        RuleKind::Spartan => {
            let mut cfg = state.sinkhorn.clone();
            if cfg.init_strategy == InitStrategy::DualCache {
                if let Some(mu) = state.last_dual {
                    cfg.initial_dual = mu;
                }
            }
            let (soft, result) = soft_mask_parameters(theta, group, k, state.beta, &cfg)?;
            state.last_dual = Some(result.dual_mu);
            // Hard projection of the soft-masked vector: the loss is never
            // evaluated on merely approximately-sparse parameters.
            let hm = hard_project_parameters(&soft, group, k)?;
            let entry_ind = group.expand_mask(&hm.indicator_f64())?;
            let projected: Vec<f64> = soft
                .iter()
                .zip(&entry_ind)
                .map(|(&s, &m)| s * m)
                .collect();
            let grad = grad_fn(&projected);
            let direction = masked_parameter_gradient(theta, &grad, &result, group)?;
            Ok((
                direction,
                StepDiagnostics {
                    support: hm.support,
                    sinkhorn_iterations: result.iterations,
                    sinkhorn_converged: result.converged,
                },
            ))
        }
    }
}

fn masked_step_on<F>(
    mask: &HardMask,
    theta: &[f64],
    grad_fn: F,
    group: &PruningGroupSpec,
) -> Result<(Vec<f64>, StepDiagnostics)>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let entry_ind = group.expand_mask(&mask.indicator_f64())?;
    let projected: Vec<f64> = theta
        .iter()
        .zip(&entry_ind)
        .map(|(&t, &m)| t * m)
        .collect();
    let grad = grad_fn(&projected);
    let direction: Vec<f64> = grad
        .iter()
        .zip(&entry_ind)
        .map(|(&g, &m)| g * m)
        .collect();
    Ok((
        direction,
        StepDiagnostics {
            support: mask.support.clone(),
            ..StepDiagnostics::default()
        },
    ))
}

/// The hard unit support the rule would evaluate the loss on at the current
/// parameters, without taking a step. Used for per-epoch mask snapshots.
pub fn realized_support(
    state: &UpdateRuleState,
    theta: &[f64],
    k: f64,
    group: &PruningGroupSpec,
) -> Result<HardMask> {
    if let Some(frozen) = &state.frozen_mask {
        return Ok(frozen.clone());
    }
    match state.kind {
        RuleKind::Imp | RuleKind::DualAveraging => hard_project_parameters(theta, group, k),
        RuleKind::Spartan => {
            let (soft, _) = soft_mask_parameters(theta, group, k, state.beta, &state.sinkhorn)?;
            hard_project_parameters(&soft, group, k)
        }
    }
}

/// One iterative-magnitude-pruning step: project, take the gradient at the
/// projected parameters, update only the surviving entries.
pub fn step_imp<F>(
    theta: &[f64],
    grad_fn: F,
    k: f64,
    eta: f64,
    group: &PruningGroupSpec,
) -> Result<(Vec<f64>, StepDiagnostics)>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let mut state = UpdateRuleState::imp();
    let (dir, diag) = update_direction(&mut state, theta, grad_fn, k, group)?;
    Ok((apply(theta, &dir, eta), diag))
}

/// One dual-averaging (Top-KAST) step: project, take the gradient at the
/// projected parameters, update the dense vector.
pub fn step_dual_averaging<F>(
    theta: &[f64],
    grad_fn: F,
    k: f64,
    eta: f64,
    group: &PruningGroupSpec,
) -> Result<(Vec<f64>, StepDiagnostics)>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let mut state = UpdateRuleState::dual_averaging();
    let (dir, diag) = update_direction(&mut state, theta, grad_fn, k, group)?;
    Ok((apply(theta, &dir, eta), diag))
}

/// One Spartan step: soft-mask, hard-project the soft-masked vector, take
/// the gradient there, and route it back through the soft mask's backward
/// pass. `state` carries the dual cache and an optional frozen mask.
pub fn step_spartan<F>(
    theta: &[f64],
    grad_fn: F,
    k: f64,
    beta: f64,
    eta: f64,
    group: &PruningGroupSpec,
    state: &mut UpdateRuleState,
) -> Result<(Vec<f64>, StepDiagnostics)>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    state.kind = RuleKind::Spartan;
    state.beta = beta;
    let (dir, diag) = update_direction(state, theta, grad_fn, k, group)?;
    Ok((apply(theta, &dir, eta), diag))
}

fn apply(theta: &[f64], direction: &[f64], eta: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(direction)
        .map(|(&t, &d)| t - eta * d)
        .collect()
}
