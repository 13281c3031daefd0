//! Cost-sensitive soft top-k masking.
//!
//! Given values `v`, strictly positive costs `c`, a budget `k` and a
//! sharpness `beta`, the soft top-k operator returns a mask `m` in `[0, 1]^d`
//! with `c^T m = k` that concentrates on the units with the largest `v/c`
//! ratios as `beta` grows. The forward pass runs Sinkhorn iteration on the
//! one-column entropic optimal transport reformulation; the backward pass is
//! a closed-form expression in the converged mask. An exact fractional
//! knapsack solver for the underlying LP and a greedy hard projection round
//! out the module.
//!
//! All arithmetic stays in the log domain and all reductions are sequential,
//! so identical inputs produce bit-identical outputs.

use crate::error::{Error, Result};
use crate::masking::PruningGroupSpec;
use crate::numerics::{log1p_exp, log_sum_exp};

/// A single soft top-k problem: values, costs, budget and sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKInstance {
    pub values: Vec<f64>,
    pub costs: Vec<f64>,
    pub budget: f64,
    pub sharpness: f64,
}

impl TopKInstance {
    /// Validates and constructs an instance. Requires `d >= 1`, finite
    /// entries, `c_i > 0`, `0 < k <= sum(c)` and `beta >= 0`.
    pub fn new(values: Vec<f64>, costs: Vec<f64>, budget: f64, sharpness: f64) -> Result<Self> {
        let inst = TopKInstance {
            values,
            costs,
            budget,
            sharpness,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Convenience constructor with unit costs.
    pub fn with_unit_costs(values: Vec<f64>, budget: f64, sharpness: f64) -> Result<Self> {
        let costs = vec![1.0; values.len()];
        Self::new(values, costs, budget, sharpness)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sequential sum of the cost vector.
    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.values.len();
        if d == 0 {
            return Err(Error::InvalidInstance("empty value vector".into()));
        }
        if self.costs.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "{} values but {} costs",
                d,
                self.costs.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite value entry".into()));
        }
        for &c in &self.costs {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::InvalidInstance(format!(
                    "costs must be finite and strictly positive, got {c}"
                )));
            }
        }
        if !self.sharpness.is_finite() || self.sharpness < 0.0 {
            return Err(Error::InvalidInstance(format!(
                "sharpness must be finite and >= 0, got {}",
                self.sharpness
            )));
        }
        let total = self.total_cost();
        if !self.budget.is_finite() || self.budget <= 0.0 || self.budget > total {
            return Err(Error::InvalidInstance(format!(
                "budget must satisfy 0 < k <= {total}, got {}",
                self.budget
            )));
        }
        Ok(())
    }

    /// The working vector `z = beta * v / c`. Rejects entries that overflow.
    fn normalized_values(&self) -> Result<Vec<f64>> {
        let z: Vec<f64> = self
            .values
            .iter()
            .zip(&self.costs)
            .map(|(&v, &c)| self.sharpness * v / c)
            .collect();
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInstance(
                "beta * v / c overflows to a non-finite value".into(),
            ));
        }
        Ok(z)
    }
}

/// How the scalar dual variable is initialized before Sinkhorn iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Start from `initial_dual` as given (default 0).
    Cold,
    /// Start from a cached dual carried over by the caller, passed through
    /// `initial_dual`.
    DualCache,
    /// Sort the `v/c` ratios and start from minus the normalized value at the
    /// budget threshold unit.
    SortedThreshold,
}

/// Sinkhorn iteration controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub init_strategy: InitStrategy,
    pub initial_dual: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            max_iterations: 100,
            tolerance: 0.01,
            init_strategy: InitStrategy::Cold,
            initial_dual: 0.0,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be a positive finite real, got {}",
                self.tolerance
            )));
        }
        if !self.initial_dual.is_finite() {
            return Err(Error::InvalidConfig("initial_dual must be finite".into()));
        }
        Ok(())
    }
}

/// Output of the soft top-k forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaskResult {
    /// Mask entries; in `[0, 1]` at convergence (intermediate iterates may
    /// overshoot the upper bound slightly).
    pub mask: Vec<f64>,
    /// Scalar dual enforcing the budget marginal.
    pub dual_mu: f64,
    /// Per-unit duals enforcing the box marginal.
    pub dual_nu: Vec<f64>,
    /// Completed Sinkhorn iterations.
    pub iterations: usize,
    /// Whether the relative stopping criterion fired before `max_iterations`.
    pub converged: bool,
    /// Working vector `z = beta * v / c`.
    pub normalized_values: Vec<f64>,
    /// Budget the mask was solved for; `sum(c .* mask) == budget` holds by
    /// construction of the mu-step.
    pub budget: f64,
    /// Sharpness the mask was solved for.
    pub sharpness: f64,
}

/// Index of the unit at which cumulative cost, in descending `v/c` order,
/// first reaches the budget. Ties in the ratio break toward the lower index.
fn budget_threshold_index(values: &[f64], costs: &[f64], budget: f64) -> usize {
    let order = ratio_order(values, costs);
    let mut cumulative = 0.0;
    for &i in &order {
        cumulative += costs[i];
        if cumulative >= budget {
            return i;
        }
    }
    *order.last().expect("non-empty instance")
}

/// Indices sorted by `v/c` descending, ties broken by lower index first.
fn ratio_order(values: &[f64], costs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a] / costs[a];
        let rb = values[b] / costs[b];
        rb.partial_cmp(&ra)
            .expect("ratios are finite")
            .then(a.cmp(&b))
    });
    order
}

/// Soft top-k forward pass: Sinkhorn iteration on the entropic OT
/// reformulation of the budgeted LP, entirely in the log domain.
///
/// Iterates
/// `nu_t = log c - log(1 + exp(z + mu_{t-1}))`,
/// `mu_t = log k - logsumexp(z + nu_t)`,
/// `m_t = exp(z + mu_t + nu_t - log c)`,
/// stopping when `|v^T (m_t - m_{t-1})| < tol * |v^T m_{t-1}|` or the
/// iteration cap is hit. Non-convergence is reported through the flag, never
/// as an error; the last iterate is returned either way.
pub fn soft_topk_forward(inst: &TopKInstance, cfg: &SinkhornConfig) -> Result<SoftMaskResult> {
    inst.validate()?;
    cfg.validate()?;
    let d = inst.len();
    let z = inst.normalized_values()?;
    let log_c: Vec<f64> = inst.costs.iter().map(|&c| c.ln()).collect();
    let log_k = inst.budget.ln();

    let mut mu_prev = match cfg.init_strategy {
        InitStrategy::Cold | InitStrategy::DualCache => cfg.initial_dual,
        InitStrategy::SortedThreshold => {
            let i_k = budget_threshold_index(&inst.values, &inst.costs, inst.budget);
            -z[i_k]
        }
    };

    let mut mask_prev: Vec<f64> = vec![1.0; d];
    let mut mask = vec![0.0; d];
    let mut nu = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    let mut mu = mu_prev;
    let mut iterations = 0;
    let mut converged = false;

    for t in 1..=cfg.max_iterations {
        iterations = t;
        for i in 0..d {
            nu[i] = log_c[i] - log1p_exp(z[i] + mu_prev);
            shifted[i] = z[i] + nu[i];
        }
        mu = log_k - log_sum_exp(&shifted);
        for i in 0..d {
            mask[i] = (z[i] + mu + nu[i] - log_c[i]).exp();
        }

        if inst.sharpness == 0.0 {
            // z is identically zero, so the very first full iteration lands
            // on the exact fixed point m = k / sum(c): skip the comparison
            // against the all-ones seed.
            converged = true;
            break;
        }

        let mut change = 0.0;
        let mut level = 0.0;
        for i in 0..d {
            change += inst.values[i] * (mask[i] - mask_prev[i]);
            level += inst.values[i] * mask_prev[i];
        }
        if change.abs() < cfg.tolerance * level.abs() {
            converged = true;
            break;
        }
        if t < cfg.max_iterations {
            std::mem::swap(&mut mask_prev, &mut mask);
            mu_prev = mu;
        }
    }

    Ok(SoftMaskResult {
        mask,
        dual_mu: mu,
        dual_nu: nu,
        iterations,
        converged,
        normalized_values: z,
        budget: inst.budget,
        sharpness: inst.sharpness,
    })
}

/// Closed-form soft top-k backward pass.
///
/// Given the upstream gradient `g = dL/dm`, returns
/// `beta * m .* (1 - m) .* (g / c - a1 / (k - a2))` with
/// `a1 = sum(g m (1-m))` and `a2 = sum(c m^2)`.
///
/// An exactly binary mask annihilates the `m (1-m)` damping, so the
/// indeterminate correction is irrelevant and the exact limit — the zero
/// vector — is returned. Otherwise a vanishing denominator means the inputs
/// are inconsistent and an error is raised.
pub fn soft_topk_backward(
    grad: &[f64],
    result: &SoftMaskResult,
    inst: &TopKInstance,
) -> Result<Vec<f64>> {
    inst.validate()?;
    if result.mask.len() != inst.len() {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} does not match instance length {}",
            result.mask.len(),
            inst.len()
        )));
    }
    soft_topk_backward_from_mask(
        grad,
        &result.mask,
        &inst.costs,
        inst.budget,
        inst.sharpness,
    )
}

/// Backward pass from raw parts; see [`soft_topk_backward`].
pub fn soft_topk_backward_from_mask(
    grad: &[f64],
    mask: &[f64],
    costs: &[f64],
    budget: f64,
    sharpness: f64,
) -> Result<Vec<f64>> {
    let d = mask.len();
    if grad.len() != d || costs.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "gradient ({}), mask ({}) and costs ({}) must share a length",
            grad.len(),
            d,
            costs.len()
        )));
    }
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut all_binary = true;
    for i in 0..d {
        let w = mask[i] * (1.0 - mask[i]);
        a1 += grad[i] * w;
        a2 += costs[i] * mask[i] * mask[i];
        if w != 0.0 {
            all_binary = false;
        }
    }
    if all_binary {
        return Ok(vec![0.0; d]);
    }
    let denom = budget - a2;
    if denom.abs() < 1e-12 {
        return Err(Error::SingularBackward { gap: denom.abs() });
    }
    let correction = a1 / denom;
    Ok((0..d)
        .map(|i| sharpness * mask[i] * (1.0 - mask[i]) * (grad[i] / costs[i] - correction))
        .collect())
}

/// Exact solution of the budgeted LP
/// `max v^T m  s.t.  0 <= m <= 1, c^T m = k`
/// by fractional knapsack: fill units in descending `v/c` order, give the
/// boundary unit the fractional remainder. Ties break toward the lower index.
pub fn lp_topk_oracle(inst: &TopKInstance) -> Result<Vec<f64>> {
    inst.validate()?;
    let order = ratio_order(&inst.values, &inst.costs);
    let mut mask = vec![0.0; inst.len()];
    let mut remaining = inst.budget;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        if inst.costs[i] <= remaining {
            mask[i] = 1.0;
            remaining -= inst.costs[i];
        } else {
            mask[i] = remaining / inst.costs[i];
            remaining = 0.0;
        }
    }
    Ok(mask)
}

/// A hard (binary) mask over units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardMask {
    /// Selected unit indices, ascending.
    pub support: Vec<usize>,
    /// Binary indicator, length d.
    pub indicator: Vec<bool>,
    /// The last unit that would complete the budget in descending `v/c`
    /// order; used to warm-start Sinkhorn iteration. `None` when `k <= 0`.
    pub threshold_index: Option<usize>,
}

impl HardMask {
    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    /// Indicator as 0.0/1.0 entries.
    pub fn indicator_f64(&self) -> Vec<f64> {
        self.indicator
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Cost-aware hard top-k projection.
///
/// Uniform costs select the `round(k / c)` largest units by value; general
/// costs fill greedily by `v/c` ratio, skipping any unit whose cost exceeds
/// the remaining budget. No fractional units. `k <= 0` yields an empty
/// support and `k >= sum(c)` the full support; neither is an error.
pub fn hard_project(values: &[f64], costs: &[f64], k: f64) -> Result<HardMask> {
    let d = values.len();
    if d == 0 {
        return Err(Error::InvalidInstance("empty value vector".into()));
    }
    if costs.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "{} values but {} costs",
            d,
            costs.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) || !k.is_finite() {
        return Err(Error::InvalidInstance("non-finite input".into()));
    }
    for &c in costs {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::InvalidInstance(format!(
                "costs must be finite and strictly positive, got {c}"
            )));
        }
    }

    if k <= 0.0 {
        return Ok(HardMask {
            support: Vec::new(),
            indicator: vec![false; d],
            threshold_index: None,
        });
    }

    let order = ratio_order(values, costs);
    let threshold_index = Some(budget_threshold_index(values, costs, k));
    let total: f64 = costs.iter().sum();

    let mut indicator = vec![false; d];
    if k >= total {
        indicator.iter_mut().for_each(|b| *b = true);
    } else if costs.iter().all(|&c| c == costs[0]) {
        let n = ((k / costs[0]).round() as usize).min(d);
        for &i in order.iter().take(n) {
            indicator[i] = true;
        }
    } else {
        let mut remaining = k;
        for &i in &order {
            if costs[i] <= remaining {
                indicator[i] = true;
                remaining -= costs[i];
            }
        }
    }

    let support: Vec<usize> = (0..d).filter(|&i| indicator[i]).collect();
    Ok(HardMask {
        support,
        indicator,
        threshold_index,
    })
}

/// Hard projection of a parameter vector at the unit level: unit values come
/// from the group's valuation of `|theta|`.
pub fn hard_project_parameters(
    theta: &[f64],
    group: &PruningGroupSpec,
    k: f64,
) -> Result<HardMask> {
    let values = group.unit_values(theta)?;
    hard_project(&values, group.unit_cost(), k)
}

/// Soft top-k magnitude masking of parameters: per-unit values from the
/// group's valuation of `|theta|`, mask broadcast back to entries, output
/// `theta .* m`.
pub fn soft_mask_parameters(
    theta: &[f64],
    group: &PruningGroupSpec,
    k: f64,
    beta: f64,
    cfg: &SinkhornConfig,
) -> Result<(Vec<f64>, SoftMaskResult)> {
    let values = group.unit_values(theta)?;
    let inst = TopKInstance::new(values, group.unit_cost().to_vec(), k, beta)?;
    let result = soft_topk_forward(&inst, cfg)?;
    let entry_mask = group.expand_mask(&result.mask)?;
    let masked: Vec<f64> = theta
        .iter()
        .zip(&entry_mask)
        .map(|(&t, &m)| t * m)
        .collect();
    Ok((masked, result))
}

fn sign_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum()
    }
}

/// Chain rule through `y = theta .* expand(m(u))` where `u` is the group's
/// valuation of `|theta|`:
/// `dL/dtheta = m .* g + sign(theta) .* expand(c^p .* backward(collapse(theta .* g)))`
/// with `sign(0) = 0`.
pub fn masked_parameter_gradient(
    theta: &[f64],
    grad_out: &[f64],
    result: &SoftMaskResult,
    group: &PruningGroupSpec,
) -> Result<Vec<f64>> {
    if theta.len() != grad_out.len() {
        return Err(Error::ShapeMismatch(format!(
            "theta length {} but gradient length {}",
            theta.len(),
            grad_out.len()
        )));
    }
    let entry_mask = group.expand_mask(&result.mask)?;
    if entry_mask.len() != theta.len() {
        return Err(Error::ShapeMismatch(format!(
            "group covers {} entries but theta has {}",
            entry_mask.len(),
            theta.len()
        )));
    }
    let weighted: Vec<f64> = theta
        .iter()
        .zip(grad_out)
        .map(|(&t, &g)| t * g)
        .collect();
    let upstream = group.collapse_grad(&weighted)?;
    let mut unit_grad = soft_topk_backward_from_mask(
        &upstream,
        &result.mask,
        group.unit_cost(),
        result.budget,
        result.sharpness,
    )?;
    // Valuation chain: du_j / d|theta_e| = c_j^p for entries of unit j.
    let p = group.valuation_exponent();
    if p != 0.0 {
        for (g, &c) in unit_grad.iter_mut().zip(group.unit_cost()) {
            *g *= c.powf(p);
        }
    }
    let broadcast = group.expand_grad(&unit_grad)?;
    Ok((0..theta.len())
        .map(|e| entry_mask[e] * grad_out[e] + sign_zero(theta[e]) * broadcast[e])
        .collect())
}
