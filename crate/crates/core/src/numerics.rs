//! Numerically stable scalar reductions shared by the Sinkhorn iteration.
//!
//! All reductions here run in a fixed sequential order so that identical
//! inputs produce bit-identical outputs.

/// log(1 + e^x), evaluated without overflow for large positive x and without
/// cancellation for large negative x.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// log Σ_i exp(x_i) with max-shifting. Sequential reduction order.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if !max.is_finite() {
        // All entries -inf (empty sums are excluded by callers), or an inf
        // slipped through validation; either way the shift is meaningless.
        return max;
    }
    let mut sum = 0.0;
    for &x in xs {
        sum += (x - max).exp();
    }
    max + sum.ln()
}
