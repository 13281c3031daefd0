//! Maps model parameters to mask units.
//!
//! A pruning group partitions the entries of a set of named 2-d parameter
//! arrays into units: one unit per entry, or one unit per contiguous B x B
//! block. Each unit carries a strictly positive cost and a valuation
//! `v = c^p * sum(|theta_e|)` over its entries. Excluded arrays keep a mask
//! of 1 everywhere and contribute no units.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Unit granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskLayout {
    PerEntry,
    Blocks { block_size: usize },
}

/// One named 2-d parameter array. Vectors are declared as a single row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArraySpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl ArraySpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        ArraySpec {
            name: name.into(),
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered collection of parameter arrays; the flat parameter vector is
/// their row-major concatenation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    pub arrays: Vec<ArraySpec>,
}

impl ParamLayout {
    pub fn new(arrays: Vec<ArraySpec>) -> Self {
        ParamLayout { arrays }
    }

    pub fn total_len(&self) -> usize {
        self.arrays.iter().map(ArraySpec::len).sum()
    }

    /// Flat offset of each array.
    pub fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.arrays.len());
        let mut acc = 0;
        for a in &self.arrays {
            offsets.push(acc);
            acc += a.len();
        }
        offsets
    }
}

/// Per-layer and total dense-equivalent FLOP counts for a masked model:
/// each weight entry contributes one multiply and one add, so a layer costs
/// `2 * sum(mask)` at batch size 1.
pub fn flop_cost(layout: &ParamLayout, entry_mask: &[f64]) -> Result<(Vec<(String, f64)>, f64)> {
    if entry_mask.len() != layout.total_len() {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} but layout has {} entries",
            entry_mask.len(),
            layout.total_len()
        )));
    }
    let mut per_layer = Vec::with_capacity(layout.arrays.len());
    let mut total = 0.0;
    let mut offset = 0;
    for a in &layout.arrays {
        let kept: f64 = entry_mask[offset..offset + a.len()].iter().sum();
        let flops = 2.0 * kept;
        per_layer.push((a.name.clone(), flops));
        total += flops;
        offset += a.len();
    }
    Ok((per_layer, total))
}

/// Suggested sharpness for B x B blocks given the unstructured value: block
/// values average B^2 entry magnitudes, shrinking their spread by ~B^2, and
/// the block cost grows by B^2, so the normalized spread shrinks by B.
pub fn suggested_block_beta(unstructured_beta: f64, block_size: usize) -> f64 {
    unstructured_beta * block_size as f64
}

/// Assignment of parameter entries to mask units with costs and a valuation
/// exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningGroupSpec {
    layout: MaskLayout,
    params: ParamLayout,
    excluded: BTreeSet<String>,
    valuation_exponent: f64,
    unit_cost: Vec<f64>,
    /// Flat entry indices per unit.
    units: Vec<Vec<usize>>,
    /// Unit index per flat entry; `None` for excluded entries.
    entry_unit: Vec<Option<usize>>,
}

impl PruningGroupSpec {
    /// One unit per entry of every included array. `entry_costs` overrides
    /// the default cost of 1 per entry, keyed by array name.
    pub fn per_entry(
        params: ParamLayout,
        entry_costs: &BTreeMap<String, f64>,
        excluded: BTreeSet<String>,
        valuation_exponent: f64,
    ) -> Result<Self> {
        Self::build(
            MaskLayout::PerEntry,
            params,
            entry_costs,
            excluded,
            valuation_exponent,
        )
    }

    /// One unit per B x B block of every included array; each included
    /// array's dimensions must be divisible by B. The default unit cost is
    /// the entry count B^2 times the per-entry cost.
    pub fn blocks(
        params: ParamLayout,
        block_size: usize,
        entry_costs: &BTreeMap<String, f64>,
        excluded: BTreeSet<String>,
        valuation_exponent: f64,
    ) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidConfig("block size must be >= 1".into()));
        }
        Self::build(
            MaskLayout::Blocks { block_size },
            params,
            entry_costs,
            excluded,
            valuation_exponent,
        )
    }

    fn build(
        layout: MaskLayout,
        params: ParamLayout,
        entry_costs: &BTreeMap<String, f64>,
        excluded: BTreeSet<String>,
        valuation_exponent: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&valuation_exponent) {
            return Err(Error::InvalidConfig(format!(
                "valuation exponent must lie in [0, 1], got {valuation_exponent}"
            )));
        }
        let known: BTreeSet<&str> = params.arrays.iter().map(|a| a.name.as_str()).collect();
        for name in excluded.iter().chain(entry_costs.keys()) {
            if !known.contains(name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown parameter array '{name}'"
                )));
            }
        }
        for (name, &cost) in entry_costs {
            if !cost.is_finite() || cost <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "entry cost for '{name}' must be finite and positive, got {cost}"
                )));
            }
        }

        let total_len = params.total_len();
        let mut unit_cost = Vec::new();
        let mut units: Vec<Vec<usize>> = Vec::new();
        let mut entry_unit = vec![None; total_len];

        let offsets = params.offsets();
        for (a, &offset) in params.arrays.iter().zip(&offsets) {
            if excluded.contains(&a.name) {
                continue;
            }
            let per_entry_cost = entry_costs.get(&a.name).copied().unwrap_or(1.0);
            match layout {
                MaskLayout::PerEntry => {
                    for e in 0..a.len() {
                        entry_unit[offset + e] = Some(units.len());
                        units.push(vec![offset + e]);
                        unit_cost.push(per_entry_cost);
                    }
                }
                MaskLayout::Blocks { block_size: b } => {
                    if a.rows % b != 0 || a.cols % b != 0 {
                        return Err(Error::InvalidConfig(format!(
                            "array '{}' is {}x{}, not divisible by block size {b}",
                            a.name, a.rows, a.cols
                        )));
                    }
                    for br in 0..a.rows / b {
                        for bc in 0..a.cols / b {
                            let unit_idx = units.len();
                            let mut entries = Vec::with_capacity(b * b);
                            for r in br * b..(br + 1) * b {
                                for col in bc * b..(bc + 1) * b {
                                    let flat = offset + r * a.cols + col;
                                    entries.push(flat);
                                    entry_unit[flat] = Some(unit_idx);
                                }
                            }
                            units.push(entries);
                            unit_cost.push(per_entry_cost * (b * b) as f64);
                        }
                    }
                }
            }
        }

        if units.is_empty() {
            return Err(Error::InvalidConfig(
                "group contains no prunable units (everything excluded?)".into(),
            ));
        }

        Ok(PruningGroupSpec {
            layout,
            params,
            excluded,
            valuation_exponent,
            unit_cost,
            units,
            entry_unit,
        })
    }

    pub fn layout(&self) -> MaskLayout {
        self.layout
    }

    pub fn params(&self) -> &ParamLayout {
        &self.params
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn total_entries(&self) -> usize {
        self.entry_unit.len()
    }

    pub fn unit_cost(&self) -> &[f64] {
        &self.unit_cost
    }

    pub fn valuation_exponent(&self) -> f64 {
        self.valuation_exponent
    }

    /// Sequential sum of unit costs.
    pub fn total_cost(&self) -> f64 {
        self.unit_cost.iter().sum()
    }

    /// Entry indices belonging to a unit.
    pub fn unit_entries(&self, unit: usize) -> &[usize] {
        &self.units[unit]
    }

    fn check_entry_len(&self, len: usize) -> Result<()> {
        if len != self.entry_unit.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries, got {len}",
                self.entry_unit.len()
            )));
        }
        Ok(())
    }

    fn check_unit_len(&self, len: usize) -> Result<()> {
        if len != self.units.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} units, got {len}",
                self.units.len()
            )));
        }
        Ok(())
    }

    /// Per-unit valuation `v_j = c_j^p * sum(|theta_e|)` over the unit's
    /// entries.
    pub fn unit_values(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_entry_len(theta.len())?;
        let p = self.valuation_exponent;
        Ok(self
            .units
            .iter()
            .zip(&self.unit_cost)
            .map(|(entries, &c)| {
                let magnitude: f64 = entries.iter().map(|&e| theta[e].abs()).sum();
                if p == 0.0 {
                    magnitude
                } else {
                    c.powf(p) * magnitude
                }
            })
            .collect())
    }

    fn expand_with(&self, unit_vals: &[f64], fill: f64) -> Result<Vec<f64>> {
        self.check_unit_len(unit_vals.len())?;
        Ok(self
            .entry_unit
            .iter()
            .map(|u| match u {
                Some(j) => unit_vals[*j],
                None => fill,
            })
            .collect())
    }

    /// Broadcast a per-unit mask to entries; excluded entries get 1.
    pub fn expand_mask(&self, unit_mask: &[f64]) -> Result<Vec<f64>> {
        self.expand_with(unit_mask, 1.0)
    }

    /// Broadcast a per-unit vector to entries; excluded entries get 0.
    pub fn expand_grad(&self, unit_vals: &[f64]) -> Result<Vec<f64>> {
        self.expand_with(unit_vals, 0.0)
    }

    /// Sum a per-entry vector into units: the exact adjoint of
    /// [`expand_mask`](Self::expand_mask) restricted to included entries.
    pub fn collapse_grad(&self, entry_vals: &[f64]) -> Result<Vec<f64>> {
        self.check_entry_len(entry_vals.len())?;
        Ok(self
            .units
            .iter()
            .map(|entries| entries.iter().map(|&e| entry_vals[e]).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single(rows: usize, cols: usize) -> ParamLayout {
        ParamLayout::new(vec![ArraySpec::new("w", rows, cols)])
    }

    fn no_costs() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn per_entry_magnitude_values() {
        let g =
            PruningGroupSpec::per_entry(single(1, 2), &no_costs(), BTreeSet::new(), 0.0).unwrap();
        assert_eq!(g.unit_values(&[3.0, -1.0]).unwrap(), vec![3.0, 1.0]);
    }

    #[test]
    fn cost_weighted_values_with_p_one() {
        let mut costs = BTreeMap::new();
        costs.insert("a".to_string(), 2.0);
        costs.insert("b".to_string(), 1.0);
        let layout = ParamLayout::new(vec![ArraySpec::new("a", 1, 1), ArraySpec::new("b", 1, 1)]);
        let g = PruningGroupSpec::per_entry(layout, &costs, BTreeSet::new(), 1.0).unwrap();
        assert_eq!(g.unit_values(&[3.0, -1.0]).unwrap(), vec![6.0, 1.0]);
    }

    #[test]
    fn block_values_sum_magnitudes() {
        let g = PruningGroupSpec::blocks(single(2, 4), 2, &no_costs(), BTreeSet::new(), 0.0)
            .unwrap();
        let theta = [1.0, -1.0, 2.0, 2.0, 1.0, 1.0, 2.0, -2.0];
        assert_eq!(g.unit_values(&theta).unwrap(), vec![4.0, 8.0]);
        assert_eq!(g.unit_cost(), &[4.0, 4.0]);
    }

    #[test]
    fn block_mask_broadcast() {
        let g = PruningGroupSpec::blocks(single(2, 4), 2, &no_costs(), BTreeSet::new(), 0.0)
            .unwrap();
        let m = g.expand_mask(&[1.0, 0.0]).unwrap();
        assert_eq!(m, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn collapse_of_uniform_expand_scales_by_block_area() {
        let g = PruningGroupSpec::blocks(single(4, 4), 2, &no_costs(), BTreeSet::new(), 0.0)
            .unwrap();
        let x = [0.5, -2.0, 1.5, 3.0];
        let back = g.collapse_grad(&g.expand_grad(&x).unwrap()).unwrap();
        for (b, xi) in back.iter().zip(x) {
            assert_abs_diff_eq!(*b, 4.0 * xi, epsilon = 1e-15);
        }
    }

    #[test]
    fn excluded_arrays_masked_to_one() {
        let layout = ParamLayout::new(vec![ArraySpec::new("w", 1, 2), ArraySpec::new("b", 1, 2)]);
        let mut excluded = BTreeSet::new();
        excluded.insert("b".to_string());
        let g = PruningGroupSpec::per_entry(layout, &no_costs(), excluded, 0.0).unwrap();
        assert_eq!(g.n_units(), 2);
        assert_eq!(g.expand_mask(&[0.25, 0.75]).unwrap(), vec![0.25, 0.75, 1.0, 1.0]);
        assert_eq!(g.expand_grad(&[0.25, 0.75]).unwrap(), vec![0.25, 0.75, 0.0, 0.0]);
        // Excluded entries never reach a unit.
        assert_eq!(g.collapse_grad(&[1.0, 2.0, 50.0, 60.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn indivisible_blocks_rejected() {
        let err =
            PruningGroupSpec::blocks(single(3, 4), 2, &no_costs(), BTreeSet::new(), 0.0)
                .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g =
            PruningGroupSpec::per_entry(single(1, 3), &no_costs(), BTreeSet::new(), 0.0).unwrap();
        assert!(g.unit_values(&[1.0]).is_err());
        assert!(g.expand_mask(&[1.0]).is_err());
        assert!(g.collapse_grad(&[1.0]).is_err());
    }

    #[test]
    fn flop_cost_examples() {
        // dense 10 -> 5 layer: 2 * 50 = 100 FLOPs
        let layout = single(5, 10);
        let (_, total) = flop_cost(&layout, &vec![1.0; 50]).unwrap();
        assert_abs_diff_eq!(total, 100.0, epsilon = 1e-12);

        let mut half = vec![1.0; 50];
        half.iter_mut().take(25).for_each(|m| *m = 0.0);
        let (_, total) = flop_cost(&layout, &half).unwrap();
        assert_abs_diff_eq!(total, 50.0, epsilon = 1e-12);

        // two layers 10 -> 5 -> 3 at 50% / 100%
        let layout = ParamLayout::new(vec![
            ArraySpec::new("w1", 5, 10),
            ArraySpec::new("w2", 3, 5),
        ]);
        let mut mask = vec![1.0; 65];
        mask.iter_mut().take(25).for_each(|m| *m = 0.0);
        let (per_layer, total) = flop_cost(&layout, &mask).unwrap();
        assert_abs_diff_eq!(per_layer[0].1, 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(per_layer[1].1, 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(total, 80.0, epsilon = 1e-12);
    }

    #[test]
    fn suggested_beta_scales_with_block_size() {
        assert_eq!(suggested_block_beta(20.0, 16), 320.0);
        assert_eq!(suggested_block_beta(20.0, 32), 640.0);
    }

    proptest! {
        // <expand(x), y> == <x, collapse(y)> exactly up to float roundoff.
        #[test]
        fn expand_collapse_adjoint(
            xs in proptest::collection::vec(-10.0f64..10.0, 4),
            ys in proptest::collection::vec(-10.0f64..10.0, 16),
        ) {
            let g = PruningGroupSpec::blocks(single(4, 4), 2, &no_costs(), BTreeSet::new(), 0.0)
                .unwrap();
            let ex = g.expand_grad(&xs).unwrap();
            let lhs: f64 = ex.iter().zip(&ys).map(|(a, b)| a * b).sum();
            let collapsed = g.collapse_grad(&ys).unwrap();
            let rhs: f64 = xs.iter().zip(&collapsed).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        // Valuation is 1-homogeneous in |theta| and sign-invariant.
        #[test]
        fn valuation_homogeneous_and_sign_invariant(
            theta in proptest::collection::vec(-5.0f64..5.0, 8),
            lambda in 0.1f64..10.0,
        ) {
            let g = PruningGroupSpec::per_entry(single(2, 4), &no_costs(), BTreeSet::new(), 0.5)
                .unwrap();
            let base = g.unit_values(&theta).unwrap();
            let scaled: Vec<f64> = theta.iter().map(|t| t * lambda).collect();
            let vs = g.unit_values(&scaled).unwrap();
            for (s, b) in vs.iter().zip(&base) {
                prop_assert!((s - lambda * b).abs() <= 1e-9 * (1.0 + s.abs()));
            }
            let flipped: Vec<f64> = theta.iter().map(|t| -t).collect();
            prop_assert_eq!(g.unit_values(&flipped).unwrap(), base);
        }
    }
}
