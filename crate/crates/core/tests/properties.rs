//! Cross-cutting properties of the soft top-k operator: budget exactness,
//! box feasibility at convergence, equivariances, determinism, and the
//! monotone LP gap over a sharpness grid.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sparsekit::{
    lp_topk_oracle, soft_topk_forward, InitStrategy, SinkhornConfig, TopKInstance,
};

fn random_instance(rng: &mut ChaCha8Rng, d: usize, beta: f64) -> TopKInstance {
    let values: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let costs: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..3.0)).collect();
    let total: f64 = costs.iter().sum();
    let k = rng.gen_range(0.05..0.95) * total;
    TopKInstance::new(values, costs, k, beta).unwrap()
}

#[test]
fn budget_exact_across_dimensions_and_sharpness() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let cfg = SinkhornConfig::default();
    for &d in &[1usize, 2, 10, 100, 1000] {
        for &beta in &[0.0, 1.0, 10.0, 100.0, 1e4] {
            for _ in 0..4 {
                let inst = random_instance(&mut rng, d, beta);
                let res = soft_topk_forward(&inst, &cfg).unwrap();
                let spent: f64 = res.mask.iter().zip(&inst.costs).map(|(m, c)| m * c).sum();
                let rel = (spent - inst.budget).abs() / inst.budget;
                assert!(rel <= 1e-6, "d={d} beta={beta}: relative budget error {rel}");
            }
        }
    }
}

#[test]
fn box_feasible_at_convergence() {
    // The mu-step can overshoot the upper bound while far from the fixed
    // point, so box feasibility is a property of converged masks; the
    // sorted-threshold start plus a tight tolerance gets there reliably.
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let cfg = SinkhornConfig {
        max_iterations: 50_000,
        tolerance: 1e-10,
        init_strategy: InitStrategy::SortedThreshold,
        initial_dual: 0.0,
    };
    for _ in 0..60 {
        let d = rng.gen_range(1..40);
        let beta = rng.gen_range(0.0..16.0);
        let inst = random_instance(&mut rng, d, beta);
        let res = soft_topk_forward(&inst, &cfg).unwrap();
        assert!(res.converged);
        for &m in &res.mask {
            assert!(m >= 0.0);
            assert!(m <= 1.0 + 1e-6, "mask entry {m} above the box");
        }
    }
}

#[test]
fn mask_nonnegative_even_without_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let cfg = SinkhornConfig {
        max_iterations: 2,
        ..SinkhornConfig::default()
    };
    for _ in 0..40 {
        let d = rng.gen_range(1..30);
        let beta = rng.gen_range(0.0..200.0);
        let inst = random_instance(&mut rng, d, beta);
        let res = soft_topk_forward(&inst, &cfg).unwrap();
        assert!(res.mask.iter().all(|&m| m >= 0.0));
    }
}

#[test]
fn monotone_lp_gap_over_sharpness_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let grid = [1.0, 4.0, 16.0, 64.0, 256.0, 1024.0];
    let cfg = SinkhornConfig {
        max_iterations: 400_000,
        tolerance: 1e-14,
        init_strategy: InitStrategy::SortedThreshold,
        initial_dual: 0.0,
    };
    for trial in 0..5 {
        // Ratios in [0, 1] with adjacent gaps of at least 0.02, so the top
        // of the grid resolves the LP to 1e-2.
        let d = 10;
        let mut ratios: Vec<f64> = (0..d)
            .map(|i| (i as f64 + 0.1 + 0.8 * rng.gen::<f64>()) / d as f64)
            .collect();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| ratios[a].partial_cmp(&ratios[b]).unwrap());
        let costs: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
        let values: Vec<f64> = ratios
            .iter()
            .zip(&costs)
            .map(|(&r, &c)| r * c)
            .collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let total: f64 = costs.iter().sum();
        let k = rng.gen_range(0.2..0.8) * total;

        let lp_inst = TopKInstance::new(values.clone(), costs.clone(), k, 0.0).unwrap();
        let lp_mask = lp_topk_oracle(&lp_inst).unwrap();
        let lp_value: f64 = lp_mask.iter().zip(&values).map(|(m, v)| m * v).sum();

        let mut previous_gap = f64::INFINITY;
        let mut top_mask = Vec::new();
        for &beta in &grid {
            let inst = TopKInstance::new(values.clone(), costs.clone(), k, beta).unwrap();
            let res = soft_topk_forward(&inst, &cfg).unwrap();
            let value: f64 = res.mask.iter().zip(&values).map(|(m, v)| m * v).sum();
            let gap = lp_value - value;
            assert!(gap >= -1e-8, "trial {trial} beta {beta}: negative gap {gap}");
            assert!(
                gap <= previous_gap + 1e-8,
                "trial {trial} beta {beta}: gap {gap} above previous {previous_gap}"
            );
            previous_gap = gap;
            top_mask = res.mask;
        }
        for (m, l) in top_mask.iter().zip(&lp_mask) {
            assert!((m - l).abs() <= 1e-2, "trial {trial}: top-of-grid gap {}", (m - l).abs());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Identical inputs and config produce bit-identical outputs.
    #[test]
    fn forward_deterministic(seed in 0u64..5000, d in 1usize..40, beta in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, d, beta);
        let cfg = SinkhornConfig::default();
        let a = soft_topk_forward(&inst, &cfg).unwrap();
        let b = soft_topk_forward(&inst, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    // Permuting (v, c) permutes the mask; tolerance covers the reordered
    // sequential reductions.
    #[test]
    fn forward_permutation_equivariant(seed in 0u64..5000, d in 2usize..30, beta in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, d, beta);
        let cfg = SinkhornConfig {
            max_iterations: 20_000,
            tolerance: 1e-11,
            init_strategy: InitStrategy::SortedThreshold,
            initial_dual: 0.0,
        };
        let base = soft_topk_forward(&inst, &cfg).unwrap();

        let mut perm: Vec<usize> = (0..d).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let values: Vec<f64> = perm.iter().map(|&i| inst.values[i]).collect();
        let costs: Vec<f64> = perm.iter().map(|&i| inst.costs[i]).collect();
        let permuted = TopKInstance::new(values, costs, inst.budget, inst.sharpness).unwrap();
        let res = soft_topk_forward(&permuted, &cfg).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            prop_assert!(
                (res.mask[slot] - base.mask[src]).abs() <= 1e-12 * (1.0 + base.mask[src].abs())
            );
        }
    }

    // Scaling v by a power of two and beta by its inverse leaves z, hence
    // the mask, bit-identical (power-of-two scalings are exact in floats).
    #[test]
    fn forward_scale_covariant(seed in 0u64..5000, d in 1usize..30, exponent in -6i32..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, d, 3.0);
        let lambda = (2.0f64).powi(exponent);
        let scaled = TopKInstance::new(
            inst.values.iter().map(|&v| v * lambda).collect(),
            inst.costs.clone(),
            inst.budget,
            inst.sharpness / lambda,
        ).unwrap();
        let cfg = SinkhornConfig::default();
        let a = soft_topk_forward(&inst, &cfg).unwrap();
        let b = soft_topk_forward(&scaled, &cfg).unwrap();
        prop_assert_eq!(&a.normalized_values, &b.normalized_values);
        prop_assert_eq!(&a.mask, &b.mask);
    }

    // Uniform costs keep exactly round(k) units; general costs never exceed
    // the budget.
    #[test]
    fn hard_projection_respects_budget(seed in 0u64..5000, d in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let k = rng.gen_range(0.0..d as f64);
        let uniform = sparsekit::hard_project(&values, &vec![1.0; d], k).unwrap();
        prop_assert_eq!(uniform.support_size(), (k.round() as usize).min(d));

        let costs: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..3.0)).collect();
        let total: f64 = costs.iter().sum();
        let k = rng.gen_range(0.05..0.95) * total;
        let general = sparsekit::hard_project(&values, &costs, k).unwrap();
        let spent: f64 = general.support.iter().map(|&i| costs[i]).sum();
        prop_assert!(spent <= k + 1e-9);
        // No skipped unit still fits the leftover budget.
        let leftover = k - spent;
        for i in 0..d {
            if !general.indicator[i] {
                prop_assert!(costs[i] > leftover - 1e-9);
            }
        }
    }
}

#[test]
fn overflowing_normalized_values_rejected() {
    let inst = TopKInstance::new(vec![1e308, 1.0], vec![1.0, 1.0], 1.0, 10.0).unwrap();
    assert!(soft_topk_forward(&inst, &SinkhornConfig::default()).is_err());
}
