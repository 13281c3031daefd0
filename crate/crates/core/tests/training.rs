//! End-to-end trainer behavior: reproducibility, schedule coupling,
//! divergence handling, and the planted-regression recovery baseline.

use std::collections::{BTreeMap, BTreeSet};

use sparsekit::trainer::NoopObserver;
use sparsekit::{
    train, Architecture, DataSource, Dataset, DatasetSpec, ModelSpec, OptimizerConfig,
    PruningGroupSpec, SinkhornConfig, TrainingSchedule, UpdateRuleState,
};

fn planted_dataset(dim: usize, support: usize, seed: u64) -> Dataset {
    Dataset::build(&DatasetSpec {
        source: DataSource::PlantedSparseRegression {
            dim,
            true_support_size: support,
            noise_std: 0.01,
            n_samples: 256,
            seed,
        },
        train_fraction: 0.75,
    })
    .unwrap()
}

fn entry_group(model: &ModelSpec) -> PruningGroupSpec {
    PruningGroupSpec::per_entry(model.param_layout(), &BTreeMap::new(), BTreeSet::new(), 0.0)
        .unwrap()
}

fn linreg(dim: usize) -> ModelSpec {
    ModelSpec::new(Architecture::LinearRegression, dim, 1).unwrap()
}

#[test]
fn zero_epoch_run_returns_initialization() {
    let model = linreg(24);
    let data = planted_dataset(24, 4, 5);
    let group = entry_group(&model);
    let mut schedule = TrainingSchedule::new(10, 0.5, 5.0).unwrap();
    schedule.total_epochs = 0;
    let mut rule = UpdateRuleState::dual_averaging();
    let out = train(
        &model,
        &data,
        &mut rule,
        &schedule,
        &OptimizerConfig::default(),
        &group,
        9,
        &mut NoopObserver,
    )
    .unwrap();
    assert!(out.metrics.is_empty());
    assert!(out.mask_archive.is_empty());
    assert!(!out.diverged);

    // The returned parameters are exactly the seeded initialization.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    assert_eq!(out.final_params, model.init_params(&mut rng));
}

#[test]
fn identical_seeds_give_bit_identical_runs() {
    let model = linreg(40);
    let data = planted_dataset(40, 8, 3);
    let group = entry_group(&model);
    let schedule = TrainingSchedule::new(8, 0.8, 6.0).unwrap();
    let opt = OptimizerConfig {
        learning_rate: 0.2,
        ..OptimizerConfig::default()
    };
    let run = |seed: u64| {
        let mut rule = UpdateRuleState::spartan(1.0, SinkhornConfig::default());
        train(
            &model, &data, &mut rule, &schedule, &opt, &group, seed, &mut NoopObserver,
        )
        .unwrap()
    };
    let a = run(77);
    let b = run(77);
    assert_eq!(a, b);
    let c = run(78);
    assert_ne!(a.final_params, c.final_params);
}

#[test]
fn support_size_tracks_keep_fraction() {
    let d = 60;
    let model = linreg(d);
    let data = planted_dataset(d, 10, 21);
    let group = entry_group(&model);
    let schedule = TrainingSchedule::new(10, 0.7, 8.0).unwrap();
    for mut rule in [
        UpdateRuleState::imp(),
        UpdateRuleState::dual_averaging(),
        UpdateRuleState::spartan(1.0, SinkhornConfig::default()),
    ] {
        let out = train(
            &model,
            &data,
            &mut rule,
            &schedule,
            &OptimizerConfig::default(),
            &group,
            4,
            &mut NoopObserver,
        )
        .unwrap();
        for row in &out.metrics {
            let keep = schedule.keep_fraction_at(row.epoch as f64);
            let expected = (keep * d as f64).round() as usize;
            assert_eq!(
                row.support_size, expected,
                "epoch {} keep {keep}",
                row.epoch
            );
            let sparsity = 1.0 - row.support_size as f64 / d as f64;
            assert!((row.realized_sparsity - sparsity).abs() <= 1e-12);
        }
        // Mask frozen through fine-tuning.
        let ft_start = 8;
        for e in ft_start..10 {
            assert_eq!(out.mask_archive[e], out.mask_archive[ft_start]);
            if e > ft_start {
                assert_eq!(out.metrics[e].mask_corr_prev, Some(1.0));
            }
        }
    }
}

#[test]
fn divergent_learning_rate_aborts_with_finite_checkpoint() {
    let model = linreg(30);
    let data = planted_dataset(30, 5, 13);
    let group = entry_group(&model);
    let schedule = TrainingSchedule::new(20, 0.5, 4.0).unwrap();
    let opt = OptimizerConfig {
        learning_rate: 1e6,
        momentum: 0.0,
        ..OptimizerConfig::default()
    };
    let mut rule = UpdateRuleState::dual_averaging();
    let out = train(
        &model, &data, &mut rule, &schedule, &opt, &group, 2, &mut NoopObserver,
    )
    .unwrap();
    assert!(out.diverged);
    assert!(out.final_params.iter().all(|p| p.is_finite()));
    assert!(out.metrics.len() < 20);
}

#[test]
fn spartan_beta_zero_tracks_dual_averaging_supports() {
    // At beta_max = 0 the Spartan forward point is the dual-averaging one
    // scaled by the keep fraction, so with a small learning rate the two
    // rules rank parameters identically for many epochs.
    let d = 50;
    let model = linreg(d);
    let data = planted_dataset(d, 10, 31);
    let group = entry_group(&model);
    let mut schedule = TrainingSchedule::new(12, 0.6, 1.0).unwrap();
    schedule.beta_start = 0.0;
    schedule.beta_max = 0.0;
    let opt = OptimizerConfig {
        learning_rate: 1e-4,
        momentum: 0.0,
        weight_decay: 0.0,
        batch_size: 64,
    };

    let mut da = UpdateRuleState::dual_averaging();
    let out_da = train(
        &model, &data, &mut da, &schedule, &opt, &group, 6, &mut NoopObserver,
    )
    .unwrap();

    let mut sp = UpdateRuleState::spartan(0.0, SinkhornConfig::default());
    let opt_scaled = OptimizerConfig {
        // Rescaling the rate by total cost / k compensates the constant
        // mask's k / total-cost factor on the update direction.
        learning_rate: opt.learning_rate / schedule.keep_fraction_at(12.0),
        ..opt
    };
    let out_sp = train(
        &model, &data, &mut sp, &schedule, &opt_scaled, &group, 6, &mut NoopObserver,
    )
    .unwrap();

    for (a, b) in out_da.mask_archive.iter().zip(&out_sp.mask_archive) {
        assert_eq!(a, b);
    }
}
