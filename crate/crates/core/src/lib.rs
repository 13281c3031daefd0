//! Cost-sensitive soft top-k masking and sparse-training update rules.
//!
//! The central primitive is a differentiable relaxation of "keep the k most
//! valuable units under a linear cost budget": an entropy-regularized optimal
//! transport problem solved by Sinkhorn iteration in the log domain, with a
//! closed-form backward pass. On top of it sit hard (knapsack-style)
//! projection, parameter masking with per-entry or block-structured units,
//! the IMP / dual-averaging / Spartan update rules, annealing schedules, and
//! a small deterministic trainer for desk-scale experiments.

pub mod bench;
pub mod error;
pub mod io;
pub mod masking;
pub mod numerics;
pub mod ot_topk;
pub mod schedules;
pub mod trainer;
pub mod updates;

pub use error::{Error, Result};
pub use masking::{ArraySpec, MaskLayout, ParamLayout, PruningGroupSpec};
pub use ot_topk::{
    hard_project, hard_project_parameters, lp_topk_oracle, masked_parameter_gradient,
    soft_mask_parameters, soft_topk_backward, soft_topk_backward_from_mask, soft_topk_forward,
    HardMask, InitStrategy, SinkhornConfig, SoftMaskResult, TopKInstance,
};
pub use schedules::{Phase, TrainingSchedule};
pub use trainer::{
    mask_pearson, support_f1, train, Architecture, DataSource, Dataset, DatasetSpec,
    EpochObserver, MetricsRow, ModelSpec, NoopObserver, OptimizerConfig, Targets, TrainOutcome,
};
pub use updates::{
    realized_support, step_dual_averaging, step_imp, step_spartan, update_direction, RuleKind,
    StepDiagnostics, UpdateRuleState,
};
