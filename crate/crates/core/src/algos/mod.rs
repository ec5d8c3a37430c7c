//! Policy optimization drivers: Adam ascent, natural gradient with a
//! quadratic KL budget, and TRPO's backtracking line search, each usable with
//! any estimator.

mod pipeline;
mod steps;
mod train;

pub use pipeline::{
    composite_kernel, estimate, fit_kernel_and_critic, prepare, EstimatorChoice, FitInfo,
    FitState, Prepared,
};
pub use steps::{
    fisher_quadratic, kl_scaled_step, npg_step, surrogate, trpo_step, vanilla_step, StepInfo,
    SurrogateData, TRPO_BACKTRACK, TRPO_MAX_BACKTRACKS,
};
pub use train::{
    fmt_f64, normalize, train, train_with_output, Algorithm, IterationRecord, QSource, RunRecord,
    TrainConfig, RUN_CSV_VERSION,
};
