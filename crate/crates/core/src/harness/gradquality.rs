//! Gradient-quality study: cosine accuracy against a large-sample MC
//! oracle and normalized variance across repeated estimates.
//!
//! Normalized variance is `tr(Ĉov) / ‖ḡ‖²` over the `R` repeats, with the
//! unbiased sample covariance. It is zero by definition when `R = 1`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::config::GradQualityConfig;
use crate::algos::{
    composite_kernel, estimate, fit_kernel_and_critic, fmt_f64, prepare, EstimatorChoice,
    FitState, QSource, TrainConfig,
};
use crate::checkpoint;
use crate::envs::{
    collect_batch, discounted_returns, gae_advantages, make_env, Environment, SampleBatch,
};
use crate::error::Result;
use crate::estimators::mc_gradient;
use crate::kernels::KernelModel;
use crate::linalg::cosine_similarity;
use crate::optim::{Adam, AdamConfig};
use crate::policy::GaussianPolicy;
use crate::rng::{derive_seed, seeded, substream};

pub const GRADQUALITY_CSV_VERSION: u32 = 1;
const GRADQUALITY_COLUMNS: &str = "estimator,n,accuracy_mean,accuracy_stderr,normvar";
const ORACLE_STREAM: u64 = 0x04AC_1E;

#[derive(Debug, Clone, PartialEq)]
pub struct GradQualityRow {
    pub estimator: EstimatorChoice,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_stderr: f64,
    pub normvar: f64,
}

#[derive(Debug, Clone)]
pub struct GradQualityReport {
    pub rows: Vec<GradQualityRow>,
    pub repeats: usize,
    pub oracle_norm: f64,
    /// Set when `repeats == 1`: stderr and normalized variance are 0 by definition.
    pub degenerate_variance: bool,
}

impl GradQualityReport {
    pub fn csv_header() -> &'static str {
        GRADQUALITY_COLUMNS
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{GRADQUALITY_COLUMNS}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.estimator.as_str(),
                r.n,
                fmt_f64(r.accuracy_mean),
                fmt_f64(r.accuracy_stderr),
                fmt_f64(r.normvar)
            );
        }
        out
    }

    pub fn row(&self, estimator: EstimatorChoice, n: usize) -> Option<&GradQualityRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.n == n)
    }
}

/// Per-sample Q values for a study batch, with a zero value function.
pub fn study_q_values(batch: &SampleBatch, source: QSource, train: &TrainConfig) -> Result<DVector<f64>> {
    let finals = vec![0.0; batch.episodes.len()];
    match source {
        QSource::Returns => discounted_returns(batch, train.gae.gamma, &finals),
        QSource::Gae => gae_advantages(batch, &DVector::zeros(batch.n()), &finals, &train.gae),
    }
}

/// Policy under study: the checkpoint if one is configured, else a fresh
/// initialisation from `seed`.
pub fn study_policy(train: &TrainConfig, gq: &GradQualityConfig, env: &dyn Environment, seed: u64) -> Result<GaussianPolicy> {
    match &gq.checkpoint {
        Some(path) => checkpoint::load_policy(path),
        None => Ok(GaussianPolicy::new(
            env.state_dim(),
            env.action_dim(),
            &train.policy,
            &mut substream(seed, 0),
        )),
    }
}

/// MC gradient on `gq.oracle_samples` samples.
pub fn oracle_gradient(
    train: &TrainConfig,
    gq: &GradQualityConfig,
    env: &dyn Environment,
    policy: &GaussianPolicy,
    seed: u64,
) -> Result<DVector<f64>> {
    let batch = collect_batch(
        env,
        policy,
        gq.oracle_samples,
        derive_seed(seed, ORACLE_STREAM),
        train.gae.gamma,
    )?;
    let q = study_q_values(&batch, gq.q_source, train)?;
    let scores = policy.scores(&batch.states, &batch.actions)?;
    Ok(mc_gradient(&scores, &q)?.mean)
}

/// Runs every estimator on the same `R` batches per sample size and
/// scores them against the oracle.
pub fn grad_quality_study(train: &TrainConfig, gq: &GradQualityConfig, seed: u64) -> Result<GradQualityReport> {
    gq.validate()?;
    train.kernel.validate()?;
    let env = make_env(&train.env)?;
    let policy = study_policy(train, gq, env.as_ref(), seed)?;
    let oracle = oracle_gradient(train, gq, env.as_ref(), &policy, seed)?;
    log::info!("oracle gradient norm {:.4e}", oracle.norm());
    let base_model = KernelModel::new(env.state_dim(), train.kernel.clone(), &mut substream(seed, 1))?;

    let mut estimates: Vec<Vec<Vec<DVector<f64>>>> =
        vec![vec![Vec::with_capacity(gq.repeats); gq.sample_sizes.len()]; gq.estimators.len()];
    for (si, &n) in gq.sample_sizes.iter().enumerate() {
        for r in 0..gq.repeats {
            let batch_seed = derive_seed(derive_seed(seed, n as u64), r as u64);
            let batch = collect_batch(env.as_ref(), &policy, n, batch_seed, train.gae.gamma)?;
            let q = study_q_values(&batch, gq.q_source, train)?;
            for (ei, &choice) in gq.estimators.iter().enumerate() {
                let mut rng = seeded(derive_seed(batch_seed, 0x5eed + ei as u64));
                let mut model = base_model.clone();
                let prepared = prepare(&policy, &batch.states, &batch.actions, choice, &model, &mut rng)?;
                let kernel = if choice.uses_kernel() {
                    if gq.kernel_fit_steps > 0 {
                        let mut fit = FitState {
                            kernel_opt: Adam::new(
                                model.state_kernel.num_params(),
                                AdamConfig {
                                    learning_rate: train.kernel.learning_rate,
                                    ..AdamConfig::default()
                                },
                            ),
                            critic_opt: Adam::new(1, AdamConfig::default()),
                        };
                        fit_kernel_and_critic(
                            &mut model,
                            None,
                            &prepared,
                            &batch.states,
                            &q,
                            &q,
                            true,
                            gq.kernel_fit_steps,
                            &mut fit,
                            &mut rng,
                        )?;
                    }
                    Some(composite_kernel(&model, &prepared, &batch.states)?)
                } else {
                    None
                };
                let est = estimate(choice, false, &prepared, kernel.as_ref(), &q, &train.cg, &train.uapg, &mut rng)?;
                estimates[ei][si].push(est.mean);
            }
        }
        log::info!("sample size {n}: {} repeats done", gq.repeats);
    }

    let mut rows = Vec::new();
    for (ei, &choice) in gq.estimators.iter().enumerate() {
        for (si, &n) in gq.sample_sizes.iter().enumerate() {
            let (accuracy_mean, accuracy_stderr, normvar) = summarize(&estimates[ei][si], &oracle);
            rows.push(GradQualityRow {
                estimator: choice,
                n,
                accuracy_mean,
                accuracy_stderr,
                normvar,
            });
        }
    }
    Ok(GradQualityReport {
        rows,
        repeats: gq.repeats,
        oracle_norm: oracle.norm(),
        degenerate_variance: gq.repeats == 1,
    })
}

/// `(mean cosine, stderr of the cosine, normalized variance)`.
pub fn summarize(estimates: &[DVector<f64>], oracle: &DVector<f64>) -> (f64, f64, f64) {
    let r = estimates.len();
    let cos: Vec<f64> = estimates.iter().map(|g| cosine_similarity(g, oracle)).collect();
    let acc = cos.iter().sum::<f64>() / r as f64;
    if r < 2 {
        return (acc, 0.0, 0.0);
    }
    let var_cos = cos.iter().map(|c| (c - acc).powi(2)).sum::<f64>() / (r - 1) as f64;
    let stacked = DMatrix::from_columns(estimates);
    let mean = stacked.column_mean();
    let trace = estimates
        .iter()
        .map(|g| (g - &mean).norm_squared())
        .sum::<f64>()
        / (r - 1) as f64;
    let denom = mean.norm_squared();
    let normvar = if denom > 0.0 { trace / denom } else { f64::INFINITY };
    (acc, (var_cos / r as f64).sqrt(), normvar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_by_hand() {
        let oracle = DVector::from_vec(vec![1.0, 0.0]);
        let est = vec![
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![1.0, -1.0]),
        ];
        let (acc, se, nv) = summarize(&est, &oracle);
        let c = 1.0 / 2f64.sqrt();
        assert!((acc - c).abs() < 1e-15);
        assert_eq!(se, 0.0);
        // mean (1, 0); deviations (0, ±1); trace = 2 / 1
        assert!((nv - 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_repeat_is_degenerate() {
        let oracle = DVector::from_vec(vec![1.0, 2.0]);
        let (acc, se, nv) = summarize(&[DVector::from_vec(vec![2.0, 4.0])], &oracle);
        assert!((acc - 1.0).abs() < 1e-15);
        assert_eq!((se, nv), (0.0, 0.0));
    }
}
