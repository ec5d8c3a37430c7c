use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::pipeline::{
    composite_kernel, estimate, fit_kernel_and_critic, prepare, EstimatorChoice, FitState,
};
use super::steps::{npg_step, trpo_step, vanilla_step, StepInfo, SurrogateData};
use crate::checkpoint;
use crate::envs::{
    collect_batch, discounted_returns, gae_advantages, make_env, CriticHead, EnvConfig, GaeConfig,
};
use crate::error::{Error, Result};
use crate::estimators::UapgConfig;
use crate::kernels::{KernelConfig, KernelModel};
use crate::linalg::CgConfig;
use crate::optim::{Adam, AdamConfig};
use crate::policy::{FisherOperator, GaussianPolicy, PolicyConfig};
use crate::rng::{derive_seed, seeded, substream};

pub const RUN_CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Vanilla,
    Npg,
    Trpo,
}

/// What the estimators integrate against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QSource {
    Gae,
    Returns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub estimator: EstimatorChoice,
    pub iterations: usize,
    pub batch_size: usize,
    /// Trust-region radius for NPG/TRPO.
    pub radius: f64,
    pub cg: CgConfig,
    pub adam: AdamConfig,
    pub critic_adam: AdamConfig,
    pub gae: GaeConfig,
    pub q_source: QSource,
    pub normalize_advantages: bool,
    pub uapg: UapgConfig,
    pub kernel: KernelConfig,
    pub policy: PolicyConfig,
    pub env: EnvConfig,
    pub seed: u64,
    /// Write a policy checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Vanilla,
            estimator: EstimatorChoice::Mc,
            iterations: 200,
            batch_size: 15000,
            radius: 0.01,
            cg: CgConfig::default(),
            adam: AdamConfig::default(),
            critic_adam: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            gae: GaeConfig::default(),
            q_source: QSource::Gae,
            normalize_advantages: true,
            uapg: UapgConfig::default(),
            kernel: KernelConfig::default(),
            policy: PolicyConfig::default(),
            env: EnvConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config("radius must be positive".into()));
        }
        self.gae.validate()?;
        self.kernel.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_return: f64,
    pub episodes: usize,
    pub grad_norm: f64,
    pub pre_transform_norm: f64,
    pub step_norm: f64,
    pub kl: f64,
    pub accepted: bool,
    pub backtracks: usize,
    pub kernel_cg_iterations: usize,
    pub kernel_cg_residual: f64,
    pub fisher_cg_iterations: usize,
    pub fisher_cg_residual: f64,
    pub spectrum_top: f64,
    pub spectrum_bottom: f64,
    pub mll: f64,
    pub critic_loss: f64,
}

const RUN_COLUMNS: &[&str] = &[
    "iteration",
    "mean_return",
    "episodes",
    "grad_norm",
    "pre_transform_norm",
    "step_norm",
    "kl",
    "accepted",
    "backtracks",
    "kernel_cg_iterations",
    "kernel_cg_residual",
    "fisher_cg_iterations",
    "fisher_cg_residual",
    "spectrum_top",
    "spectrum_bottom",
    "mll",
    "critic_loss",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rows: Vec<IterationRecord>,
    pub complete: bool,
    pub error: Option<String>,
    pub policy: GaussianPolicy,
}

impl RunRecord {
    pub fn csv_header() -> String {
        RUN_COLUMNS.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.mean_return),
                r.episodes,
                fmt_f64(r.grad_norm),
                fmt_f64(r.pre_transform_norm),
                fmt_f64(r.step_norm),
                fmt_f64(r.kl),
                u8::from(r.accepted),
                r.backtracks,
                r.kernel_cg_iterations,
                fmt_f64(r.kernel_cg_residual),
                r.fisher_cg_iterations,
                fmt_f64(r.fisher_cg_residual),
                fmt_f64(r.spectrum_top),
                fmt_f64(r.spectrum_bottom),
                fmt_f64(r.mll),
                fmt_f64(r.critic_loss),
            );
        }
        out
    }

    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_return).collect()
    }
}

/// Standardizes to zero mean and unit variance (left alone if constant).
pub fn normalize(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len() as f64;
    let mean = v.mean();
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        v.add_scalar(-mean) / (var.sqrt() + 1e-8)
    } else {
        v.add_scalar(-mean)
    }
}

/// Runs the training loop; see [`train_with_output`] for checkpoints.
pub fn train(cfg: &TrainConfig) -> Result<RunRecord> {
    train_with_output(cfg, None)
}

/// Collect → advantages → kernel/critic fit → estimate → step, for
/// `cfg.iterations` iterations. A failing iteration ends the run and the
/// record is flagged incomplete.
pub fn train_with_output(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<RunRecord> {
    cfg.validate()?;
    let env = make_env(&cfg.env)?;
    let mut init_rng = substream(cfg.seed, 0);
    let mut policy = GaussianPolicy::new(env.state_dim(), env.action_dim(), &cfg.policy, &mut init_rng);
    let mut model = KernelModel::new(env.state_dim(), cfg.kernel.clone(), &mut substream(cfg.seed, 1))?;
    let mut critic = CriticHead::zeros(model.state_kernel.feature_dim());
    let mut adam = Adam::new(policy.num_params(), cfg.adam);
    let mut fit = FitState {
        kernel_opt: Adam::new(
            model.state_kernel.num_params(),
            AdamConfig {
                learning_rate: cfg.kernel.learning_rate,
                ..AdamConfig::default()
            },
        ),
        critic_opt: Adam::new(critic.params().len(), cfg.critic_adam),
    };
    let mut record = RunRecord {
        rows: Vec::with_capacity(cfg.iterations),
        complete: true,
        error: None,
        policy: policy.clone(),
    };
    for it in 0..cfg.iterations {
        let step = run_iteration(
            it,
            cfg,
            env.as_ref(),
            &mut policy,
            &mut model,
            &mut critic,
            &mut adam,
            &mut fit,
        );
        match step {
            Ok(row) => {
                log::info!(
                    "iter {it}: return {:.4} grad {:.3e} step {:.3e}",
                    row.mean_return,
                    row.grad_norm,
                    row.step_norm
                );
                record.rows.push(row);
            }
            Err(e) => {
                log::error!("iteration {it} failed: {e}");
                record.complete = false;
                record.error = Some(e.to_string());
                break;
            }
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 {
                checkpoint::save_policy(&dir.join(format!("policy_{:05}.bin", it + 1)), &policy)?;
            }
        }
    }
    record.policy = policy;
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    it: usize,
    cfg: &TrainConfig,
    env: &dyn crate::envs::Environment,
    policy: &mut GaussianPolicy,
    model: &mut KernelModel,
    critic: &mut CriticHead,
    adam: &mut Adam,
    fit: &mut FitState,
) -> Result<IterationRecord> {
    let it_seed = derive_seed(cfg.seed, it as u64 + 1);
    let mut rng = seeded(derive_seed(it_seed, 0x5eed));
    let mut batch = collect_batch(env, policy, cfg.batch_size, it_seed, cfg.gae.gamma)?;
    let values = critic.values(&model.state_kernel, &batch.states)?;
    let final_values: Vec<f64> = critic
        .values(&model.state_kernel, &batch.final_states())?
        .iter()
        .copied()
        .collect();
    let adv = gae_advantages(&batch, &values, &final_values, &cfg.gae)?;
    let returns = discounted_returns(&batch, cfg.gae.gamma, &final_values)?;
    let q = match cfg.q_source {
        QSource::Gae if cfg.normalize_advantages => normalize(&adv),
        QSource::Gae => adv,
        QSource::Returns => returns.clone(),
    };
    batch.set_q_values(q.clone())?;

    let natural = cfg.algorithm != Algorithm::Vanilla;
    let prepared = prepare(policy, &batch.states, &batch.actions, cfg.estimator, model, &mut rng)?;
    let use_mll = cfg.estimator.uses_kernel();
    let steps = cfg.kernel.fit_steps.max(1);
    let info = fit_kernel_and_critic(
        model,
        Some(critic),
        &prepared,
        &batch.states,
        &q,
        &returns,
        use_mll,
        steps,
        fit,
        &mut rng,
    )?;
    let kernel = if cfg.estimator.uses_kernel() {
        Some(composite_kernel(model, &prepared, &batch.states)?)
    } else {
        None
    };
    let est = estimate(
        cfg.estimator,
        natural,
        &prepared,
        kernel.as_ref(),
        &q,
        &cfg.cg,
        &cfg.uapg,
        &mut rng,
    )?;

    let fisher = FisherOperator::new(prepared.scores.clone());
    let step: StepInfo = match cfg.algorithm {
        Algorithm::Vanilla => vanilla_step(policy, &est, adam)?,
        Algorithm::Npg => npg_step(policy, &fisher, &est, &cfg.cg, cfg.radius)?,
        Algorithm::Trpo => {
            let data = SurrogateData {
                states: &batch.states,
                actions: &batch.actions,
                behaviour_logprobs: &batch.logprobs,
                advantages: &q,
            };
            trpo_step(policy, &fisher, &est, &data, &cfg.cg, cfg.radius)?
        }
    };
    let (top, bottom) = est
        .spectrum
        .as_ref()
        .map(|s| (s.values[0], s.smallest()))
        .unwrap_or((f64::NAN, f64::NAN));
    Ok(IterationRecord {
        iteration: it,
        mean_return: batch.mean_return(),
        episodes: batch.episode_returns().len(),
        grad_norm: est.mean.norm(),
        pre_transform_norm: if est.spectrum.is_some() {
            est.diagnostics.pre_transform_norm
        } else {
            est.mean.norm()
        },
        step_norm: step.step_norm,
        kl: step.kl,
        accepted: step.accepted,
        backtracks: step.backtracks,
        kernel_cg_iterations: est.diagnostics.kernel_cg_iterations,
        kernel_cg_residual: est.diagnostics.kernel_cg_residual,
        fisher_cg_iterations: est.diagnostics.fisher_cg_iterations,
        fisher_cg_residual: est.diagnostics.fisher_cg_residual,
        spectrum_top: top,
        spectrum_bottom: bottom,
        mll: info.mll,
        critic_loss: info.critic_loss,
    })
}
