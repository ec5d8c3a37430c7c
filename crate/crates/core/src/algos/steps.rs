use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimators::{EstimateKind, GradientEstimate};
use crate::linalg::{CgConfig, LinearOperator};
use crate::optim::Adam;
use crate::policy::{FisherOperator, GaussianPolicy};

/// Outcome of a policy update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub accepted: bool,
    pub step_norm: f64,
    /// Mean KL from the old to the new policy on the batch states
    /// (line-search steps only; NaN otherwise).
    pub kl: f64,
    pub backtracks: usize,
}

impl StepInfo {
    fn rejected() -> Self {
        Self {
            accepted: false,
            step_norm: 0.0,
            kl: f64::NAN,
            backtracks: 0,
        }
    }
}

/// Adam ascent along a vanilla estimate. A non-finite update is rejected and
/// leaves the policy and optimizer untouched.
pub fn vanilla_step(policy: &mut GaussianPolicy, estimate: &GradientEstimate, optimizer: &mut Adam) -> Result<StepInfo> {
    if !matches!(
        estimate.kind,
        EstimateKind::Mc | EstimateKind::BqVanilla | EstimateKind::UapgVanilla
    ) {
        return Err(Error::Input(format!(
            "vanilla step with a {} estimate",
            estimate.kind.as_str()
        )));
    }
    let backup = optimizer.clone();
    let delta = match optimizer.ascent_update(&estimate.mean) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("vanilla step rejected: {e}");
            return Ok(StepInfo::rejected());
        }
    };
    let theta = policy.theta() + &delta;
    if policy.set_theta(&theta).is_err() {
        *optimizer = backup;
        log::warn!("vanilla step rejected: non-finite parameters");
        return Ok(StepInfo::rejected());
    }
    Ok(StepInfo {
        accepted: true,
        step_norm: delta.norm(),
        kl: f64::NAN,
        backtracks: 0,
    })
}

/// `dᵀ (G + λI) d`.
pub fn fisher_quadratic(fisher: &FisherOperator, d: &DVector<f64>, damping: f64) -> Result<f64> {
    Ok(d.dot(&fisher.apply(d)?) + damping * d.norm_squared())
}

/// Full step `√(2 radius / dᵀ(G + λI)d) · d`, or `None` for a zero or
/// non-positive-curvature direction.
pub fn kl_scaled_step(
    fisher: &FisherOperator,
    direction: &DVector<f64>,
    damping: f64,
    radius: f64,
) -> Result<Option<DVector<f64>>> {
    if direction.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    let quad = fisher_quadratic(fisher, direction, damping)?;
    if !(quad > 0.0 && quad.is_finite()) {
        log::warn!("step rejected: dᵀ(G + λI)d = {quad:e}");
        return Ok(None);
    }
    Ok(Some(direction * (2.0 * radius / quad).sqrt()))
}

fn check_natural(estimate: &GradientEstimate) -> Result<()> {
    if estimate.kind.is_natural() {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "trust-region step with a {} estimate",
            estimate.kind.as_str()
        )))
    }
}

/// Natural step with its length set by the quadratic KL model.
pub fn npg_step(
    policy: &mut GaussianPolicy,
    fisher: &FisherOperator,
    estimate: &GradientEstimate,
    cg: &CgConfig,
    radius: f64,
) -> Result<StepInfo> {
    check_natural(estimate)?;
    let Some(step) = kl_scaled_step(fisher, &estimate.mean, cg.damping, radius)? else {
        return Ok(StepInfo::rejected());
    };
    let theta = policy.theta() + &step;
    if policy.set_theta(&theta).is_err() {
        return Ok(StepInfo::rejected());
    }
    Ok(StepInfo {
        accepted: true,
        step_norm: step.norm(),
        kl: f64::NAN,
        backtracks: 0,
    })
}

/// Importance-weighted surrogate `mean(exp(log π(a|s) − log π_b(a|s)) A)`.
pub fn surrogate(
    policy: &GaussianPolicy,
    states: &nalgebra::DMatrix<f64>,
    actions: &nalgebra::DMatrix<f64>,
    behaviour_logprobs: &DVector<f64>,
    advantages: &DVector<f64>,
) -> Result<f64> {
    let lp = policy.log_probs(states, actions)?;
    let n = advantages.len() as f64;
    Ok((0..advantages.len())
        .map(|i| (lp[i] - behaviour_logprobs[i]).exp() * advantages[i])
        .sum::<f64>()
        / n)
}

pub const TRPO_BACKTRACK: f64 = 0.5;
pub const TRPO_MAX_BACKTRACKS: usize = 10;

/// Data the TRPO line search evaluates candidates on.
pub struct SurrogateData<'a> {
    pub states: &'a nalgebra::DMatrix<f64>,
    pub actions: &'a nalgebra::DMatrix<f64>,
    pub behaviour_logprobs: &'a DVector<f64>,
    pub advantages: &'a DVector<f64>,
}

/// Backtracking line search from the KL-scaled natural step: the first
/// candidate with non-negative surrogate improvement and mean KL within the
/// radius is taken, otherwise the policy is left unchanged.
pub fn trpo_step(
    policy: &mut GaussianPolicy,
    fisher: &FisherOperator,
    estimate: &GradientEstimate,
    data: &SurrogateData<'_>,
    cg: &CgConfig,
    radius: f64,
) -> Result<StepInfo> {
    check_natural(estimate)?;
    let Some(full) = kl_scaled_step(fisher, &estimate.mean, cg.damping, radius)? else {
        return Ok(StepInfo::rejected());
    };
    let theta0 = policy.theta();
    let base = surrogate(policy, data.states, data.actions, data.behaviour_logprobs, data.advantages)?;
    let mut frac = 1.0;
    for k in 0..=TRPO_MAX_BACKTRACKS {
        let step = &full * frac;
        let mut candidate = policy.clone();
        if candidate.set_theta(&(&theta0 + &step)).is_ok() {
            let value = surrogate(&candidate, data.states, data.actions, data.behaviour_logprobs, data.advantages)?;
            let kl = policy.mean_kl(&candidate, data.states)?;
            if value - base >= 0.0 && kl <= radius && value.is_finite() {
                *policy = candidate;
                return Ok(StepInfo {
                    accepted: true,
                    step_norm: step.norm(),
                    kl,
                    backtracks: k,
                });
            }
        }
        frac *= TRPO_BACKTRACK;
    }
    Ok(StepInfo {
        backtracks: TRPO_MAX_BACKTRACKS,
        ..StepInfo::rejected()
    })
}
