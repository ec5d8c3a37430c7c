//! One estimation pass: scores, optional kernel/critic fitting, the
//! composite kernel and the chosen estimator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::envs::{critic_loss_and_grads, CriticHead};
use crate::error::Result;
use crate::estimators::{
    dbqpg_gradient, mc_gradient, natural_gradient, uapg_natural, uapg_vanilla, GradientEstimate,
    UapgConfig,
};
use crate::kernels::{gp_mll_and_grad, CompositeKernel, FisherKernelOperator, KernelModel};
use crate::linalg::{CgConfig, LinearOperator};
use crate::optim::Adam;
use crate::policy::{GaussianPolicy, ScoreMatrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Mc,
    Dbqpg,
    Uapg,
}

impl EstimatorChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorChoice::Mc => "mc",
            EstimatorChoice::Dbqpg => "dbqpg",
            EstimatorChoice::Uapg => "uapg",
        }
    }

    pub fn uses_kernel(self) -> bool {
        self != EstimatorChoice::Mc
    }
}

/// Optimizers for the shared feature/kernel parameters and the critic head.
#[derive(Debug, Clone)]
pub struct FitState {
    pub kernel_opt: Adam,
    pub critic_opt: Adam,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FitInfo {
    /// Marginal-likelihood objective of the last step (NaN when not fitted).
    pub mll: f64,
    pub critic_loss: f64,
}

/// The batch-level pieces the estimators share.
pub struct Prepared {
    pub scores: Arc<ScoreMatrix>,
    pub fisher_kernel: Option<Arc<FisherKernelOperator>>,
}

pub fn prepare(
    policy: &GaussianPolicy,
    states: &DMatrix<f64>,
    actions: &DMatrix<f64>,
    choice: EstimatorChoice,
    model: &KernelModel,
    rng: &mut Rng,
) -> Result<Prepared> {
    let scores = Arc::new(policy.scores(states, actions)?);
    let fisher_kernel = if choice.uses_kernel() && model.config.c2 > 0.0 {
        Some(Arc::new(FisherKernelOperator::build(
            scores.clone(),
            &model.config.fisher,
            rng,
        )?))
    } else {
        None
    };
    Ok(Prepared {
        scores,
        fisher_kernel,
    })
}

/// `steps` joint updates of the shared features: marginal-likelihood ascent
/// (kernel estimators only) plus value-loss descent for the critic.
#[allow(clippy::too_many_arguments)]
pub fn fit_kernel_and_critic(
    model: &mut KernelModel,
    critic: Option<&mut CriticHead>,
    prepared: &Prepared,
    states: &DMatrix<f64>,
    q: &DVector<f64>,
    critic_targets: &DVector<f64>,
    use_mll: bool,
    steps: usize,
    fit: &mut FitState,
    rng: &mut Rng,
) -> Result<FitInfo> {
    let mut info = FitInfo {
        mll: f64::NAN,
        critic_loss: f64::NAN,
    };
    let mut critic = critic;
    let n = states.nrows();
    for _ in 0..steps {
        let mut grad = DVector::zeros(model.state_kernel.num_params());
        if use_mll {
            let m = model.config.mll_batch.min(n).max(1);
            let mut idx = sample(rng, n, m).into_vec();
            idx.sort_unstable();
            let sub_states = DMatrix::from_fn(m, states.ncols(), |i, j| states[(idx[i], j)]);
            let sub_q = DVector::from_fn(m, |i, _| q[idx[i]]);
            let block = match &prepared.fisher_kernel {
                Some(op) => Some(op.dense_submatrix(&idx)?),
                None => None,
            };
            let c = &model.config;
            let (value, g) = gp_mll_and_grad(
                &model.state_kernel,
                c.c1,
                c.c2,
                c.sigma2,
                &sub_states,
                &sub_q,
                block.as_ref(),
            )?;
            info.mll = value.objective;
            grad += g;
        }
        if let Some(critic) = critic.as_deref_mut() {
            let cg = critic_loss_and_grads(critic, &model.state_kernel, states, critic_targets)?;
            info.critic_loss = cg.loss;
            let nf = cg.features.len();
            grad.rows_mut(0, nf).axpy(-1.0, &cg.features, 1.0);
            let mut head = critic.params();
            fit.critic_opt.ascend(&mut head, &(-&cg.head))?;
            critic.set_params(&head)?;
        }
        let mut p = model.state_kernel.params();
        fit.kernel_opt.ascend(&mut p, &grad)?;
        model.state_kernel.set_params(&p)?;
    }
    Ok(info)
}

pub fn composite_kernel(
    model: &KernelModel,
    prepared: &Prepared,
    states: &DMatrix<f64>,
) -> Result<Arc<CompositeKernel>> {
    let c = &model.config;
    let state = if c.c1 > 0.0 {
        Some(model.state_operator(states)?)
    } else {
        None
    };
    let fisher = prepared
        .fisher_kernel
        .clone()
        .map(|op| op as Arc<dyn LinearOperator>);
    Ok(Arc::new(CompositeKernel::from_parts(
        states.nrows(),
        c.c1,
        state,
        c.c2,
        fisher,
        c.sigma2,
        c.solve_cg,
    )?))
}

/// Runs the chosen estimator; `natural` selects the NPG/TRPO variants.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    choice: EstimatorChoice,
    natural: bool,
    prepared: &Prepared,
    kernel: Option<&Arc<CompositeKernel>>,
    q: &DVector<f64>,
    cg: &CgConfig,
    uapg: &UapgConfig,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    let scores = prepared.scores.clone();
    let vanilla = match (choice, kernel) {
        (EstimatorChoice::Mc, _) => mc_gradient(&scores, q)?,
        (_, Some(k)) => dbqpg_gradient(scores.clone(), q, k.clone())?,
        (_, None) => {
            return Err(crate::Error::Config(
                "kernel estimators need a composite kernel".into(),
            ))
        }
    };
    match (choice, natural) {
        (EstimatorChoice::Uapg, false) => uapg_vanilla(&vanilla, uapg, rng),
        (EstimatorChoice::Uapg, true) => {
            let nat = natural_gradient(scores.clone(), &vanilla, cg)?;
            let k = kernel.expect("checked above").clone();
            uapg_natural(scores, k, &nat, uapg, cg.damping, rng)
        }
        (_, false) => Ok(vanilla),
        (_, true) => natural_gradient(scores, &vanilla, cg),
    }
}
