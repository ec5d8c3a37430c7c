use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fisher::{FisherKernelConfig, FisherKernelOperator};
use super::ski::SkiOperator;
use super::state::{DeepRbfKernel, FeatureConfig};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cg_solve, CgConfig, CgSolution, DenseOperator, LinearOperator, SumOperator};
use crate::policy::ScoreMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateGram {
    /// Interpolated onto per-dimension grids.
    Ski,
    /// Exact dense Gram; only for small batches.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub c1: f64,
    pub c2: f64,
    pub sigma2: f64,
    pub grid_size: usize,
    pub state_gram: StateGram,
    pub feature: FeatureConfig,
    pub fisher: FisherKernelConfig,
    /// CG settings for `(K + σ²I)⁻¹`; no damping is added to kernel solves.
    pub solve_cg: CgConfig,
    /// Dense minibatch size for marginal-likelihood steps.
    pub mll_batch: usize,
    pub learning_rate: f64,
    /// Marginal-likelihood ascent steps per training iteration.
    pub fit_steps: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 5e-5,
            sigma2: 1e-4,
            grid_size: 128,
            state_gram: StateGram::Ski,
            feature: FeatureConfig::default(),
            fisher: FisherKernelConfig::default(),
            solve_cg: CgConfig::undamped(500, 1e-10),
            mll_batch: 1024,
            learning_rate: 1e-3,
            fit_steps: 1,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return Err(Error::Config("c1 and c2 must be non-negative".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        if self.grid_size < 8 {
            return Err(Error::Config("grid_size must be at least 8".into()));
        }
        if self.fisher.damping < 0.0 {
            return Err(Error::Config("Fisher kernel damping must be non-negative".into()));
        }
        Ok(())
    }
}

/// State kernel parameters plus the composite-kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelModel {
    pub config: KernelConfig,
    pub state_kernel: DeepRbfKernel,
}

impl KernelModel {
    pub fn new(state_dim: usize, config: KernelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let state_kernel = DeepRbfKernel::new(state_dim, &config.feature, rng)?;
        Ok(Self {
            config,
            state_kernel,
        })
    }

    /// State-kernel operator on a batch (`n x state_dim`).
    pub fn state_operator(&self, states: &DMatrix<f64>) -> Result<Arc<dyn LinearOperator>> {
        let feats = self.state_kernel.featurize(states)?;
        Ok(match self.config.state_gram {
            StateGram::Ski => Arc::new(SkiOperator::build(
                &self.state_kernel,
                &feats.values,
                self.config.grid_size,
            )?),
            StateGram::Exact => Arc::new(DenseOperator::new(
                self.state_kernel.gram_from_features(&feats.values),
            )?),
        })
    }

    /// `K = c1 K_s + c2 K_f` on the batch behind `scores`. Components with a
    /// zero weight are not built.
    pub fn composite(
        &self,
        scores: Arc<ScoreMatrix>,
        states: &DMatrix<f64>,
        rng: &mut Rng,
    ) -> Result<CompositeKernel> {
        check_dim("composite kernel batch", scores.n(), states.nrows())?;
        let c = &self.config;
        let state = if c.c1 > 0.0 {
            Some(self.state_operator(states)?)
        } else {
            None
        };
        let fisher: Option<Arc<dyn LinearOperator>> = if c.c2 > 0.0 {
            Some(Arc::new(FisherKernelOperator::build(scores, &c.fisher, rng)?))
        } else {
            None
        };
        CompositeKernel::from_parts(states.nrows(), c.c1, state, c.c2, fisher, c.sigma2, c.solve_cg)
    }
}

/// `K = c1 K_s + c2 K_f` with the noise level used for `(K + σ²I)⁻¹`.
#[derive(Clone)]
pub struct CompositeKernel {
    pub c1: f64,
    pub c2: f64,
    pub sigma2: f64,
    pub solve_cg: CgConfig,
    state: Option<Arc<dyn LinearOperator>>,
    fisher: Option<Arc<dyn LinearOperator>>,
    sum: SumOperator,
}

impl std::fmt::Debug for CompositeKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompositeKernel")
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("sigma2", &self.sigma2)
            .field("n", &self.sum.dim())
            .finish()
    }
}

impl CompositeKernel {
    pub fn from_parts(
        n: usize,
        c1: f64,
        state: Option<Arc<dyn LinearOperator>>,
        c2: f64,
        fisher: Option<Arc<dyn LinearOperator>>,
        sigma2: f64,
        solve_cg: CgConfig,
    ) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        let mut sum = SumOperator::new(n);
        if let Some(op) = &state {
            sum = sum.with_term(c1, op.clone())?;
        }
        if let Some(op) = &fisher {
            sum = sum.with_term(c2, op.clone())?;
        }
        Ok(Self {
            c1,
            c2,
            sigma2,
            solve_cg: CgConfig {
                damping: 0.0,
                ..solve_cg
            },
            state,
            fisher,
            sum,
        })
    }

    pub fn n(&self) -> usize {
        self.sum.dim()
    }

    pub fn state(&self) -> Option<&Arc<dyn LinearOperator>> {
        self.state.as_ref()
    }

    pub fn fisher(&self) -> Option<&Arc<dyn LinearOperator>> {
        self.fisher.as_ref()
    }

    pub fn operator(&self) -> &SumOperator {
        &self.sum
    }

    /// `(K + σ²I)⁻¹ rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<CgSolution> {
        cg_solve(&self.sum, rhs, self.sigma2, &self.solve_cg)
    }

    /// `(c1 K_s + σ²I)⁻¹ rhs`.
    pub fn state_solve(&self, rhs: &DVector<f64>) -> Result<CgSolution> {
        match &self.state {
            Some(op) if self.c1 > 0.0 => {
                let scaled = SumOperator::new(self.n()).with_term(self.c1, op.clone())?;
                cg_solve(&scaled, rhs, self.sigma2, &self.solve_cg)
            }
            _ => {
                check_dim("state_solve", self.n(), rhs.len())?;
                Ok(CgSolution {
                    x: rhs / self.sigma2,
                    iterations: 0,
                    residual: 0.0,
                    converged: true,
                })
            }
        }
    }

    /// Posterior means of the value part `c1 K_s α` and the advantage part
    /// `c2 K_f α` at the samples, with `α = (K + σ²I)⁻¹ Q`.
    pub fn posterior_components(&self, q: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let alpha = self.solve(q)?.x;
        let value = match &self.state {
            Some(op) => op.apply(&alpha)? * self.c1,
            None => DVector::zeros(self.n()),
        };
        let advantage = match &self.fisher {
            Some(op) => op.apply(&alpha)? * self.c2,
            None => DVector::zeros(self.n()),
        };
        Ok((value, advantage))
    }
}
