use std::sync::Arc;

use nalgebra::DVector;

use super::{EstimateKind, GradientEstimate};
use crate::error::{check_dim, Error, Result};
use crate::kernels::CompositeKernel;
use crate::linalg::{CgConfig, LinearOperator};
use crate::policy::{fisher_solve, FisherOperator, ScoreMatrix};

/// `c2 G − c2² U (K + σ²I)⁻¹ Uᵀ`, applied through score products and CG.
#[derive(Clone)]
pub struct BqCovariance {
    scores: Arc<ScoreMatrix>,
    kernel: Arc<CompositeKernel>,
}

impl BqCovariance {
    pub fn new(scores: Arc<ScoreMatrix>, kernel: Arc<CompositeKernel>) -> Self {
        Self { scores, kernel }
    }
}

impl LinearOperator for BqCovariance {
    fn dim(&self) -> usize {
        self.scores.num_params()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let c2 = self.kernel.c2;
        if c2 == 0.0 {
            check_dim("BqCovariance::apply", self.dim(), v.len())?;
            return Ok(DVector::zeros(self.dim()));
        }
        let utv = self.scores.jvp(v)?;
        let solved = self.kernel.solve(&utv)?.x;
        let combined = utv * (c2 / self.scores.n() as f64) - solved * (c2 * c2);
        self.scores.vjp(&combined)
    }

    fn description(&self) -> String {
        format!("BQ gradient covariance (|Θ|={})", self.dim())
    }
}

/// BQ posterior mean `c2 U (K + σ²I)⁻¹ Q` with its lazy covariance.
pub fn dbqpg_gradient(
    scores: Arc<ScoreMatrix>,
    q: &DVector<f64>,
    kernel: Arc<CompositeKernel>,
) -> Result<GradientEstimate> {
    check_dim("dbqpg_gradient Q", scores.n(), q.len())?;
    check_dim("dbqpg_gradient kernel", scores.n(), kernel.n())?;
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite Q values".into()));
    }
    let mut est = GradientEstimate::plain(EstimateKind::BqVanilla, DVector::zeros(scores.num_params()));
    if kernel.c2 > 0.0 {
        let sol = kernel.solve(q)?;
        if !sol.converged {
            log::debug!(
                "kernel CG stopped at relative residual {:.3e} after {} iterations",
                sol.residual,
                sol.iterations
            );
        }
        est.diagnostics.kernel_cg_iterations = sol.iterations;
        est.diagnostics.kernel_cg_residual = sol.residual;
        est.mean = scores.vjp(&sol.x)? * kernel.c2;
    }
    est.covariance = Some(Arc::new(BqCovariance::new(scores, kernel)));
    Ok(est)
}

/// `C v` for a vanilla BQ estimate.
pub fn dbqpg_covariance_mvm(estimate: &GradientEstimate, v: &DVector<f64>) -> Result<DVector<f64>> {
    if estimate.kind != EstimateKind::BqVanilla {
        return Err(Error::Input(format!(
            "covariance products need a bq_vanilla estimate, got {}",
            estimate.kind.as_str()
        )));
    }
    match &estimate.covariance {
        Some(op) => op.apply(v),
        None => Err(Error::Input("estimate carries no covariance".into())),
    }
}

/// Preconditions a vanilla estimate with `(G + λI)⁻¹`, `λ = cg.damping`.
pub fn natural_gradient(
    scores: Arc<ScoreMatrix>,
    estimate: &GradientEstimate,
    cg: &CgConfig,
) -> Result<GradientEstimate> {
    let kind = match estimate.kind {
        EstimateKind::Mc => EstimateKind::McNatural,
        EstimateKind::BqVanilla => EstimateKind::BqNatural,
        other => {
            return Err(Error::Input(format!(
                "natural preconditioning of a {} estimate",
                other.as_str()
            )))
        }
    };
    let fisher = FisherOperator::new(scores);
    let sol = fisher_solve(&fisher, &estimate.mean, cg)?;
    let mut out = GradientEstimate::plain(kind, sol.x);
    out.diagnostics = estimate.diagnostics.clone();
    out.diagnostics.fisher_cg_iterations = sol.iterations;
    out.diagnostics.fisher_cg_residual = sol.residual;
    Ok(out)
}
