use nalgebra::DVector;

use super::{EstimateKind, GradientEstimate};
use crate::error::{check_dim, Error, Result};
use crate::policy::ScoreMatrix;

/// `(1/n) U Q`.
pub fn mc_gradient(scores: &ScoreMatrix, q: &DVector<f64>) -> Result<GradientEstimate> {
    check_dim("mc_gradient Q", scores.n(), q.len())?;
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite Q values".into()));
    }
    let mean = scores.vjp(q)? / scores.n() as f64;
    Ok(GradientEstimate::plain(EstimateKind::Mc, mean))
}
