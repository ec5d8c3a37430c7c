use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{EstimateKind, GradientEstimate};
use crate::error::{check_dim, Error, Result};
use crate::kernels::CompositeKernel;
use crate::linalg::{randomized_svd, LinearOperator, RsvdConfig, TruncatedSpectrum};
use crate::policy::ScoreMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UapgConfig {
    /// `δ`; clamped to `|Θ|`.
    pub rank: usize,
    /// Clip `ε` on the natural-gradient amplification.
    pub epsilon: f64,
    pub rsvd: RsvdConfig,
}

impl Default for UapgConfig {
    fn default() -> Self {
        Self {
            rank: 100,
            epsilon: 3.0,
            rsvd: RsvdConfig::default(),
        }
    }
}

fn smallest_positive(spectrum: &TruncatedSpectrum) -> Result<f64> {
    if spectrum.rank() == 0 {
        return Err(Error::Spectrum("empty spectrum".into()));
    }
    let nu = spectrum.smallest();
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Spectrum(format!("ν_δ = {nu:e} is not positive")));
    }
    Ok(nu)
}

/// `ν_δ^{-1/2} (I + Σ_i h_i (√(ν_δ/ν_i) − 1) h_iᵀ) L`.
pub fn uapg_vanilla_transform(spectrum: &TruncatedSpectrum, mean: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("uapg_vanilla_transform", spectrum.dim(), mean.len())?;
    let nu_d = smallest_positive(spectrum)?;
    let coeffs = spectrum.values.map(|nu| (nu_d / nu).sqrt() - 1.0);
    Ok((mean + spectrum.apply_projected(&coeffs, mean)) / nu_d.sqrt())
}

/// `ν_δ^{1/2} (I + Σ_i h_i (min(√(ν_i/ν_δ), ε) − 1) h_iᵀ) x` for a natural
/// direction `x`; pass `ε = ∞` for the unclipped transform.
pub fn uapg_natural_transform(
    spectrum: &TruncatedSpectrum,
    natural_mean: &DVector<f64>,
    epsilon: f64,
) -> Result<DVector<f64>> {
    check_dim("uapg_natural_transform", spectrum.dim(), natural_mean.len())?;
    let nu_d = smallest_positive(spectrum)?;
    let coeffs = spectrum.values.map(|nu| (nu / nu_d).sqrt().min(epsilon) - 1.0);
    Ok((natural_mean + spectrum.apply_projected(&coeffs, natural_mean)) * nu_d.sqrt())
}

/// Rescales a vanilla BQ estimate by the top-`δ` spectrum of its covariance.
pub fn uapg_vanilla(estimate: &GradientEstimate, cfg: &UapgConfig, rng: &mut Rng) -> Result<GradientEstimate> {
    if estimate.kind != EstimateKind::BqVanilla {
        return Err(Error::Input(format!(
            "vanilla UAPG needs a bq_vanilla estimate, got {}",
            estimate.kind.as_str()
        )));
    }
    let cov = estimate
        .covariance
        .as_ref()
        .ok_or_else(|| Error::Input("estimate carries no covariance".into()))?;
    let rank = cfg.rank.min(cov.dim());
    let spectrum = randomized_svd(cov.as_ref(), rank, &cfg.rsvd, rng)?;
    let mean = uapg_vanilla_transform(&spectrum, &estimate.mean)?;
    let mut out = estimate.clone();
    out.kind = EstimateKind::UapgVanilla;
    out.diagnostics.pre_transform_norm = estimate.mean.norm();
    out.mean = mean;
    out.spectrum = Some(spectrum);
    Ok(out)
}

/// `(C^NBQ)⁻¹ = (1/c2) (G + λI + c2 U (c1 K_s + σ²I)⁻¹ Uᵀ)`.
#[derive(Clone)]
pub struct NaturalPrecision {
    scores: Arc<ScoreMatrix>,
    kernel: Arc<CompositeKernel>,
    damping: f64,
}

impl LinearOperator for NaturalPrecision {
    fn dim(&self) -> usize {
        self.scores.num_params()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let c2 = self.kernel.c2;
        let n = self.scores.n() as f64;
        let utv = self.scores.jvp(v)?;
        let solved = self.kernel.state_solve(&utv)?.x;
        let combined = utv / n + solved * c2;
        Ok((self.scores.vjp(&combined)? + v * self.damping) / c2)
    }

    fn description(&self) -> String {
        format!("natural BQ precision (|Θ|={})", self.dim())
    }
}

pub fn natural_precision_operator(
    scores: Arc<ScoreMatrix>,
    kernel: Arc<CompositeKernel>,
    damping: f64,
) -> Result<NaturalPrecision> {
    if !(kernel.c2 > 0.0) {
        return Err(Error::Config("natural UAPG requires c2 > 0".into()));
    }
    check_dim("natural_precision_operator", scores.n(), kernel.n())?;
    Ok(NaturalPrecision {
        scores,
        kernel,
        damping,
    })
}

/// Rescales a natural BQ estimate by the top-`δ` spectrum of `(C^NBQ)⁻¹`,
/// clipping the relative amplification at `ε`.
pub fn uapg_natural(
    scores: Arc<ScoreMatrix>,
    kernel: Arc<CompositeKernel>,
    estimate: &GradientEstimate,
    cfg: &UapgConfig,
    damping: f64,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    if estimate.kind != EstimateKind::BqNatural {
        return Err(Error::Input(format!(
            "natural UAPG needs a bq_natural estimate, got {}",
            estimate.kind.as_str()
        )));
    }
    if !(cfg.epsilon > 1.0) {
        return Err(Error::Config("UAPG epsilon must exceed 1".into()));
    }
    let op = natural_precision_operator(scores, kernel, damping)?;
    let rank = cfg.rank.min(op.dim());
    let spectrum = randomized_svd(&op, rank, &cfg.rsvd, rng)?;
    let mean = uapg_natural_transform(&spectrum, &estimate.mean, cfg.epsilon)?;
    let mut out = estimate.clone();
    out.kind = EstimateKind::UapgNatural;
    out.diagnostics.pre_transform_norm = estimate.mean.norm();
    out.mean = mean;
    out.spectrum = Some(spectrum);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn axis_spectrum(values: &[f64], dim: usize) -> TruncatedSpectrum {
        let mut vectors = DMatrix::zeros(dim, values.len());
        for k in 0..values.len() {
            vectors[(k, k)] = 1.0;
        }
        TruncatedSpectrum {
            vectors,
            values: DVector::from_column_slice(values),
        }
    }

    #[test]
    fn isotropic_covariance_scales_uniformly() {
        let s = axis_spectrum(&[4.0], 3);
        let l = DVector::from_vec(vec![1.0, 2.0, -3.0]);
        let out = uapg_vanilla_transform(&s, &l).unwrap();
        assert!((out - &l * 0.5).amax() < 1e-15);
    }

    #[test]
    fn top_direction_scaled_by_its_own_uncertainty() {
        let s = axis_spectrum(&[16.0, 4.0], 3);
        let out = uapg_vanilla_transform(&s, &DVector::from_vec(vec![1.0, 1.0, 1.0])).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-15);
        assert!((out[1] - 0.5).abs() < 1e-15);
        // orthogonal complement gets ν_δ^{-1/2}
        assert!((out[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn natural_clip_caps_amplification() {
        let s = axis_spectrum(&[100.0, 1.0], 3);
        let out = uapg_natural_transform(&s, &DVector::from_vec(vec![1.0, 1.0, 1.0]), 3.0).unwrap();
        assert!((out[0] / out[1] - 3.0).abs() < 1e-15);
        assert!((out[2] - 1.0).abs() < 1e-15);
        let flat = axis_spectrum(&[2.0, 2.0], 2);
        let out = uapg_natural_transform(&flat, &DVector::from_vec(vec![1.0, -1.0]), 3.0).unwrap();
        assert!((out - DVector::from_vec(vec![2f64.sqrt(), -(2f64.sqrt())])).amax() < 1e-15);
    }

    #[test]
    fn non_positive_spectrum_rejected() {
        let s = axis_spectrum(&[1.0, 0.0], 2);
        assert!(matches!(
            uapg_vanilla_transform(&s, &DVector::zeros(2)),
            Err(Error::Spectrum(_))
        ));
    }
}
