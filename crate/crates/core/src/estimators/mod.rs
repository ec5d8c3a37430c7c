//! Policy-gradient estimators.
//!
//! - [`mc_gradient`]: `(1/n) U Q`.
//! - [`dbqpg_gradient`]: BQ posterior mean `c2 U (K + σ²I)⁻¹ Q` with a lazy
//!   posterior covariance `c2 G − c2² U (K + σ²I)⁻¹ Uᵀ`.
//! - [`natural_gradient`]: `(G + λI)⁻¹` applied to either of the above.
//! - [`uapg_vanilla`] / [`uapg_natural`]: rescale the gradient by a rank-`δ`
//!   spectrum of its uncertainty.

mod bq;
mod mc;
mod uapg;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::linalg::{LinearOperator, TruncatedSpectrum};

pub use bq::{dbqpg_covariance_mvm, dbqpg_gradient, natural_gradient, BqCovariance};
pub use mc::mc_gradient;
pub use uapg::{
    natural_precision_operator, uapg_natural, uapg_natural_transform, uapg_vanilla,
    uapg_vanilla_transform, NaturalPrecision, UapgConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateKind {
    Mc,
    McNatural,
    BqVanilla,
    BqNatural,
    UapgVanilla,
    UapgNatural,
}

impl EstimateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateKind::Mc => "mc",
            EstimateKind::McNatural => "mc_natural",
            EstimateKind::BqVanilla => "bq_vanilla",
            EstimateKind::BqNatural => "bq_natural",
            EstimateKind::UapgVanilla => "uapg_vanilla",
            EstimateKind::UapgNatural => "uapg_natural",
        }
    }

    pub fn is_natural(self) -> bool {
        matches!(
            self,
            EstimateKind::McNatural | EstimateKind::BqNatural | EstimateKind::UapgNatural
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// CG iterations spent on the kernel solve.
    pub kernel_cg_iterations: usize,
    pub kernel_cg_residual: f64,
    /// CG iterations spent on the Fisher solve.
    pub fisher_cg_iterations: usize,
    pub fisher_cg_residual: f64,
    /// Norm of the mean before any UAPG rescaling.
    pub pre_transform_norm: f64,
}

/// A gradient estimate with optional uncertainty.
#[derive(Clone)]
pub struct GradientEstimate {
    pub kind: EstimateKind,
    pub mean: DVector<f64>,
    pub covariance: Option<Arc<dyn LinearOperator>>,
    pub spectrum: Option<TruncatedSpectrum>,
    pub diagnostics: Diagnostics,
}

impl std::fmt::Debug for GradientEstimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradientEstimate")
            .field("kind", &self.kind)
            .field("mean_norm", &self.mean.norm())
            .field("has_covariance", &self.covariance.is_some())
            .field("spectrum_rank", &self.spectrum.as_ref().map(|s| s.rank()))
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

impl GradientEstimate {
    pub(crate) fn plain(kind: EstimateKind, mean: DVector<f64>) -> Self {
        Self {
            kind,
            mean,
            covariance: None,
            spectrum: None,
            diagnostics: Diagnostics::default(),
        }
    }
}
