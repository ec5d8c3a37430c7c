//! GP kernels over state-action samples.
//!
//! The prior covariance is `k(z, z') = c1 k_s(s, s') + c2 k_f(z, z')`: a deep
//! additive RBF kernel on states (evaluated through SKI) plus the Fisher
//! kernel `u(z)ᵀ G⁻¹ u(z')` of the policy.

mod fisher;
mod mll;
mod model;
pub mod ski;
mod state;

pub use fisher::{FisherKernelConfig, FisherKernelOperator, FisherRoute, RELATIVE_EIGEN_CUTOFF};
pub use mll::{gp_mll, gp_mll_and_grad, update_kernel_params, MllValue};
pub use model::{CompositeKernel, KernelConfig, KernelModel, StateGram};
pub use ski::{Grid1d, SkiOperator};
pub use state::{DeepRbfKernel, FeatureBatch, FeatureConfig, FeatureKind, FeatureMap};
