//! Policy-gradient estimation with Bayesian quadrature.
//!
//! The crate implements the Monte-Carlo policy gradient alongside the
//! Bayesian-quadrature estimator (a GP prior over the action-value function
//! with the kernel `c1 * k_s + c2 * k_f`), its posterior covariance, and the
//! uncertainty-aware transforms that whiten a gradient by that covariance.
//!
//! Everything that touches an `n x n` or `|Θ| x |Θ|` matrix is matrix-free:
//!
//! - [`linalg`]: linear operators, conjugate gradients, randomized
//!   eigendecomposition and FFT Toeplitz products.
//! - [`policy`]: a Gaussian MLP policy with exact score, Jacobian-vector and
//!   vector-Jacobian products, and the empirical Fisher operator.
//! - [`kernels`]: the deep additive RBF state kernel, structured kernel
//!   interpolation, the Fisher kernel and GP marginal-likelihood learning.
//! - [`estimators`]: MC, BQ (vanilla / natural) and UAPG estimators.
//! - [`envs`]: small analytic control tasks, rollouts and GAE.
//! - [`algos`]: vanilla PG, NPG and TRPO drivers.
//! - [`harness`]: configuration, the gradient-quality study, self-test and
//!   CSV output used by the `bqpg` binary.

pub mod algos;
pub mod checkpoint;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
