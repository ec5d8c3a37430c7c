//! Matrix-free linear algebra.
//!
//! Kernel matrices, Fisher matrices and posterior covariances are never formed
//! explicitly outside of tests; they are [`LinearOperator`]s that only expose a
//! matrix-vector product. Solves go through [`cg_solve`], spectra through
//! [`randomized_svd`], and stationary grid kernels use [`ToeplitzSpec`].

mod cg;
mod operator;
mod rsvd;
mod toeplitz;

pub use cg::{cg_solve, CgConfig, CgSolution};
pub use operator::{
    dense_materialize, DenseOperator, DiagonalOperator, FnOperator, IdentityOperator,
    LinearOperator, ShiftedOperator, SumOperator, DEFAULT_ORACLE_CAP,
};
pub use rsvd::{dense_top_eigen, randomized_svd, RsvdConfig, TruncatedSpectrum};
pub use toeplitz::{toeplitz_mvm, ToeplitzSpec};

use nalgebra::{DMatrix, DVector};

/// Cosine similarity; zero when either vector vanishes.
pub fn cosine_similarity(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

/// `aᵀ b` routed through a GEMM. nalgebra's `tr_mul` evaluates matrix
/// products column by column with dot products, which is an order of
/// magnitude slower for wide operands.
pub fn at_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    (b.transpose() * a).transpose()
}
