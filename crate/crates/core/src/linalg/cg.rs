use nalgebra::DVector;

use super::LinearOperator;
use crate::error::{check_dim, Error, Result};

/// Conjugate-gradient settings.
///
/// The defaults are the trust-region solver settings: 50 iterations, a
/// relative residual threshold of 1e-10 and a damping of 0.1. Kernel solves
/// should pass `damping: 0.0`; only Fisher solves are damped.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-10,
            damping: 0.1,
        }
    }
}

impl CgConfig {
    pub fn undamped(max_iters: usize, tol: f64) -> Self {
        Self {
            max_iters,
            tol,
            damping: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `‖b − (A + (shift + damping) I) x‖ / ‖b‖` of the returned iterate,
    /// from the CG recurrence.
    pub residual: f64,
    pub converged: bool,
}

/// Solves `(A + (shift + damping) I) x = rhs`.
///
/// Stops once the relative residual drops to `cfg.tol`; otherwise returns the
/// iterate with the smallest residual seen in `cfg.max_iters` steps.
pub fn cg_solve(
    op: &dyn LinearOperator,
    rhs: &DVector<f64>,
    shift: f64,
    cfg: &CgConfig,
) -> Result<CgSolution> {
    let n = op.dim();
    check_dim("cg_solve rhs", n, rhs.len())?;
    if !rhs.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalBreakdown("non-finite right-hand side".into()));
    }
    let diag = shift + cfg.damping;
    let b_norm = rhs.norm();
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: DVector::zeros(n),
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }

    let mut x = DVector::zeros(n);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut best_x = x.clone();
    let mut best_res = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    for k in 1..=cfg.max_iters {
        let mut ap = op.apply(&p)?;
        if diag != 0.0 {
            ap.axpy(diag, &p, 1.0);
        }
        let pap = p.dot(&ap);
        if !pap.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "non-finite curvature at CG iteration {k}"
            )));
        }
        if pap <= 0.0 {
            // Not positive definite along p; keep the best iterate so far.
            break;
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        if !rr_new.is_finite() || !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBreakdown(format!(
                "non-finite iterate at CG iteration {k}"
            )));
        }
        iterations = k;
        let res = rr_new.sqrt() / b_norm;
        if res < best_res {
            best_res = res;
            best_x.copy_from(&x);
        }
        if res <= cfg.tol {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        p *= beta;
        p += &r;
        rr = rr_new;
    }

    Ok(CgSolution {
        x: best_x,
        iterations,
        residual: best_res,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseOperator, DiagonalOperator, IdentityOperator};
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn exact() -> CgConfig {
        CgConfig::undamped(500, 1e-14)
    }

    #[test]
    fn identity_solve() {
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let sol = cg_solve(&IdentityOperator { dim: 4 }, &b, 0.0, &exact()).unwrap();
        assert!(sol.converged);
        assert!((sol.x - b).norm() < 1e-14);
    }

    #[test]
    fn shifted_diagonal_solve() {
        let op = DiagonalOperator {
            diagonal: DVector::from_vec(vec![1.0, 2.0, 4.0]),
        };
        let b = DVector::from_vec(vec![2.0, 3.0, 5.0]);
        let sol = cg_solve(&op, &b, 1.0, &exact()).unwrap();
        assert!((sol.x - DVector::from_element(3, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn damping_adds_to_shift() {
        let op = IdentityOperator { dim: 2 };
        let b = DVector::from_vec(vec![3.0, 6.0]);
        let cfg = CgConfig {
            damping: 2.0,
            ..exact()
        };
        let sol = cg_solve(&op, &b, 0.0, &cfg).unwrap();
        assert!((sol.x - DVector::from_vec(vec![1.0, 2.0])).norm() < 1e-12);
    }

    #[test]
    fn matches_dense_cholesky_on_random_spd() {
        let mut rng = crate::rng::seeded(30);
        let a = DMatrix::from_fn(30, 30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let spd = &a * a.transpose() + DMatrix::identity(30, 30) * 0.5;
        let b = DVector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let direct = spd.clone().cholesky().unwrap().solve(&b);
        let op = DenseOperator::new(spd).unwrap();
        let sol = cg_solve(&op, &b, 0.0, &exact()).unwrap();
        assert!((&sol.x - &direct).norm() / direct.norm() < 1e-6);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let sol = cg_solve(&IdentityOperator { dim: 3 }, &DVector::zeros(3), 0.0, &exact()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, DVector::zeros(3));
    }

    #[test]
    fn non_finite_rhs_is_breakdown() {
        let b = DVector::from_vec(vec![1.0, f64::NAN]);
        let err = cg_solve(&IdentityOperator { dim: 2 }, &b, 0.0, &exact()).unwrap_err();
        assert!(matches!(err, Error::NumericalBreakdown(_)));
    }

    #[test]
    fn wrong_rhs_length() {
        let err = cg_solve(&IdentityOperator { dim: 2 }, &DVector::zeros(3), 0.0, &exact()).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let op = DiagonalOperator {
            diagonal: DVector::from_fn(20, |i, _| 1.0 + i as f64 * 10.0),
        };
        let b = DVector::from_element(20, 1.0);
        let sol = cg_solve(&op, &b, 0.0, &CgConfig::undamped(3, 1e-14)).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
        let mut ax = op.apply(&sol.x).unwrap();
        ax -= &b;
        assert!((ax.norm() / b.norm() - sol.residual).abs() < 1e-8);
    }
}
