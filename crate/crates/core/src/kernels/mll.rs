//! GP marginal likelihood of the state-kernel parameters.
//!
//! With `A = c1 K_s + c2 K_f + σ²I` on a dense minibatch the objective is
//!
//! ```text
//! J = −(log|A| + Qᵀ A⁻¹ Q) / n
//! ```
//!
//! and `∂J/∂p = −(c1/n) Σ_ij B_ij ∂K_s,ij/∂p` with `B = A⁻¹ − α αᵀ`,
//! `α = A⁻¹ Q`. `K_f` depends on the policy only and enters as a constant.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::state::DeepRbfKernel;
use crate::error::{check_dim, Error, Result};
use crate::optim::Adam;

/// Jitter escalations tried after the plain factorization fails.
const JITTER_STEPS: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MllValue {
    pub objective: f64,
    pub log_det: f64,
    pub data_fit: f64,
    /// Noise variance actually used (larger than `σ²` after escalation).
    pub noise: f64,
}

/// Objective and gradient with respect to `kernel.params()`.
pub fn gp_mll_and_grad(
    kernel: &DeepRbfKernel,
    c1: f64,
    c2: f64,
    sigma2: f64,
    states: &DMatrix<f64>,
    q: &DVector<f64>,
    fisher_block: Option<&DMatrix<f64>>,
) -> Result<(MllValue, DVector<f64>)> {
    let n = states.nrows();
    check_dim("gp_mll targets", n, q.len())?;
    if n == 0 {
        return Err(Error::Input("empty minibatch".into()));
    }
    let feats = kernel.featurize(states)?;
    let ks = kernel.gram_from_features(&feats.values);
    let mut base = &ks * c1;
    if let Some(kf) = fisher_block {
        check_dim("gp_mll Fisher block", n, kf.nrows())?;
        base += kf * c2;
    }
    let (chol, noise) = factorize(&base, sigma2)?;
    let alpha = chol.solve(q);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let data_fit = q.dot(&alpha);
    let nf = n as f64;
    let value = MllValue {
        objective: -(log_det + data_fit) / nf,
        log_det,
        data_fit,
        noise,
    };

    let mut b = chol.inverse();
    b -= &alpha * alpha.transpose();
    let scale = -c1 / nf;

    let d_feat = kernel.feature_dim();
    let sf = kernel.signal_scale();
    let ells = kernel.lengthscales();
    let mut g_ell = DVector::zeros(d_feat);
    let mut dfeat = DMatrix::zeros(d_feat, n);
    for d in 0..d_feat {
        let inv_l2 = 1.0 / (ells[d] * ells[d]);
        let f = feats.values.row(d);
        for i in 0..n {
            let mut acc_feat = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let diff = f[i] - f[j];
                let e = sf * (-0.5 * diff * diff * inv_l2).exp();
                let bij = b[(i, j)];
                g_ell[d] += bij * e * diff * diff * inv_l2;
                acc_feat -= bij * e * diff * inv_l2;
            }
            dfeat[(d, i)] = 2.0 * scale * acc_feat;
        }
    }
    g_ell *= scale;
    let g_sf = scale * b.component_mul(&ks).sum();

    let mut grad = kernel.feature_backward(&feats, &dfeat)?.as_slice().to_vec();
    grad.extend(g_ell.iter());
    grad.push(g_sf);
    Ok((value, DVector::from_vec(grad)))
}

/// Objective only; used for line checks and oracles.
pub fn gp_mll(
    kernel: &DeepRbfKernel,
    c1: f64,
    c2: f64,
    sigma2: f64,
    states: &DMatrix<f64>,
    q: &DVector<f64>,
    fisher_block: Option<&DMatrix<f64>>,
) -> Result<MllValue> {
    check_dim("gp_mll targets", states.nrows(), q.len())?;
    let mut base = kernel.gram(states)? * c1;
    if let Some(kf) = fisher_block {
        base += kf * c2;
    }
    let (chol, noise) = factorize(&base, sigma2)?;
    let alpha = chol.solve(q);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let data_fit = q.dot(&alpha);
    Ok(MllValue {
        objective: -(log_det + data_fit) / states.nrows() as f64,
        log_det,
        data_fit,
        noise,
    })
}

fn factorize(base: &DMatrix<f64>, sigma2: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = base.nrows();
    for k in 0..=JITTER_STEPS {
        let noise = sigma2 * 10f64.powi(k);
        let mut a = base.clone();
        for i in 0..n {
            a[(i, i)] += noise;
        }
        if let Some(chol) = a.cholesky() {
            if chol.l().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                if k > 0 {
                    log::warn!("GP factorization needed noise {noise:e}");
                }
                return Ok((chol, noise));
            }
        }
    }
    Err(Error::NumericalBreakdown(
        "GP kernel matrix not positive definite after jitter escalation".into(),
    ))
}

/// One Adam ascent step on the marginal likelihood. Lengthscales and signal
/// scale live in log space, so they stay positive.
pub fn update_kernel_params(
    kernel: &mut DeepRbfKernel,
    grad: &DVector<f64>,
    optimizer: &mut Adam,
) -> Result<()> {
    let mut p = kernel.params();
    optimizer.ascend(&mut p, grad)?;
    kernel.set_params(&p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::FeatureConfig;
    use crate::optim::AdamConfig;
    use crate::rng::seeded;

    #[test]
    fn zero_targets_give_log_det_only() {
        // Identity-like K: a single far-apart 1-d point set with tiny
        // lengthscale makes K_s = sf·I.
        let kernel = DeepRbfKernel::with_identity(1, &[1e-3], 1.0);
        let states = DMatrix::from_column_slice(4, 1, &[0.0, 10.0, 20.0, 30.0]);
        let q = DVector::zeros(4);
        let (v, g) = gp_mll_and_grad(&kernel, 1.0, 0.0, 0.25, &states, &q, None).unwrap();
        assert!((v.objective + 4.0 * 1.25f64.ln() / 4.0).abs() < 1e-12);
        assert_eq!(v.data_fit, 0.0);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(41);
        let cfg = FeatureConfig {
            hidden: vec![4],
            output_dim: 2,
            ..Default::default()
        };
        let kernel = DeepRbfKernel::new(2, &cfg, &mut rng).unwrap();
        let states = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j) as f64 * 0.9).sin());
        let q = DVector::from_fn(6, |i, _| (i as f64 * 1.3).cos());
        let (_, g) = gp_mll_and_grad(&kernel, 1.0, 0.0, 0.1, &states, &q, None).unwrap();
        let p0 = kernel.params();
        for k in 0..p0.len() {
            let h = 1e-5;
            let eval = |d: f64| {
                let mut kk = kernel.clone();
                let mut p = p0.clone();
                p[k] += d;
                kk.set_params(&p).unwrap();
                gp_mll(&kk, 1.0, 0.0, 0.1, &states, &q, None).unwrap().objective
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn zero_gradient_update_is_identity_and_positive_step_grows_lengthscale() {
        let mut kernel = DeepRbfKernel::with_identity(2, &[1.0, 2.0], 1.0);
        let before = kernel.clone();
        let mut adam = Adam::new(3, AdamConfig::default());
        update_kernel_params(&mut kernel, &DVector::zeros(3), &mut adam).unwrap();
        assert_eq!(kernel, before);
        update_kernel_params(&mut kernel, &DVector::from_vec(vec![1.0, 0.0, 0.0]), &mut adam).unwrap();
        assert!(kernel.lengthscales()[0] > 1.0);
        assert_eq!(kernel.lengthscales()[1], 2.0);
    }

    #[test]
    fn singular_kernel_escalates_jitter() {
        // smallest eigenvalue ≈ −5e-7, so 1e-7 fails and 1e-6 succeeds
        let base = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-6]);
        let (_, noise) = factorize(&base, 1e-7).unwrap();
        assert!((noise - 1e-6).abs() < 1e-18);
        let bad = DMatrix::from_element(2, 2, f64::NAN);
        assert!(factorize(&bad, 1e-4).is_err());
    }
}
