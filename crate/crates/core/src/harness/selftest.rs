//! Small dense-oracle checks that can run from the binary.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::envs::{collect_batch, discounted_returns, gae_advantages, GaeConfig, Lqr, LqrConfig};
use crate::error::Result;
use crate::estimators::{dbqpg_gradient, uapg_vanilla_transform};
use crate::kernels::{
    CompositeKernel, DeepRbfKernel, FisherKernelConfig, FisherKernelOperator, FisherRoute,
    SkiOperator,
};
use crate::linalg::{
    cg_solve, dense_materialize, dense_top_eigen, randomized_svd, relative_error, CgConfig,
    DenseOperator, LinearOperator, RsvdConfig, ToeplitzSpec,
};
use crate::policy::{GaussianPolicy, PolicyConfig};
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vector(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn within(err: f64, tol: f64) -> (bool, String) {
    (err <= tol, format!("error {err:.3e} (tol {tol:.0e})"))
}

fn cg_vs_cholesky(rng: &mut Rng) -> Result<(bool, String)> {
    let b = gaussian_matrix(40, 40, rng);
    let a = &b * b.transpose() + DMatrix::identity(40, 40);
    let rhs = gaussian_vector(40, rng);
    let exact = a.clone().cholesky().expect("SPD").solve(&rhs);
    let op = DenseOperator::new(a)?;
    let sol = cg_solve(&op, &rhs, 0.0, &CgConfig::undamped(400, 1e-14))?;
    Ok(within(relative_error(&sol.x, &exact), 1e-6))
}

fn toeplitz_vs_dense(rng: &mut Rng) -> Result<(bool, String)> {
    let m = 100;
    let col: Vec<f64> = (0..m).map(|k| (-(k as f64) / 10.0).exp()).collect();
    let spec = ToeplitzSpec::new(col.clone())?;
    let dense = DMatrix::from_fn(m, m, |i, j| col[i.abs_diff(j)]);
    let v = gaussian_vector(m, rng);
    Ok(within((spec.apply(&v)? - &dense * &v).amax(), 1e-10))
}

fn rsvd_low_rank(rng: &mut Rng) -> Result<(bool, String)> {
    let f = gaussian_matrix(60, 5, rng);
    let a = &f * f.transpose();
    let op = DenseOperator::new(a.clone())?;
    let spec = randomized_svd(&op, 5, &RsvdConfig::default(), rng)?;
    let recon = &spec.vectors * DMatrix::from_diagonal(&spec.values) * spec.vectors.transpose();
    Ok(within((recon - &a).norm() / a.norm(), 1e-3))
}

fn small_policy(rng: &mut Rng) -> GaussianPolicy {
    let cfg = PolicyConfig {
        hidden: vec![6],
        init_log_std: -0.3,
        output_gain: 1.0,
    };
    GaussianPolicy::new(3, 2, &cfg, rng)
}

fn score_finite_differences(rng: &mut Rng) -> Result<(bool, String)> {
    let policy = small_policy(rng);
    let s = [0.3, -0.7, 1.1];
    let a = [0.2, -0.4];
    let score = policy.score_vector(&s, &a)?;
    let theta = policy.theta();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let mut p = policy.clone();
        let mut t = theta.clone();
        t[k] += h;
        p.set_theta(&t)?;
        let up = p.log_prob(&s, &a)?;
        t[k] -= 2.0 * h;
        p.set_theta(&t)?;
        let down = p.log_prob(&s, &a)?;
        worst = worst.max(((up - down) / (2.0 * h) - score[k]).abs());
    }
    Ok(within(worst, 1e-4))
}

fn fisher_routes(rng: &mut Rng) -> Result<(bool, String)> {
    let u = gaussian_matrix(25, 30, rng);
    let lambda = 0.05;
    let g = &u * u.transpose() / 30.0 + DMatrix::identity(25, 25) * lambda;
    let dense = u.transpose() * g.try_inverse().expect("SPD") * &u;
    let mut worst = 0.0f64;
    for route in [FisherRoute::JacobianProducts, FisherRoute::TruncatedSvd] {
        let cfg = FisherKernelConfig {
            route,
            damping: lambda,
            cg: CgConfig::undamped(500, 1e-14),
            ..FisherKernelConfig::default()
        };
        let op = FisherKernelOperator::from_dense_scores(u.clone(), &cfg, rng)?;
        let m = dense_materialize(&op, 100)?;
        worst = worst.max((m - &dense).amax() / dense.amax());
    }
    Ok(within(worst, 1e-3))
}

fn dbqpg_dense(rng: &mut Rng) -> Result<(bool, String)> {
    let policy = small_policy(rng);
    let n = 30;
    let states = gaussian_matrix(n, 3, rng);
    let actions = gaussian_matrix(n, 2, rng);
    let q = gaussian_vector(n, rng);
    let scores = Arc::new(policy.scores(&states, &actions)?);
    let u = scores.dense();
    let kernel = DeepRbfKernel::with_identity(3, &[1.0, 1.0, 1.0], 1.0);
    let ks = kernel.gram(&states)?;
    let cfg = FisherKernelConfig {
        damping: 1e-3,
        ..FisherKernelConfig::default()
    };
    let fisher = FisherKernelOperator::from_dense_scores(u.clone(), &cfg, rng)?;
    let kf = dense_materialize(&fisher, 100)?;
    let (c1, c2, s2) = (1.0, 0.5, 1e-2);
    let composite = CompositeKernel::from_parts(
        n,
        c1,
        Some(Arc::new(DenseOperator::new(ks.clone())?)),
        c2,
        Some(Arc::new(fisher)),
        s2,
        CgConfig::undamped(1000, 1e-14),
    )?;
    let est = dbqpg_gradient(scores, &q, Arc::new(composite))?;
    let a = ks * c1 + kf * c2 + DMatrix::identity(n, n) * s2;
    let expected = &u * a.cholesky().expect("SPD").solve(&q) * c2;
    Ok(within(relative_error(&est.mean, &expected), 1e-5))
}

fn uapg_whitening(rng: &mut Rng) -> Result<(bool, String)> {
    let b = gaussian_matrix(12, 12, rng);
    let c = &b * b.transpose() + DMatrix::identity(12, 12) * 0.1;
    let spectrum = dense_top_eigen(&c, 12);
    let mut t = DMatrix::zeros(12, 12);
    for j in 0..12 {
        let e = DVector::from_fn(12, |i, _| if i == j { 1.0 } else { 0.0 });
        t.set_column(j, &uapg_vanilla_transform(&spectrum, &e)?);
    }
    let white = &t * c * t.transpose();
    Ok(within((white - DMatrix::identity(12, 12)).norm(), 1e-4))
}

fn ski_accuracy(rng: &mut Rng) -> Result<(bool, String)> {
    let feats = DMatrix::from_fn(2, 100, |_, _| rng.random_range(-1.0..1.0));
    let kernel = DeepRbfKernel::with_identity(2, &[0.7, 0.9], 1.3);
    let exact = kernel.gram_from_features(&feats);
    let ski = SkiOperator::build(&kernel, &feats, 128)?;
    let approx = dense_materialize(&ski, 200)?;
    Ok(within((approx - &exact).norm() / exact.norm(), 0.02))
}

fn gae_limits(_rng: &mut Rng) -> Result<(bool, String)> {
    let env = Lqr::new(LqrConfig {
        horizon: 7,
        ..LqrConfig::default()
    })?;
    let policy = GaussianPolicy::zeros(2, 1, &[]);
    let batch = collect_batch(&env, &policy, 30, 11, 0.9)?;
    let finals = vec![0.0; batch.episodes.len()];
    let cfg = GaeConfig { gamma: 0.9, tau: 1.0 };
    let adv = gae_advantages(&batch, &DVector::zeros(30), &finals, &cfg)?;
    let ret = discounted_returns(&batch, 0.9, &finals)?;
    Ok(within((adv - ret).amax(), 1e-12))
}

type Check = fn(&mut Rng) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("cg_matches_cholesky", cg_vs_cholesky),
    ("toeplitz_matches_dense", toeplitz_vs_dense),
    ("rsvd_recovers_low_rank", rsvd_low_rank),
    ("score_finite_differences", score_finite_differences),
    ("fisher_kernel_routes", fisher_routes),
    ("dbqpg_matches_dense", dbqpg_dense),
    ("uapg_vanilla_whitens", uapg_whitening),
    ("ski_frobenius_2pct", ski_accuracy),
    ("gae_tau1_is_return", gae_limits),
];

/// Runs every check with a stream derived from `seed`; errors count as failures.
pub fn run_selftest(seed: u64) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut rng = seeded(seed.wrapping_add(i as u64));
            let (passed, detail) = match check(&mut rng) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult { name, passed, detail }
        })
        .collect()
}
