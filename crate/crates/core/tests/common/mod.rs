#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use bqpg::policy::{GaussianPolicy, PolicyConfig};
use bqpg::rng::Rng;

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Random SPD matrix with eigenvalues in `[1, cond]`.
pub fn spd_matrix(n: usize, cond: f64, rng: &mut Rng) -> DMatrix<f64> {
    let q = gaussian_matrix(n, n, rng).qr().q();
    let d = DVector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            cond.powf(i as f64 / (n - 1) as f64)
        }
    });
    &q * DMatrix::from_diagonal(&d) * q.transpose()
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn tiny_policy(state_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut Rng) -> GaussianPolicy {
    let cfg = PolicyConfig {
        hidden: hidden.to_vec(),
        init_log_std: -0.2,
        output_gain: 1.0,
    };
    GaussianPolicy::new(state_dim, action_dim, &cfg, rng)
}

/// Dense `|Θ| x n` score matrix built column by column from `score_vector`.
pub fn dense_scores(policy: &GaussianPolicy, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> DMatrix<f64> {
    let n = states.nrows();
    let mut u = DMatrix::zeros(policy.num_params(), n);
    for i in 0..n {
        let s: Vec<f64> = states.row(i).iter().copied().collect();
        let a: Vec<f64> = actions.row(i).iter().copied().collect();
        u.set_column(i, &policy.score_vector(&s, &a).unwrap());
    }
    u
}

pub fn spd_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().cholesky().expect("SPD").inverse()
}

/// Independent dense additive RBF Gram: `sf · Σ_d exp(−(x_d − y_d)² / (2 ℓ_d²))`
/// over the columns of `feats`.
pub fn additive_rbf_gram(feats: &DMatrix<f64>, ls: &[f64], sf: f64) -> DMatrix<f64> {
    let n = feats.ncols();
    DMatrix::from_fn(n, n, |i, j| {
        sf * (0..feats.nrows())
            .map(|d| (-(feats[(d, i)] - feats[(d, j)]).powi(2) / (2.0 * ls[d] * ls[d])).exp())
            .sum::<f64>()
    })
}

/// `Uᵀ (U Uᵀ / n + λ I)⁻¹ U`.
pub fn dense_fisher_kernel(u: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let (p, n) = u.shape();
    let g = u * u.transpose() / n as f64 + DMatrix::identity(p, p) * lambda;
    u.transpose() * spd_inverse(&g) * u
}

/// A small BQ problem with every piece also available densely.
pub struct Instance {
    pub policy: GaussianPolicy,
    pub states: DMatrix<f64>,
    pub actions: DMatrix<f64>,
    pub q: DVector<f64>,
    pub u: DMatrix<f64>,
    pub ks: DMatrix<f64>,
    pub lengthscales: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub sigma2: f64,
    pub lambda: f64,
}

impl Instance {
    pub fn new(seed: u64, n: usize, hidden: &[usize], c1: f64, c2: f64, sigma2: f64, lambda: f64) -> Self {
        let mut rng = bqpg::rng::seeded(seed);
        let policy = tiny_policy(2, 1, hidden, &mut rng);
        let states = gaussian_matrix(n, 2, &mut rng);
        let actions = gaussian_matrix(n, 1, &mut rng);
        let q = gaussian_vector(n, &mut rng);
        let u = dense_scores(&policy, &states, &actions);
        let lengthscales = vec![0.9, 1.4];
        let ks = additive_rbf_gram(&states.transpose(), &lengthscales, 1.0);
        Self { policy, states, actions, q, u, ks, lengthscales, c1, c2, sigma2, lambda }
    }

    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn kf(&self) -> DMatrix<f64> {
        dense_fisher_kernel(&self.u, self.lambda)
    }

    /// `c1 K_s + c2 K_f + σ² I`.
    pub fn system(&self) -> DMatrix<f64> {
        let n = self.n();
        &self.ks * self.c1 + self.kf() * self.c2 + DMatrix::identity(n, n) * self.sigma2
    }

    pub fn oracle_mean(&self) -> DVector<f64> {
        &self.u * spd_inverse(&self.system()) * &self.q * self.c2
    }

    pub fn oracle_covariance(&self) -> DMatrix<f64> {
        let g = &self.u * self.u.transpose() / self.n() as f64;
        g * self.c2 - &self.u * spd_inverse(&self.system()) * self.u.transpose() * (self.c2 * self.c2)
    }

    pub fn scores(&self) -> std::sync::Arc<bqpg::policy::ScoreMatrix> {
        std::sync::Arc::new(self.policy.scores(&self.states, &self.actions).unwrap())
    }

    /// Library composite kernel: exact state Gram, truncated-SVD Fisher kernel.
    pub fn composite(&self) -> std::sync::Arc<bqpg::kernels::CompositeKernel> {
        use bqpg::kernels::{CompositeKernel, DeepRbfKernel, FisherKernelConfig, FisherKernelOperator};
        use bqpg::linalg::{CgConfig, DenseOperator};
        let n = self.n();
        let ks = DeepRbfKernel::with_identity(2, &self.lengthscales, 1.0)
            .gram(&self.states)
            .unwrap();
        let cfg = FisherKernelConfig { damping: self.lambda, ..FisherKernelConfig::default() };
        let fisher = FisherKernelOperator::from_dense_scores(self.scores().dense(), &cfg, &mut bqpg::rng::seeded(0)).unwrap();
        std::sync::Arc::new(
            CompositeKernel::from_parts(
                n,
                self.c1,
                Some(std::sync::Arc::new(DenseOperator::new(ks).unwrap())),
                self.c2,
                Some(std::sync::Arc::new(fisher)),
                self.sigma2,
                CgConfig::undamped(20 * n, 1e-14),
            )
            .unwrap(),
        )
    }
}
