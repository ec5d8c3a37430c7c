use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{clip, gaussian_noise, uniform_state, Environment, Transition};
use crate::error::{check_dim, Error, Result};
use crate::policy::GaussianPolicy;
use crate::rng::Rng;

/// `s' = A s + B clip(a) + w`, `w ~ N(0, noise² I)`, reward `−(sᵀQs + aᵀRa)`.
/// Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub noise_std: f64,
    pub horizon: usize,
    /// Initial state is uniform on `[−init_range, init_range]^d`.
    pub init_range: f64,
    pub action_limit: f64,
    /// Episodes whose state norm exceeds this terminate.
    pub divergence_limit: f64,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            state_dim: 2,
            action_dim: 1,
            a: vec![1.0, 0.1, 0.0, 1.0],
            b: vec![0.0, 0.1],
            q: vec![1.0, 0.0, 0.0, 1.0],
            r: vec![0.1],
            noise_std: 0.05,
            horizon: 50,
            init_range: 1.0,
            action_limit: 10.0,
            divergence_limit: 1e3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lqr {
    cfg: LqrConfig,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn square(name: &str, v: &[f64], d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * d {
        return Err(Error::Config(format!("LQR {name} needs {} entries, got {}", d * d, v.len())));
    }
    Ok(DMatrix::from_row_slice(d, d, v))
}

impl Lqr {
    pub fn new(cfg: LqrConfig) -> Result<Self> {
        let (d, k) = (cfg.state_dim, cfg.action_dim);
        if d == 0 || k == 0 || cfg.horizon == 0 {
            return Err(Error::Config("LQR dimensions and horizon must be positive".into()));
        }
        let a = square("A", &cfg.a, d)?;
        if cfg.b.len() != d * k {
            return Err(Error::Config(format!("LQR B needs {} entries", d * k)));
        }
        let b = DMatrix::from_row_slice(d, k, &cfg.b);
        let q = square("Q", &cfg.q, d)?;
        let r = square("R", &cfg.r, k)?;
        Ok(Self { cfg, a, b, q, r })
    }

    pub fn config(&self) -> &LqrConfig {
        &self.cfg
    }

    /// Expected discounted return `E Σ_{t<H} γ^t r_t` of a linear-mean
    /// Gaussian policy (no hidden layers), ignoring action clipping, by
    /// propagating the state mean and covariance.
    pub fn expected_return_linear(&self, policy: &GaussianPolicy, gamma: f64) -> Result<f64> {
        if !policy.hidden().is_empty() {
            return Err(Error::Input("analytic LQR return needs a linear policy".into()));
        }
        check_dim("LQR policy state dim", self.cfg.state_dim, policy.state_dim())?;
        check_dim("LQR policy action dim", self.cfg.action_dim, policy.action_dim())?;
        let (d, k) = (self.cfg.state_dim, self.cfg.action_dim);
        let theta = policy.theta();
        let w = DMatrix::from_row_slice(k, d, &theta.as_slice()[..k * d]);
        let bias = DVector::from_column_slice(&theta.as_slice()[k * d..k * d + k]);
        let act_var = DMatrix::from_diagonal(&policy.log_std().map(|l| (2.0 * l).exp()));
        let closed = &self.a + &self.b * &w;
        let process = &self.b * &act_var * self.b.transpose()
            + DMatrix::identity(d, d) * self.cfg.noise_std.powi(2);
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::identity(d, d) * (self.cfg.init_range.powi(2) / 3.0);
        let mut total = 0.0;
        let mut disc = 1.0;
        for _ in 0..self.cfg.horizon {
            let am = &w * &mean + &bias;
            let state_cost = (&self.q * &cov).trace() + mean.dot(&(&self.q * &mean));
            let act_cost = (&self.r * (&w * &cov * w.transpose() + &act_var)).trace()
                + am.dot(&(&self.r * &am));
            total -= disc * (state_cost + act_cost);
            disc *= gamma;
            mean = &closed * &mean + &self.b * &bias;
            cov = &closed * &cov * closed.transpose() + &process;
        }
        Ok(total)
    }
}

impl Environment for Lqr {
    fn name(&self) -> &'static str {
        "lqr"
    }
    fn state_dim(&self) -> usize {
        self.cfg.state_dim
    }
    fn action_dim(&self) -> usize {
        self.cfg.action_dim
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn reward_bound(&self) -> f64 {
        let lim = self.cfg.divergence_limit;
        let q_norm = self.q.abs().row_sum().max();
        let r_norm = self.r.abs().row_sum().max();
        q_norm * lim * lim + r_norm * self.cfg.action_limit.powi(2) * self.cfg.action_dim as f64
    }
    fn reset_bound(&self) -> f64 {
        self.cfg.init_range
    }
    fn reset(&self, rng: &mut Rng) -> DVector<f64> {
        uniform_state(self.cfg.state_dim, self.cfg.init_range, rng)
    }
    fn step(&self, s: &DVector<f64>, a: &DVector<f64>, rng: &mut Rng) -> Transition {
        let a = clip(a, self.cfg.action_limit);
        let reward = -(s.dot(&(&self.q * s)) + a.dot(&(&self.r * &a)));
        let next = &self.a * s + &self.b * &a + gaussian_noise(self.cfg.state_dim, self.cfg.noise_std, rng);
        let diverged = !next.iter().all(|v| v.is_finite()) || next.norm() > self.cfg.divergence_limit;
        Transition {
            next_state: next,
            reward,
            terminal: diverged,
        }
    }
}
