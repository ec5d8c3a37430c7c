use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use super::score::ScoreMatrix;
use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub output_gain: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            init_log_std: 0.0,
            output_gain: 0.01,
        }
    }
}

/// Diagonal Gaussian policy: a tanh MLP for the mean and a state-independent
/// log standard deviation.
///
/// `θ` is the mean network's parameters followed by the log-std vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    mean_net: Mlp,
    log_std: DVector<f64>,
}

impl GaussianPolicy {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &PolicyConfig, rng: &mut Rng) -> Self {
        let sizes = layer_sizes(state_dim, &cfg.hidden, action_dim);
        let mean_net = Mlp::orthogonal(&sizes, Activation::Identity, 1.0, cfg.output_gain, rng);
        Self {
            mean_net,
            log_std: DVector::from_element(action_dim, cfg.init_log_std),
        }
    }

    /// All-zero parameters (zero mean everywhere, unit std).
    pub fn zeros(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        let sizes = layer_sizes(state_dim, hidden, action_dim);
        Self {
            mean_net: Mlp::zeros(&sizes, Activation::Identity),
            log_std: DVector::zeros(action_dim),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn hidden(&self) -> &[usize] {
        let s = self.mean_net.sizes();
        &s[1..s.len() - 1]
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std(&self) -> &DVector<f64> {
        &self.log_std
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.action_dim()
    }

    pub fn theta(&self) -> DVector<f64> {
        let mut v = self.mean_net.params().as_slice().to_vec();
        v.extend(self.log_std.iter());
        DVector::from_vec(v)
    }

    pub fn set_theta(&mut self, theta: &DVector<f64>) -> Result<()> {
        check_dim("GaussianPolicy::set_theta", self.num_params(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite policy parameters".into()));
        }
        let split = self.mean_net.num_params();
        self.mean_net.set_params(&theta.as_slice()[..split])?;
        self.log_std.copy_from_slice(&theta.as_slice()[split..]);
        Ok(())
    }

    pub fn mean(&self, state: &[f64]) -> Result<DVector<f64>> {
        check_finite("state", state)?;
        self.mean_net.eval(state)
    }

    /// Means for an `n x state_dim` batch, returned as `action_dim x n`.
    pub fn means(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let cache = self.mean_net.forward(states.transpose())?;
        Ok(cache.output().clone())
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_dim("log_prob action", self.action_dim(), action.len())?;
        check_finite("action", action)?;
        let mu = self.mean(state)?;
        Ok(self.log_density(&mu, action))
    }

    fn log_density(&self, mu: &DVector<f64>, action: &[f64]) -> f64 {
        let mut lp = 0.0;
        for j in 0..self.action_dim() {
            let ls = self.log_std[j];
            let r = (action[j] - mu[j]) * (-ls).exp();
            lp += -0.5 * r * r - ls - 0.5 * (2.0 * PI).ln();
        }
        lp
    }

    /// Log-densities for a batch given as `n x state_dim` / `n x action_dim`.
    pub fn log_probs(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("log_probs rows", states.nrows(), actions.nrows())?;
        let means = self.means(states)?;
        Ok(DVector::from_fn(states.nrows(), |i, _| {
            let a: Vec<f64> = actions.row(i).iter().copied().collect();
            self.log_density(&means.column(i).into_owned(), &a)
        }))
    }

    pub fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Result<DVector<f64>> {
        let mut a = self.mean(state)?;
        for j in 0..a.len() {
            a[j] += self.log_std[j].exp() * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(a)
    }

    /// `∇_θ log π_θ(a|s)`.
    pub fn score_vector(&self, state: &[f64], action: &[f64]) -> Result<DVector<f64>> {
        check_finite("state", state)?;
        check_finite("action", action)?;
        let sm = ScoreMatrix::new(
            self,
            &DMatrix::from_row_slice(1, state.len(), state),
            &DMatrix::from_row_slice(1, action.len(), action),
        )?;
        Ok(sm.score(0))
    }

    pub fn scores(&self, states: &DMatrix<f64>, actions: &DMatrix<f64>) -> Result<ScoreMatrix> {
        ScoreMatrix::new(self, states, actions)
    }

    /// Mean of `KL(self(·|s) ‖ other(·|s))` over the rows of `states`.
    pub fn mean_kl(&self, other: &GaussianPolicy, states: &DMatrix<f64>) -> Result<f64> {
        check_dim("mean_kl action dim", self.action_dim(), other.action_dim())?;
        let mu_p = self.means(states)?;
        let mu_q = other.means(states)?;
        let n = states.nrows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..self.action_dim() {
                let (lp, lq) = (self.log_std[j], other.log_std[j]);
                let var_p = (2.0 * lp).exp();
                let var_q = (2.0 * lq).exp();
                let d = mu_p[(j, i)] - mu_q[(j, i)];
                total += lq - lp + (var_p + d * d) / (2.0 * var_q) - 0.5;
            }
        }
        Ok(total / n as f64)
    }
}

fn layer_sizes(state_dim: usize, hidden: &[usize], action_dim: usize) -> Vec<usize> {
    let mut sizes = vec![state_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(action_dim);
    sizes
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Input(format!("non-finite {what}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    const LN_2PI: f64 = 1.8378770664093453;

    #[test]
    fn standard_normal_at_mode() {
        let p = GaussianPolicy::zeros(2, 1, &[4]);
        let lp = p.log_prob(&[0.3, -1.0], &[0.0]).unwrap();
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-15);
        let lp1 = p.log_prob(&[0.3, -1.0], &[1.0]).unwrap();
        assert!((lp1 + 0.5 * LN_2PI + 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = GaussianPolicy::zeros(1, 1, &[2]);
        assert!(matches!(p.log_prob(&[f64::NAN], &[0.0]), Err(Error::Input(_))));
        assert!(matches!(p.log_prob(&[0.0], &[f64::INFINITY]), Err(Error::Input(_))));
    }

    #[test]
    fn theta_round_trip() {
        let mut rng = seeded(5);
        let p = GaussianPolicy::new(3, 2, &PolicyConfig::default(), &mut rng);
        let mut q = GaussianPolicy::zeros(3, 2, &[64, 64]);
        q.set_theta(&p.theta()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.theta(), q.theta());
        assert_eq!(p.num_params(), 3 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2 + 2);
    }

    #[test]
    fn kl_is_zero_to_self_and_matches_hand_value() {
        let p = GaussianPolicy::zeros(1, 1, &[]);
        let states = DMatrix::from_element(3, 1, 0.5);
        assert_eq!(p.mean_kl(&p, &states).unwrap(), 0.0);
        let mut q = p.clone();
        // mean shift 1 via the bias, log-std 0 both sides → KL = 0.5
        q.set_theta(&DVector::from_vec(vec![0.0, 1.0, 0.0])).unwrap();
        assert!((p.mean_kl(&q, &states).unwrap() - 0.5).abs() < 1e-15);
    }
}
