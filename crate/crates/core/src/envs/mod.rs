//! Small continuous-control tasks, rollouts, GAE and the linear critic.
//!
//! | name        | state             | action      | reward                                  |
//! |-------------|-------------------|-------------|-----------------------------------------|
//! | `lqr`       | `s ∈ R^d`         | `a ∈ R^k`   | `−(sᵀ Q s + aᵀ R a)`                    |
//! | `pointmass` | position `p ∈ R²` | velocity    | `−‖p − g‖² − 0.01 ‖a‖²`                 |
//! | `pendulum`  | `(θ, θ̇)`, θ=0 up  | torque      | `−(θ² + 0.1 θ̇² + 0.001 u²)`             |
//!
//! Episodes end at the horizon (a time-limit truncation) or when the state
//! diverges (a true terminal).

mod critic;
mod gae;
mod lqr;
mod pendulum;
mod pointmass;
mod rollout;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use critic::{critic_loss_and_grads, critic_update, CriticGrads, CriticHead};
pub use gae::{discounted_returns, gae_advantages, GaeConfig};
pub use lqr::{Lqr, LqrConfig};
pub use pendulum::{Pendulum, PendulumConfig};
pub use pointmass::{PointMass, PointMassConfig};
pub use rollout::{collect_batch, Episode, SampleBatch};

/// Outcome of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_state: DVector<f64>,
    pub reward: f64,
    /// True terminal (no bootstrapping).
    pub terminal: bool,
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// `|r| ≤ reward_bound()` for every transition.
    fn reward_bound(&self) -> f64;
    /// Reset states satisfy `|s_j| ≤ reset_bound()`.
    fn reset_bound(&self) -> f64;
    fn reset(&self, rng: &mut Rng) -> DVector<f64>;
    fn step(&self, state: &DVector<f64>, action: &DVector<f64>, rng: &mut Rng) -> Transition;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub name: String,
    pub lqr: LqrConfig,
    pub pointmass: PointMassConfig,
    pub pendulum: PendulumConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: "lqr".into(),
            lqr: LqrConfig::default(),
            pointmass: PointMassConfig::default(),
            pendulum: PendulumConfig::default(),
        }
    }
}

pub fn make_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>> {
    match cfg.name.as_str() {
        "lqr" => Ok(Box::new(Lqr::new(cfg.lqr.clone())?)),
        "pointmass" => Ok(Box::new(PointMass::new(cfg.pointmass.clone())?)),
        "pendulum" => Ok(Box::new(Pendulum::new(cfg.pendulum.clone())?)),
        other => Err(Error::Config(format!("unknown environment `{other}`"))),
    }
}

pub(crate) fn clip(a: &DVector<f64>, limit: f64) -> DVector<f64> {
    a.map(|v| v.clamp(-limit, limit))
}

pub(crate) fn uniform_state(dim: usize, half_width: f64, rng: &mut Rng) -> DVector<f64> {
    use rand::Rng as _;
    DVector::from_fn(dim, |_, _| rng.random_range(-half_width..=half_width))
}

pub(crate) fn gaussian_noise(dim: usize, std: f64, rng: &mut Rng) -> DVector<f64> {
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    if std == 0.0 {
        return DVector::zeros(dim);
    }
    DVector::from_fn(dim, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}
