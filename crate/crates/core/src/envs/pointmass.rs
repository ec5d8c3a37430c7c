use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{clip, gaussian_noise, uniform_state, Environment, Transition};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// `p' = p + dt · clip(a) + w`, reward `−‖p − g‖² − 0.01 ‖a‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMassConfig {
    pub goal: Vec<f64>,
    pub dt: f64,
    pub action_limit: f64,
    pub noise_std: f64,
    pub horizon: usize,
    pub init_range: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            goal: vec![1.0, -0.5],
            dt: 0.1,
            action_limit: 1.0,
            noise_std: 0.02,
            horizon: 50,
            init_range: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointMass {
    cfg: PointMassConfig,
    goal: DVector<f64>,
}

const ACTION_COST: f64 = 0.01;
/// Positions are kept inside this box.
const ARENA: f64 = 10.0;

impl PointMass {
    pub fn new(cfg: PointMassConfig) -> Result<Self> {
        if cfg.goal.is_empty() || cfg.horizon == 0 || !(cfg.dt > 0.0) {
            return Err(Error::Config("pointmass needs a goal, dt > 0 and a horizon".into()));
        }
        if cfg.goal.iter().any(|g| g.abs() > ARENA) {
            return Err(Error::Config("pointmass goal outside the arena".into()));
        }
        let goal = DVector::from_column_slice(&cfg.goal);
        Ok(Self { cfg, goal })
    }
}

impl Environment for PointMass {
    fn name(&self) -> &'static str {
        "pointmass"
    }
    fn state_dim(&self) -> usize {
        self.goal.len()
    }
    fn action_dim(&self) -> usize {
        self.goal.len()
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn reward_bound(&self) -> f64 {
        let d = self.goal.len() as f64;
        d * (2.0 * ARENA).powi(2) + ACTION_COST * d * self.cfg.action_limit.powi(2)
    }
    fn reset_bound(&self) -> f64 {
        self.cfg.init_range
    }
    fn reset(&self, rng: &mut Rng) -> DVector<f64> {
        uniform_state(self.goal.len(), self.cfg.init_range, rng)
    }
    fn step(&self, p: &DVector<f64>, a: &DVector<f64>, rng: &mut Rng) -> Transition {
        let a = clip(a, self.cfg.action_limit);
        let reward = -(p - &self.goal).norm_squared() - ACTION_COST * a.norm_squared();
        let next = (p + &a * self.cfg.dt + gaussian_noise(p.len(), self.cfg.noise_std, rng))
            .map(|v| v.clamp(-ARENA, ARENA));
        Transition {
            next_state: next,
            reward,
            terminal: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn at_goal_with_zero_action_is_free() {
        let env = PointMass::new(PointMassConfig::default()).unwrap();
        let goal = DVector::from_vec(vec![1.0, -0.5]);
        let tr = env.step(&goal, &DVector::zeros(2), &mut seeded(1));
        assert_eq!(tr.reward, 0.0);
    }
}
