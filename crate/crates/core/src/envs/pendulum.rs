use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Environment, Transition};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Torque-limited pendulum with `θ = 0` upright.
///
/// `θ̇' = clip(θ̇ + dt (g/l sin θ + u/(m l²)), ±max_speed)`, `θ' = wrap(θ + dt θ̇')`
/// (semi-implicit Euler), reward `−(θ² + 0.1 θ̇² + 0.001 u²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumConfig {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub noise_std: f64,
    pub horizon: usize,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            noise_std: 0.0,
            horizon: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pendulum {
    cfg: PendulumConfig,
}

fn wrap(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(cfg: PendulumConfig) -> Result<Self> {
        if !(cfg.mass > 0.0 && cfg.length > 0.0 && cfg.dt > 0.0) || cfg.horizon == 0 {
            return Err(Error::Config("pendulum mass, length, dt and horizon must be positive".into()));
        }
        Ok(Self { cfg })
    }
}

impl Environment for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn reward_bound(&self) -> f64 {
        PI * PI + 0.1 * self.cfg.max_speed.powi(2) + 0.001 * self.cfg.max_torque.powi(2)
    }
    fn reset_bound(&self) -> f64 {
        PI
    }
    fn reset(&self, rng: &mut Rng) -> DVector<f64> {
        use rand::Rng as _;
        DVector::from_vec(vec![rng.random_range(-PI..PI), rng.random_range(-1.0..=1.0)])
    }
    fn step(&self, s: &DVector<f64>, a: &DVector<f64>, rng: &mut Rng) -> Transition {
        let c = &self.cfg;
        let u = a[0].clamp(-c.max_torque, c.max_torque);
        let (theta, omega) = (s[0], s[1]);
        let reward = -(theta * theta + 0.1 * omega * omega + 0.001 * u * u);
        let noise = super::gaussian_noise(1, c.noise_std, rng)[0];
        let accel = c.gravity / c.length * theta.sin() + u / (c.mass * c.length * c.length);
        let omega2 = (omega + c.dt * accel + noise).clamp(-c.max_speed, c.max_speed);
        let theta2 = wrap(theta + c.dt * omega2);
        Transition {
            next_state: DVector::from_vec(vec![theta2, omega2]),
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
    fn upright_is_a_fixed_point() {
        let env = Pendulum::new(PendulumConfig::default()).unwrap();
        let mut s = DVector::zeros(2);
        let mut rng = seeded(2);
        for _ in 0..100 {
            let tr = env.step(&s, &DVector::zeros(1), &mut rng);
            assert_eq!(tr.reward, 0.0);
            s = tr.next_state;
        }
        assert_eq!(s, DVector::zeros(2));
    }

    #[test]
    fn angle_wraps() {
        assert!((wrap(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap(-0.3) + 0.3).abs() < 1e-15);
    }
}
