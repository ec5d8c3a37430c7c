//! Adaptive-moment (Adam) ascent.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: DVector<f64>,
    v: DVector<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Bias-corrected update `Δ` for an ascent step along `grad`; the caller
    /// adds it to the parameters. A non-finite gradient leaves the state
    /// untouched.
    pub fn ascent_update(&mut self, grad: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("Adam gradient", self.m.len(), grad.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalBreakdown("non-finite gradient".into()));
        }
        let c = self.config;
        self.t += 1;
        self.m = &self.m * c.beta1 + grad * (1.0 - c.beta1);
        self.v = &self.v * c.beta2 + grad.component_mul(grad) * (1.0 - c.beta2);
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        Ok(DVector::from_fn(grad.len(), |i, _| {
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon)
        }))
    }

    pub fn ascend(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) -> Result<()> {
        let delta = self.ascent_update(grad)?;
        *params += delta;
        Ok(())
    }
}
