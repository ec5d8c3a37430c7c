use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::SampleBatch;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaeConfig {
    pub gamma: f64,
    pub tau: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            tau: 0.97,
        }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("GAE needs 0 ≤ γ < 1 and 0 ≤ τ ≤ 1".into()));
        }
        Ok(())
    }
}

/// `A_t = Σ_l (γτ)^l δ_{t+l}`, `δ_t = r_t + γ V(s_{t+1}) − V(s_t)`, per episode.
/// `values` are `V(s_t)` for every sample, `final_values` are `V` of each
/// episode's final state; they are used for truncated episodes only.
pub fn gae_advantages(
    batch: &SampleBatch,
    values: &DVector<f64>,
    final_values: &[f64],
    cfg: &GaeConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    check_dim("gae values", batch.n(), values.len())?;
    check_dim("gae final values", batch.episodes.len(), final_values.len())?;
    let mut adv = DVector::zeros(batch.n());
    for (e, ep) in batch.episodes.iter().enumerate() {
        let mut next_value = if ep.terminal { 0.0 } else { final_values[e] };
        let mut acc = 0.0;
        for t in (ep.start..ep.start + ep.len).rev() {
            let delta = batch.rewards[t] + cfg.gamma * next_value - values[t];
            acc = delta + cfg.gamma * cfg.tau * acc;
            adv[t] = acc;
            next_value = values[t];
        }
    }
    Ok(adv)
}

/// Discounted reward-to-go per sample, bootstrapped with `final_values` on
/// truncated episodes.
pub fn discounted_returns(batch: &SampleBatch, gamma: f64, final_values: &[f64]) -> Result<DVector<f64>> {
    check_dim("discounted_returns final values", batch.episodes.len(), final_values.len())?;
    let mut out = DVector::zeros(batch.n());
    for (e, ep) in batch.episodes.iter().enumerate() {
        let mut acc = if ep.terminal { 0.0 } else { final_values[e] };
        for t in (ep.start..ep.start + ep.len).rev() {
            acc = batch.rewards[t] + gamma * acc;
            out[t] = acc;
        }
    }
    Ok(out)
}
