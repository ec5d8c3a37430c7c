use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::Environment;
use crate::error::{check_dim, Error, Result};
use crate::policy::GaussianPolicy;
use crate::rng::substream;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A contiguous run of samples from one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub start: usize,
    pub len: usize,
    /// Ended in a true terminal; otherwise truncated and bootstrapped.
    pub terminal: bool,
    /// Ran to the environment horizon or a terminal (not cut by the batch size).
    pub complete: bool,
    pub final_state: DVector<f64>,
}

/// `n` on-policy samples, episodes stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// `n x state_dim`.
    pub states: DMatrix<f64>,
    /// `n x action_dim`.
    pub actions: DMatrix<f64>,
    pub rewards: DVector<f64>,
    /// Behaviour log-densities recorded at collection time.
    pub logprobs: DVector<f64>,
    /// `γ^t` with `t` the step index inside the episode.
    pub discount_weights: DVector<f64>,
    pub episodes: Vec<Episode>,
    /// Episodes cut short because the state diverged.
    pub diverged: usize,
    q_values: Option<DVector<f64>>,
}

impl SampleBatch {
    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn q_values(&self) -> Result<&DVector<f64>> {
        self.q_values
            .as_ref()
            .ok_or_else(|| Error::Input("Q values not populated".into()))
    }

    pub fn set_q_values(&mut self, q: DVector<f64>) -> Result<()> {
        check_dim("SampleBatch::set_q_values", self.n(), q.len())?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite Q values".into()));
        }
        self.q_values = Some(q);
        Ok(())
    }

    /// Final states of all episodes, one row each.
    pub fn final_states(&self) -> DMatrix<f64> {
        let d = self.states.ncols();
        DMatrix::from_fn(self.episodes.len(), d, |e, j| self.episodes[e].final_state[j])
    }

    /// Undiscounted return of each complete episode (all episodes if none
    /// is complete).
    pub fn episode_returns(&self) -> Vec<f64> {
        let complete: Vec<&Episode> = self.episodes.iter().filter(|e| e.complete).collect();
        let pool: Vec<&Episode> = if complete.is_empty() {
            self.episodes.iter().collect()
        } else {
            complete
        };
        pool.iter()
            .map(|e| self.rewards.rows(e.start, e.len).sum())
            .collect()
    }

    pub fn mean_return(&self) -> f64 {
        let r = self.episode_returns();
        r.iter().sum::<f64>() / r.len().max(1) as f64
    }

    /// Rows `indices` of the states (for minibatches).
    pub fn select_states(&self, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(indices.len(), self.states.ncols(), |i, j| self.states[(indices[i], j)])
    }
}

/// Runs episodes with `policy` until exactly `n` samples are collected. The
/// last episode is cut at `n` and treated as a time-limit truncation.
/// Episode `e` draws everything from sub-stream `e` of `seed`.
pub fn collect_batch(
    env: &dyn Environment,
    policy: &GaussianPolicy,
    n: usize,
    seed: u64,
    gamma: f64,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Input("batch size must be positive".into()));
    }
    check_dim("collect_batch state dim", env.state_dim(), policy.state_dim())?;
    check_dim("collect_batch action dim", env.action_dim(), policy.action_dim())?;
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let mut states = DMatrix::zeros(n, sd);
    let mut actions = DMatrix::zeros(n, ad);
    let mut rewards = DVector::zeros(n);
    let mut logprobs = DVector::zeros(n);
    let mut discount_weights = DVector::zeros(n);
    let mut episodes = Vec::new();
    let mut diverged = 0;
    let std: Vec<f64> = policy.log_std().iter().map(|l| l.exp()).collect();
    let log_norm: f64 = policy.log_std().iter().map(|l| l + HALF_LN_2PI).sum();

    let mut k = 0;
    let mut episode_index = 0u64;
    while k < n {
        let mut rng = substream(seed, episode_index);
        episode_index += 1;
        let start = k;
        let mut s = env.reset(&mut rng);
        let mut terminal = false;
        let mut t = 0;
        let mut disc = 1.0;
        while t < env.horizon() && k < n {
            let mu = policy.mean(s.as_slice())?;
            let mut lp = -log_norm;
            let a = DVector::from_fn(ad, |j, _| {
                let eps: f64 = rng.sample(StandardNormal);
                lp -= 0.5 * eps * eps;
                mu[j] + std[j] * eps
            });
            let tr = env.step(&s, &a, &mut rng);
            states.set_row(k, &s.transpose());
            actions.set_row(k, &a.transpose());
            rewards[k] = tr.reward;
            logprobs[k] = lp;
            discount_weights[k] = disc;
            disc *= gamma;
            k += 1;
            t += 1;
            s = tr.next_state;
            if tr.terminal {
                terminal = true;
                diverged += 1;
                break;
            }
        }
        if !s.iter().all(|v| v.is_finite()) {
            s = DVector::zeros(sd);
        }
        episodes.push(Episode {
            start,
            len: k - start,
            terminal,
            complete: terminal || t == env.horizon(),
            final_state: s,
        });
    }
    if diverged > 0 {
        log::warn!("{diverged} episode(s) diverged during collection");
    }
    Ok(SampleBatch {
        states,
        actions,
        rewards,
        logprobs,
        discount_weights,
        episodes,
        diverged,
        q_values: None,
    })
}
