//! Products with the score matrix `U = [u(z_1) … u(z_n)]` without forming it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::gaussian::GaussianPolicy;
use super::mlp::ForwardCache;
use crate::error::{check_dim, Result};
use crate::linalg::{cg_solve, CgConfig, CgSolution, LinearOperator};

/// Score matrix of a fixed policy on a fixed batch.
///
/// Holds the forward pass and the per-sample Gaussian factors so that each
/// `U w` or `Uᵀ v` costs one sweep over the batch.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    policy: GaussianPolicy,
    cache: ForwardCache,
    /// `(a − μ) / σ²`, `action_dim x n`.
    mean_factor: DMatrix<f64>,
    /// `((a − μ) / σ)² − 1`, `action_dim x n`.
    log_std_factor: DMatrix<f64>,
}

impl ScoreMatrix {
    pub fn new(
        policy: &GaussianPolicy,
        states: &DMatrix<f64>,
        actions: &DMatrix<f64>,
    ) -> Result<Self> {
        check_dim("ScoreMatrix state dim", policy.state_dim(), states.ncols())?;
        check_dim("ScoreMatrix action dim", policy.action_dim(), actions.ncols())?;
        check_dim("ScoreMatrix batch", states.nrows(), actions.nrows())?;
        let cache = policy.mean_net().forward(states.transpose())?;
        let mu = cache.output();
        let n = states.nrows();
        let ad = policy.action_dim();
        let mut mean_factor = DMatrix::zeros(ad, n);
        let mut log_std_factor = DMatrix::zeros(ad, n);
        for i in 0..n {
            for j in 0..ad {
                let inv_std = (-policy.log_std()[j]).exp();
                let r = (actions[(i, j)] - mu[(j, i)]) * inv_std;
                mean_factor[(j, i)] = r * inv_std;
                log_std_factor[(j, i)] = r * r - 1.0;
            }
        }
        Ok(Self {
            policy: policy.clone(),
            cache,
            mean_factor,
            log_std_factor,
        })
    }

    pub fn n(&self) -> usize {
        self.mean_factor.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.policy.num_params()
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    /// `U w = Σ_i w_i u(z_i)`.
    pub fn vjp(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("score_vjp", self.n(), w.len())?;
        let mut dout = self.mean_factor.clone();
        for (i, mut col) in dout.column_iter_mut().enumerate() {
            col *= w[i];
        }
        let net_grad = self.policy.mean_net().backward(&self.cache, &dout)?;
        let ls_grad = &self.log_std_factor * w;
        let mut out = net_grad.as_slice().to_vec();
        out.extend(ls_grad.iter());
        Ok(DVector::from_vec(out))
    }

    /// `Uᵀ v`, entry `i` being `⟨u(z_i), v⟩`.
    pub fn jvp(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("score_jvp", self.num_params(), v.len())?;
        let split = self.policy.mean_net().num_params();
        let tangent = self.policy.mean_net().jvp(&self.cache, &v.as_slice()[..split])?;
        let v_ls = v.rows(split, self.policy.action_dim());
        let mut out = self.log_std_factor.tr_mul(&v_ls);
        for i in 0..self.n() {
            out[i] += self.mean_factor.column(i).dot(&tangent.column(i));
        }
        Ok(out)
    }

    /// Column `i` of `U`.
    pub fn score(&self, i: usize) -> DVector<f64> {
        let mut w = DVector::zeros(self.n());
        w[i] = 1.0;
        self.vjp(&w).expect("length matches by construction")
    }

    /// Dense `|Θ| x n` score matrix, built sample by sample in `O(n |Θ|)`.
    pub fn dense(&self) -> DMatrix<f64> {
        let net = self.policy.mean_net();
        let mut u = DMatrix::zeros(self.num_params(), self.n());
        net.backward_per_sample_into(&self.cache, &self.mean_factor, &mut u)
            .expect("shapes match by construction");
        u.rows_mut(net.num_params(), self.policy.action_dim())
            .copy_from(&self.log_std_factor);
        u
    }
}

/// Empirical Fisher `G = (1/n) U Uᵀ`.
#[derive(Debug, Clone)]
pub struct FisherOperator {
    scores: Arc<ScoreMatrix>,
}

impl FisherOperator {
    pub fn new(scores: Arc<ScoreMatrix>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &Arc<ScoreMatrix> {
        &self.scores
    }
}

impl LinearOperator for FisherOperator {
    fn dim(&self) -> usize {
        self.scores.num_params()
    }
    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let uv = self.scores.jvp(v)?;
        Ok(self.scores.vjp(&uv)? / self.scores.n() as f64)
    }
    fn description(&self) -> String {
        format!("empirical Fisher ({} samples)", self.scores.n())
    }
}

/// `Uᵀ U`, the `n x n` Gram of score vectors.
#[derive(Debug, Clone)]
pub struct ScoreGramOperator {
    scores: Arc<ScoreMatrix>,
}

impl ScoreGramOperator {
    pub fn new(scores: Arc<ScoreMatrix>) -> Self {
        Self { scores }
    }
}

impl LinearOperator for ScoreGramOperator {
    fn dim(&self) -> usize {
        self.scores.n()
    }
    fn apply(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.scores.jvp(&self.scores.vjp(w)?)
    }
    fn description(&self) -> String {
        format!("score Gram ({} samples)", self.scores.n())
    }
}

/// Solves `(G + damping I) x = v` by CG, with `damping = cfg.damping`.
pub fn fisher_solve(fisher: &FisherOperator, v: &DVector<f64>, cfg: &CgConfig) -> Result<CgSolution> {
    cg_solve(fisher, v, 0.0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_materialize;
    use crate::policy::PolicyConfig;
    use crate::rng::{seeded, Rng};
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn setup(n: usize, rng: &mut Rng) -> (GaussianPolicy, DMatrix<f64>, DMatrix<f64>) {
        let cfg = PolicyConfig {
            hidden: vec![3],
            init_log_std: -0.3,
            output_gain: 1.0,
        };
        let p = GaussianPolicy::new(2, 2, &cfg, rng);
        let s = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        (p, s, a)
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = seeded(11);
        let (p, s, a) = setup(1, &mut rng);
        let state: Vec<f64> = s.row(0).iter().copied().collect();
        let action: Vec<f64> = a.row(0).iter().copied().collect();
        let u = p.score_vector(&state, &action).unwrap();
        let theta = p.theta();
        for k in 0..theta.len() {
            let h = 1e-5;
            let eval = |d: f64| {
                let mut q = p.clone();
                let mut t = theta.clone();
                t[k] += d;
                q.set_theta(&t).unwrap();
                q.log_prob(&state, &action).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - u[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "coord {k}");
        }
    }

    #[test]
    fn log_std_score_closed_form() {
        let mut rng = seeded(12);
        let (p, _, _) = setup(1, &mut rng);
        let state = [0.4, -0.2];
        let action = [1.3, -0.7];
        let mu = p.mean(&state).unwrap();
        let u = p.score_vector(&state, &action).unwrap();
        let off = p.num_params() - 2;
        for j in 0..2 {
            let sigma = p.log_std()[j].exp();
            let expect = ((action[j] - mu[j]) / sigma).powi(2) - 1.0;
            assert!((u[off + j] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn vjp_and_jvp_against_loops() {
        let mut rng = seeded(13);
        let (p, s, a) = setup(7, &mut rng);
        let sm = p.scores(&s, &a).unwrap();
        let cols: Vec<DVector<f64>> = (0..7)
            .map(|i| {
                let st: Vec<f64> = s.row(i).iter().copied().collect();
                let ac: Vec<f64> = a.row(i).iter().copied().collect();
                p.score_vector(&st, &ac).unwrap()
            })
            .collect();
        let w = DVector::from_fn(7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DVector::from_fn(p.num_params(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut uw = DVector::zeros(p.num_params());
        for (i, c) in cols.iter().enumerate() {
            uw += c * w[i];
        }
        assert!((sm.vjp(&w).unwrap() - &uw).norm() <= 1e-10 * uw.norm());
        let utv = sm.jvp(&v).unwrap();
        for (i, c) in cols.iter().enumerate() {
            assert!((utv[i] - c.dot(&v)).abs() <= 1e-10 * (1.0 + utv[i].abs()));
        }
        let dense = sm.dense();
        for (i, c) in cols.iter().enumerate() {
            assert!((dense.column(i) - c).amax() < 1e-12);
        }
        assert_eq!(sm.vjp(&DVector::zeros(7)).unwrap().amax(), 0.0);
        assert_eq!(sm.jvp(&DVector::zeros(p.num_params())).unwrap().amax(), 0.0);
    }

    #[test]
    fn products_reject_bad_lengths() {
        let mut rng = seeded(14);
        let (p, s, a) = setup(4, &mut rng);
        let sm = p.scores(&s, &a).unwrap();
        assert!(sm.vjp(&DVector::zeros(5)).is_err());
        assert!(sm.jvp(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn fisher_matches_dense_and_solve_inverts() {
        let mut rng = seeded(15);
        let (p, s, a) = setup(30, &mut rng);
        let sm = Arc::new(p.scores(&s, &a).unwrap());
        let u = sm.dense();
        let g = &u * u.transpose() / 30.0;
        let fisher = FisherOperator::new(sm.clone());
        let gm = dense_materialize(&fisher, 4096).unwrap();
        assert!((&gm - &g).amax() < 1e-10);
        let y = DVector::from_fn(p.num_params(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = &g * &y + &y * 0.1;
        let cfg = CgConfig {
            max_iters: 500,
            tol: 1e-12,
            damping: 0.1,
        };
        let sol = fisher_solve(&fisher, &v, &cfg).unwrap();
        assert!((sol.x - &y).norm() <= 1e-6 * y.norm());
    }

    #[test]
    fn gram_operator_is_u_transpose_u() {
        let mut rng = seeded(16);
        let (p, s, a) = setup(6, &mut rng);
        let sm = Arc::new(p.scores(&s, &a).unwrap());
        let u = sm.dense();
        let gram = dense_materialize(&ScoreGramOperator::new(sm), 100).unwrap();
        assert!((gram - u.tr_mul(&u)).amax() < 1e-10);
    }
}
