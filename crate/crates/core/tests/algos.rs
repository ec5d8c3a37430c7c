mod common;

use std::sync::Arc;

use common::*;
use nalgebra::DVector;

use bqpg::algos::{
    fisher_quadratic, kl_scaled_step, npg_step, surrogate, train, trpo_step, Algorithm, EstimatorChoice,
    SurrogateData, TrainConfig,
};
use bqpg::envs::{collect_batch, discounted_returns, EnvConfig, Lqr, LqrConfig};
use bqpg::estimators::{mc_gradient, natural_gradient};
use bqpg::linalg::CgConfig;
use bqpg::policy::{FisherOperator, GaussianPolicy, PolicyConfig};
use bqpg::rng::seeded;

fn env() -> Lqr {
    Lqr::new(LqrConfig { horizon: 20, ..LqrConfig::default() }).unwrap()
}

fn normalized_returns(policy: &GaussianPolicy, n: usize, seed: u64) -> (bqpg::envs::SampleBatch, DVector<f64>) {
    let batch = collect_batch(&env(), policy, n, seed, 0.99).unwrap();
    let finals = vec![0.0; batch.episodes.len()];
    let q = discounted_returns(&batch, 0.99, &finals).unwrap();
    let q = bqpg::algos::normalize(&q);
    (batch, q)
}

fn cg() -> CgConfig {
    CgConfig { max_iters: 200, tol: 1e-12, damping: 1e-4 }
}

#[test]
fn npg_step_kl_matches_radius_on_small_steps() {
    let mut rng = seeded(11);
    let radius = 1e-6;
    for (seed, hidden) in [(0, vec![]), (1, vec![]), (2, vec![3]), (3, vec![3]), (4, vec![8])] {
        let mut policy = tiny_policy(2, 1, &hidden, &mut rng);
        let (batch, q) = normalized_returns(&policy, 4000, seed);
        let scores = Arc::new(policy.scores(&batch.states, &batch.actions).unwrap());
        let vanilla = mc_gradient(&scores, &q).unwrap();
        let nat = natural_gradient(scores.clone(), &vanilla, &cg()).unwrap();
        let fisher = FisherOperator::new(scores);
        let before = policy.clone();
        let info = npg_step(&mut policy, &fisher, &nat, &cg(), radius).unwrap();
        assert!(info.accepted);
        let kl = before.mean_kl(&policy, &batch.states).unwrap();
        assert!((kl - radius).abs() <= 0.3 * radius, "seed {seed}: KL {kl}");
    }
}

#[test]
fn kl_scaled_step_hits_quadratic_budget() {
    let mut rng = seeded(2);
    let policy = tiny_policy(2, 1, &[4], &mut rng);
    let (batch, _) = normalized_returns(&policy, 300, 1);
    let fisher = FisherOperator::new(Arc::new(policy.scores(&batch.states, &batch.actions).unwrap()));
    let d = gaussian_vector(policy.num_params(), &mut rng);
    let step = kl_scaled_step(&fisher, &d, 0.1, 0.02).unwrap().unwrap();
    let quad = fisher_quadratic(&fisher, &step, 0.1).unwrap();
    assert!((0.5 * quad - 0.02).abs() < 1e-12);
    assert!(kl_scaled_step(&fisher, &DVector::zeros(d.len()), 0.1, 0.02).unwrap().is_none());
}

#[test]
fn vanilla_estimate_rejected_by_npg() {
    let mut rng = seeded(3);
    let mut policy = tiny_policy(2, 1, &[4], &mut rng);
    let (batch, q) = normalized_returns(&policy, 100, 1);
    let scores = Arc::new(policy.scores(&batch.states, &batch.actions).unwrap());
    let vanilla = mc_gradient(&scores, &q).unwrap();
    let fisher = FisherOperator::new(scores);
    assert!(npg_step(&mut policy, &fisher, &vanilla, &cg(), 0.01).is_err());
}

#[test]
fn trpo_never_decreases_surrogate() {
    let mut rng = seeded(5);
    let mut policy = tiny_policy(2, 1, &[8], &mut rng);
    let radius = 0.05;
    for it in 0..10 {
        let (batch, q) = normalized_returns(&policy, 1000, 100 + it);
        let scores = Arc::new(policy.scores(&batch.states, &batch.actions).unwrap());
        let vanilla = mc_gradient(&scores, &q).unwrap();
        let nat = natural_gradient(scores.clone(), &vanilla, &cg()).unwrap();
        let fisher = FisherOperator::new(scores);
        let data = SurrogateData {
            states: &batch.states,
            actions: &batch.actions,
            behaviour_logprobs: &batch.logprobs,
            advantages: &q,
        };
        let before = surrogate(&policy, &batch.states, &batch.actions, &batch.logprobs, &q).unwrap();
        let old = policy.clone();
        let info = trpo_step(&mut policy, &fisher, &nat, &data, &cg(), radius).unwrap();
        let after = surrogate(&policy, &batch.states, &batch.actions, &batch.logprobs, &q).unwrap();
        assert!(after >= before, "iteration {it}: {before} -> {after}");
        if info.accepted {
            assert!(old.mean_kl(&policy, &batch.states).unwrap() <= radius);
        } else {
            assert_eq!(old, policy);
        }
    }
}

fn small_config(estimator: EstimatorChoice, algorithm: Algorithm) -> TrainConfig {
    let mut cfg = TrainConfig {
        algorithm,
        estimator,
        iterations: 3,
        batch_size: 256,
        policy: PolicyConfig { hidden: vec![8], ..PolicyConfig::default() },
        env: EnvConfig::default(),
        seed: 9,
        ..TrainConfig::default()
    };
    cfg.kernel.feature.hidden = vec![8];
    cfg.kernel.feature.output_dim = 2;
    cfg
}

#[test]
fn training_is_deterministic() {
    for (est, alg) in [
        (EstimatorChoice::Mc, Algorithm::Vanilla),
        (EstimatorChoice::Dbqpg, Algorithm::Npg),
        (EstimatorChoice::Uapg, Algorithm::Trpo),
    ] {
        let cfg = small_config(est, alg);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert!(a.complete && a.error.is_none());
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.to_csv(), b.to_csv(), "{est:?}/{alg:?}");
        let mut other = cfg.clone();
        other.seed = 10;
        assert_ne!(a.to_csv(), train(&other).unwrap().to_csv());
    }
}

#[test]
fn zero_iterations_give_empty_record() {
    let cfg = TrainConfig { iterations: 0, ..small_config(EstimatorChoice::Dbqpg, Algorithm::Vanilla) };
    let record = train(&cfg).unwrap();
    assert!(record.rows.is_empty());
    assert!(record.complete);
    assert_eq!(record.to_csv().lines().count(), 1);
}

#[test]
fn invalid_training_config_rejected() {
    let cfg = TrainConfig { batch_size: 0, ..small_config(EstimatorChoice::Mc, Algorithm::Vanilla) };
    assert!(train(&cfg).is_err());
    let mut cfg = small_config(EstimatorChoice::Mc, Algorithm::Vanilla);
    cfg.gae.gamma = 1.0;
    assert!(train(&cfg).is_err());
}
