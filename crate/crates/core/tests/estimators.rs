mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use bqpg::estimators::{
    dbqpg_covariance_mvm, dbqpg_gradient, mc_gradient, natural_gradient, uapg_natural,
    uapg_natural_transform, uapg_vanilla, EstimateKind, UapgConfig,
};
use bqpg::kernels::{CompositeKernel, FisherKernelConfig, FisherKernelOperator};
use bqpg::linalg::{cosine_similarity, dense_materialize, CgConfig, LinearOperator, TruncatedSpectrum};
use bqpg::rng::seeded;

#[test]
fn mc_gradient_is_mean_score_times_q() {
    let inst = Instance::new(1, 25, &[3], 1.0, 1.0, 1.0, 0.0);
    let est = mc_gradient(&inst.scores(), &inst.q).unwrap();
    assert_eq!(est.kind, EstimateKind::Mc);
    assert!(rel_err(&est.mean, &(&inst.u * &inst.q / 25.0)) < 1e-12);
}

#[test]
fn dbqpg_matches_dense_oracle() {
    for seed in 0..5 {
        let inst = Instance::new(seed, 30 + seed as usize, &[2], 1.0, 0.3, 1e-2, 1e-3);
        let est = dbqpg_gradient(inst.scores(), &inst.q, inst.composite()).unwrap();
        assert!(rel_err(&est.mean, &inst.oracle_mean()) < 1e-5, "mean, seed {seed}");
        let cov = inst.oracle_covariance();
        let mut rng = seeded(seed);
        for _ in 0..5 {
            let v = gaussian_vector(inst.u.nrows(), &mut rng);
            let got = dbqpg_covariance_mvm(&est, &v).unwrap();
            assert!(rel_err(&got, &(&cov * &v)) < 1e-5, "covariance, seed {seed}");
        }
    }
}

// PSD needs the undamped Fisher kernel: with λ > 0 a single sample with
// σ² → 0 already gives c2 u² − c2 (u² + λ) < 0.
#[test]
fn dbqpg_covariance_is_symmetric_psd() {
    let inst = Instance::new(3, 40, &[2], 1.0, 0.5, 1e-2, 0.0);
    let est = dbqpg_gradient(inst.scores(), &inst.q, inst.composite()).unwrap();
    let c = dense_materialize(est.covariance.as_ref().unwrap().as_ref(), 100).unwrap();
    assert!((&c - c.transpose()).amax() < 1e-9 * c.amax());
    let eig = SymmetricEigen::new((&c + c.transpose()) * 0.5);
    assert!(eig.eigenvalues.iter().all(|v| *v > -1e-9 * c.amax()));
}

/// `c1 = 0` with an undamped Fisher kernel: `K_f = n Π` on the score row space.
fn c1_zero_kernel(inst: &Instance) -> Arc<CompositeKernel> {
    let fisher = FisherKernelOperator::from_dense_scores(
        inst.u.clone(),
        &FisherKernelConfig::default(),
        &mut seeded(0),
    )
    .unwrap();
    Arc::new(
        CompositeKernel::from_parts(
            inst.n(),
            0.0,
            None,
            inst.c2,
            Some(Arc::new(fisher)),
            inst.sigma2,
            CgConfig::undamped(500, 1e-14),
        )
        .unwrap(),
    )
}

#[test]
fn c1_zero_reduces_to_scaled_mc() {
    for (n, hidden) in [(20usize, vec![2usize]), (40, vec![3])] {
        let inst = Instance::new(n as u64, n, &hidden, 0.0, 0.7, 0.05, 0.0);
        let est = dbqpg_gradient(inst.scores(), &inst.q, c1_zero_kernel(&inst)).unwrap();
        let nf = n as f64;
        let scale = inst.c2 / (inst.sigma2 + inst.c2 * nf);
        assert!(rel_err(&est.mean, &(&inst.u * &inst.q * scale)) < 1e-6);
        let mc = mc_gradient(&inst.scores(), &inst.q).unwrap();
        assert!((cosine_similarity(&est.mean, &mc.mean) - 1.0).abs() < 1e-10);
        let g = &inst.u * inst.u.transpose() / nf;
        let cov_scale = inst.sigma2 * inst.c2 / (inst.sigma2 + inst.c2 * nf);
        let mut rng = seeded(1);
        for _ in 0..20 {
            let v = gaussian_vector(inst.u.nrows(), &mut rng);
            let got = dbqpg_covariance_mvm(&est, &v).unwrap();
            assert!(rel_err(&got, &(&g * &v * cov_scale)) < 1e-5);
        }
    }
}

#[test]
fn c2_zero_gives_exact_zeros() {
    let inst = Instance::new(4, 20, &[2], 1.0, 0.0, 1e-2, 1e-3);
    let est = dbqpg_gradient(inst.scores(), &inst.q, inst.composite()).unwrap();
    assert!(est.mean.iter().all(|v| *v == 0.0));
    let v = DVector::from_element(inst.u.nrows(), 1.0);
    assert!(dbqpg_covariance_mvm(&est, &v).unwrap().iter().all(|x| *x == 0.0));
}

fn permuted(inst: &Instance, perm: &[usize]) -> Instance {
    let mut out = Instance::new(0, inst.n(), &[2], inst.c1, inst.c2, inst.sigma2, inst.lambda);
    out.policy = inst.policy.clone();
    out.states = DMatrix::from_fn(inst.n(), 2, |i, j| inst.states[(perm[i], j)]);
    out.actions = DMatrix::from_fn(inst.n(), 1, |i, j| inst.actions[(perm[i], j)]);
    out.q = DVector::from_fn(inst.n(), |i, _| inst.q[perm[i]]);
    out.u = dense_scores(&out.policy, &out.states, &out.actions);
    out
}

#[test]
fn means_are_invariant_to_sample_order() {
    let inst = Instance::new(5, 30, &[2], 1.0, 0.4, 1e-1, 1e-2);
    let perm: Vec<usize> = (0..30).map(|i| (i * 7 + 3) % 30).collect();
    let other = permuted(&inst, &perm);
    let a = mc_gradient(&inst.scores(), &inst.q).unwrap().mean;
    let b = mc_gradient(&other.scores(), &other.q).unwrap().mean;
    assert!(rel_err(&a, &b) < 1e-12);
    let a = dbqpg_gradient(inst.scores(), &inst.q, inst.composite()).unwrap().mean;
    let b = dbqpg_gradient(other.scores(), &other.q, other.composite()).unwrap().mean;
    assert!(rel_err(&a, &b) < 1e-12, "{}", rel_err(&a, &b));
}

#[test]
fn natural_gradient_matches_dense_solve() {
    let inst = Instance::new(6, 25, &[2], 1.0, 0.3, 1e-2, 1e-3);
    let est = mc_gradient(&inst.scores(), &inst.q).unwrap();
    let cg = CgConfig { max_iters: 500, tol: 1e-14, damping: 0.1 };
    let nat = natural_gradient(inst.scores(), &est, &cg).unwrap();
    assert_eq!(nat.kind, EstimateKind::McNatural);
    let p = inst.u.nrows();
    let g = &inst.u * inst.u.transpose() / 25.0 + DMatrix::identity(p, p) * 0.1;
    assert!(rel_err(&nat.mean, &(spd_inverse(&g) * &est.mean)) < 1e-8);
    assert!(natural_gradient(inst.scores(), &nat, &cg).is_err());
}

/// Eigendecomposition with eigenvalues sorted non-increasing.
fn sorted_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vecs = DMatrix::from_fn(m.nrows(), m.nrows(), |i, j| eig.eigenvectors[(i, order[j])]);
    let vals = DVector::from_fn(m.nrows(), |i, _| eig.eigenvalues[order[i]]);
    (vecs, vals)
}

#[test]
fn uapg_vanilla_whitens_the_covariance_at_full_rank() {
    let inst = Instance::new(7, 60, &[2], 1.0, 0.5, 1e-2, 0.0);
    let p = inst.u.nrows();
    let est = dbqpg_gradient(inst.scores(), &inst.q, inst.composite()).unwrap();
    let cfg = UapgConfig { rank: p, ..UapgConfig::default() };
    let out = uapg_vanilla(&est, &cfg, &mut seeded(1)).unwrap();
    assert_eq!(out.kind, EstimateKind::UapgVanilla);
    let spectrum = out.spectrum.clone().unwrap();
    // T = ν_δ^{-1/2} (I + Σ h (√(ν_δ/ν) − 1) hᵀ), applied to the dense covariance.
    let nu_d = spectrum.smallest();
    let h = &spectrum.vectors;
    let d = spectrum.values.map(|nu| (nu_d / nu).sqrt() - 1.0);
    let t = (DMatrix::identity(p, p) + h * DMatrix::from_diagonal(&d) * h.transpose()) / nu_d.sqrt();
    let c = inst.oracle_covariance();
    let white = &t * c * t.transpose();
    let (_, vals) = sorted_eigen(&white);
    assert!(vals.iter().all(|v| (v - 1.0).abs() <= 1e-4), "{vals}");
    assert!(rel_err(&out.mean, &(&t * &est.mean)) < 1e-8);
}

#[test]
fn uapg_vanilla_rank_is_clamped_to_parameter_count() {
    let inst = Instance::new(8, 50, &[2], 1.0, 0.5, 1e-2, 0.0);
    let est = dbqpg_gradient(inst.scores(), &inst.q, inst.composite()).unwrap();
    let out = uapg_vanilla(&est, &UapgConfig { rank: 10_000, ..UapgConfig::default() }, &mut seeded(2)).unwrap();
    assert_eq!(out.spectrum.unwrap().rank(), inst.u.nrows());
}

#[test]
fn uapg_natural_unclipped_matches_dense_whitening() {
    let inst = Instance::new(9, 60, &[2], 1.0, 0.5, 1e-2, 1e-3);
    let p = inst.u.nrows();
    let n = inst.n() as f64;
    let damping = 0.1;
    let kernel = inst.composite();
    let bq = dbqpg_gradient(inst.scores(), &inst.q, kernel.clone()).unwrap();
    let cg = CgConfig { max_iters: 1000, tol: 1e-14, damping };
    let nat = natural_gradient(inst.scores(), &bq, &cg).unwrap();
    let cfg = UapgConfig { rank: p, epsilon: f64::INFINITY, ..UapgConfig::default() };
    let out = uapg_natural(inst.scores(), kernel, &nat, &cfg, damping, &mut seeded(3)).unwrap();
    // dense precision (1/c2)(G + λI + c2 U (c1 K_s + σ²I)⁻¹ Uᵀ)
    let inner = &inst.ks * inst.c1 + DMatrix::identity(inst.n(), inst.n()) * inst.sigma2;
    let prec = (&inst.u * inst.u.transpose() / n
        + DMatrix::identity(p, p) * damping
        + &inst.u * spd_inverse(&inner) * inst.u.transpose() * inst.c2)
        / inst.c2;
    let (h, nu) = sorted_eigen(&prec);
    let root = &h * DMatrix::from_diagonal(&nu.map(f64::sqrt)) * h.transpose();
    assert!(rel_err(&out.mean, &(&root * &nat.mean)) < 1e-4);
}

#[test]
fn natural_clip_gives_amplification_three() {
    let mut vectors = DMatrix::zeros(4, 2);
    vectors[(0, 0)] = 1.0;
    vectors[(1, 1)] = 1.0;
    let spectrum = TruncatedSpectrum { vectors, values: DVector::from_vec(vec![100.0, 1.0]) };
    let x = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]);
    let out = uapg_natural_transform(&spectrum, &x, 3.0).unwrap();
    assert_eq!(out[0] / out[1], 3.0);
    let unclipped = uapg_natural_transform(&spectrum, &x, f64::INFINITY).unwrap();
    assert!((unclipped[0] / unclipped[1] - 10.0).abs() < 1e-12);
}

#[test]
fn estimators_reject_bad_inputs() {
    let inst = Instance::new(10, 20, &[2], 1.0, 0.5, 1e-2, 1e-3);
    assert!(mc_gradient(&inst.scores(), &DVector::zeros(19)).is_err());
    let mut q = inst.q.clone();
    q[0] = f64::NAN;
    assert!(dbqpg_gradient(inst.scores(), &q, inst.composite()).is_err());
    let mc = mc_gradient(&inst.scores(), &inst.q).unwrap();
    assert!(dbqpg_covariance_mvm(&mc, &DVector::zeros(inst.u.nrows())).is_err());
    assert!(uapg_vanilla(&mc, &UapgConfig::default(), &mut seeded(0)).is_err());
    let _ = LinearOperator::dim(inst.composite().operator());
}
