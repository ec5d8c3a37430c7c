//! Fisher kernel `K_f = Uᵀ (G + λI)⁻¹ U` over a batch.
//!
//! Two evaluation routes:
//!
//! - Jacobian products: `v ↦ Uᵀ CG(G + λI, U v)`, nothing precomputed.
//! - Truncated SVD: with `U ≈ Σ_i s_i p_i r_iᵀ` (rank `δ`),
//!   `K_f ≈ Σ_i n s_i² / (s_i² + nλ) · r_i r_iᵀ`, which is `n R Rᵀ` at
//!   `λ = 0`. The factors come from whichever of `U Uᵀ` or `Uᵀ U` is smaller.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    at_mul, cg_solve, dense_top_eigen, CgConfig, DenseOperator, LinearOperator, RsvdConfig,
    TruncatedSpectrum,
};
use crate::policy::{FisherOperator, ScoreMatrix};
use crate::rng::Rng;

/// Without damping, eigenvalues of the score Gram below this fraction of the
/// largest are treated as its null space. With damping every direction has a
/// bounded weight and nothing is cut.
pub const RELATIVE_EIGEN_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherRoute {
    JacobianProducts,
    TruncatedSvd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FisherKernelConfig {
    pub route: FisherRoute,
    /// Upper bound on `δ`; the rank used is `min(|Θ|, n, rank_cap)`.
    pub rank_cap: usize,
    /// `λ` in `(G + λI)⁻¹`.
    pub damping: f64,
    /// CG settings for the Jacobian-product route (its `damping` is ignored).
    pub cg: CgConfig,
    pub rsvd: RsvdConfig,
}

impl Default for FisherKernelConfig {
    fn default() -> Self {
        Self {
            route: FisherRoute::TruncatedSvd,
            rank_cap: 512,
            damping: 0.0,
            cg: CgConfig::undamped(200, 1e-10),
            rsvd: RsvdConfig {
                power_iters: 1,
                ..RsvdConfig::default()
            },
        }
    }
}

/// Top `rank` eigenpairs `(ν_i, h_i)` of the score Gram `FᵀF`, where
/// `F = U` on the sample side (`Uᵀ U`, `n x n`) and `F = Uᵀ` on the
/// parameter side (`U Uᵀ`). Also returns the sample-side images: `h_i`
/// itself on the sample side, `Uᵀ h_i` (norm `√ν_i`) on the parameter side.
///
/// The sketch is taken through `F` directly, so each power iteration costs
/// two GEMMs and the projected matrix is `(FQ)ᵀ(FQ)`.
fn score_gram_eigen(
    u: &DMatrix<f64>,
    sample_side: bool,
    rank: usize,
    cfg: &RsvdConfig,
    rng: &mut Rng,
) -> Result<(TruncatedSpectrum, DMatrix<f64>)> {
    let (p, n) = u.shape();
    let (dim, rows) = if sample_side { (n, p) } else { (p, n) };
    let f_mul = |x: &DMatrix<f64>| if sample_side { u * x } else { at_mul(u, x) };
    let ft_mul = |y: &DMatrix<f64>| if sample_side { at_mul(u, y) } else { u * y };
    let sketch = (rank + cfg.oversample).min(dim);
    let (spectrum, images) = if rank == dim || sketch == dim {
        let gram = if sample_side { at_mul(u, u) } else { u * u.transpose() };
        let spectrum = dense_top_eigen(&gram, rank);
        let images = if sample_side {
            spectrum.vectors.clone()
        } else {
            at_mul(u, &spectrum.vectors)
        };
        (spectrum, images)
    } else {
        let omega = DMatrix::from_fn(rows, sketch, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut q = ft_mul(&omega).qr().q();
        for _ in 0..cfg.power_iters {
            q = ft_mul(&f_mul(&q)).qr().q();
        }
        let b = f_mul(&q);
        let small = dense_top_eigen(&at_mul(&b, &b), rank);
        let vectors = &q * &small.vectors;
        let images = if sample_side { vectors.clone() } else { b * &small.vectors };
        (
            TruncatedSpectrum {
                vectors,
                values: small.values,
            },
            images,
        )
    };
    if images.iter().chain(spectrum.values.iter()).all(|v| v.is_finite()) {
        Ok((spectrum, images))
    } else {
        Err(Error::NumericalBreakdown("non-finite score Gram spectrum".into()))
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Products {
        fisher: FisherOperator,
        cg: CgConfig,
    },
    Factored {
        /// `n x k`, orthogonal columns.
        r: DMatrix<f64>,
        weights: DVector<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct FisherKernelOperator {
    n: usize,
    repr: Repr,
}

impl FisherKernelOperator {
    pub fn build(scores: Arc<ScoreMatrix>, cfg: &FisherKernelConfig, rng: &mut Rng) -> Result<Self> {
        let n = scores.n();
        match cfg.route {
            FisherRoute::JacobianProducts => Ok(Self {
                n,
                repr: Repr::Products {
                    fisher: FisherOperator::new(scores),
                    cg: CgConfig {
                        damping: cfg.damping,
                        ..cfg.cg
                    },
                },
            }),
            FisherRoute::TruncatedSvd => {
                Self::from_dense_scores(scores.dense(), cfg, rng)
            }
        }
    }

    /// Truncated-SVD route from an explicit `|Θ| x n` score matrix.
    pub fn from_dense_scores(u: DMatrix<f64>, cfg: &FisherKernelConfig, rng: &mut Rng) -> Result<Self> {
        let (p, n) = u.shape();
        let rank = p.min(n).min(cfg.rank_cap.max(1));
        let (spectrum, images) = score_gram_eigen(&u, p > n, rank, &cfg.rsvd, rng)?;
        let top = spectrum.values.get(0).copied().unwrap_or(0.0);
        let cutoff = if cfg.damping > 0.0 { 0.0 } else { RELATIVE_EIGEN_CUTOFF * top };
        let keep = spectrum
            .values
            .iter()
            .take_while(|&&v| v > cutoff && v > 0.0)
            .count();
        let r = images.columns(0, keep).into_owned();
        let nf = n as f64;
        // Parameter-side images have norm √ν; weighting them by n / (ν + nλ)
        // instead of normalising avoids dividing by tiny singular values.
        let weights = DVector::from_fn(keep, |i, _| {
            let s2 = spectrum.values[i];
            if p <= n {
                nf / (s2 + nf * cfg.damping)
            } else {
                nf * s2 / (s2 + nf * cfg.damping)
            }
        });
        Ok(Self {
            n,
            repr: Repr::Factored { r, weights },
        })
    }

    /// Rank of the factored form, `None` for the Jacobian-product route.
    pub fn rank(&self) -> Option<usize> {
        match &self.repr {
            Repr::Factored { weights, .. } => Some(weights.len()),
            Repr::Products { .. } => None,
        }
    }

    /// Dense `K_f` restricted to `indices`.
    pub fn dense_submatrix(&self, indices: &[usize]) -> Result<DMatrix<f64>> {
        match &self.repr {
            Repr::Factored { r, weights } => {
                let rs = DMatrix::from_fn(indices.len(), r.ncols(), |i, k| r[(indices[i], k)]);
                let mut scaled = rs.clone();
                for (k, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= weights[k];
                }
                Ok(&scaled * rs.transpose())
            }
            Repr::Products { .. } => {
                let m = indices.len();
                let mut out = DMatrix::zeros(m, m);
                for (j, &idx) in indices.iter().enumerate() {
                    let mut e = DVector::zeros(self.n);
                    e[idx] = 1.0;
                    let col = self.apply(&e)?;
                    for (i, &ii) in indices.iter().enumerate() {
                        out[(i, j)] = col[ii];
                    }
                }
                Ok((&out + out.transpose()) * 0.5)
            }
        }
    }

    /// Wraps an existing factored form; used by oracles and tests.
    pub fn as_dense_operator(&self) -> Result<DenseOperator> {
        let all: Vec<usize> = (0..self.n).collect();
        DenseOperator::new(self.dense_submatrix(&all)?)
    }
}

impl LinearOperator for FisherKernelOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("FisherKernelOperator::apply", self.n, v.len())?;
        match &self.repr {
            Repr::Products { fisher, cg } => {
                let scores = fisher.scores();
                let rhs = scores.vjp(v)?;
                let x = cg_solve(fisher, &rhs, 0.0, cg)?;
                scores.jvp(&x.x)
            }
            Repr::Factored { r, weights } => {
                let proj = r.tr_mul(v).component_mul(weights);
                Ok(r * proj)
            }
        }
    }

    fn description(&self) -> String {
        match &self.repr {
            Repr::Products { .. } => format!("Fisher kernel via Jacobian products (n={})", self.n),
            Repr::Factored { weights, .. } => {
                format!("Fisher kernel rank {} (n={})", weights.len(), self.n)
            }
        }
    }
}
