use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Leading eigenpairs `{h_i, ν_i}` of a symmetric PSD operator.
#[derive(Debug, Clone)]
pub struct TruncatedSpectrum {
    /// `dim x rank`, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Non-increasing, non-negative.
    pub values: DVector<f64>,
}

impl TruncatedSpectrum {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn smallest(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `Σ_i h_i c_i h_iᵀ x` for per-pair coefficients `c`.
    pub fn apply_projected(&self, coeffs: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let proj = self.vectors.tr_mul(x);
        &self.vectors * proj.component_mul(coeffs)
    }

    /// Keeps the leading `rank` pairs.
    pub fn truncate(&self, rank: usize) -> TruncatedSpectrum {
        let rank = rank.min(self.rank());
        TruncatedSpectrum {
            vectors: self.vectors.columns(0, rank).into_owned(),
            values: self.values.rows(0, rank).into_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RsvdConfig {
    pub oversample: usize,
    pub power_iters: usize,
}

impl Default for RsvdConfig {
    fn default() -> Self {
        Self {
            oversample: 10,
            power_iters: 2,
        }
    }
}

/// Top `rank` eigenpairs of a symmetric PSD matrix, sorted non-increasing.
pub fn dense_top_eigen(matrix: &DMatrix<f64>, rank: usize) -> TruncatedSpectrum {
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    sorted_pairs(&eig.eigenvectors, &eig.eigenvalues, rank)
}

fn sorted_pairs(vectors: &DMatrix<f64>, values: &DVector<f64>, rank: usize) -> TruncatedSpectrum {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let rank = rank.min(order.len());
    let mut out_vecs = DMatrix::zeros(vectors.nrows(), rank);
    let mut out_vals = DVector::zeros(rank);
    for (k, &idx) in order.iter().take(rank).enumerate() {
        out_vecs.set_column(k, &vectors.column(idx));
        out_vals[k] = values[idx].max(0.0);
    }
    TruncatedSpectrum {
        vectors: out_vecs,
        values: out_vals,
    }
}

/// Randomized range finder with power iterations for symmetric PSD operators.
///
/// The sketch holds `rank + oversample` columns. When that reaches the
/// operator dimension the sketch would span everything anyway, so the operator
/// is expanded and decomposed exactly instead.
pub fn randomized_svd(
    op: &dyn LinearOperator,
    rank: usize,
    cfg: &RsvdConfig,
    rng: &mut Rng,
) -> Result<TruncatedSpectrum> {
    let dim = op.dim();
    if rank == 0 || rank > dim {
        return Err(Error::Dimension {
            context: "randomized_svd rank",
            expected: dim,
            got: rank,
        });
    }
    let sketch = (rank + cfg.oversample).min(dim);
    if sketch == dim {
        let full = op.apply_block(&DMatrix::identity(dim, dim))?;
        check_finite(&full)?;
        return Ok(dense_top_eigen(&full, rank));
    }

    let omega = DMatrix::from_fn(dim, sketch, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut y = op.apply_block(&omega)?;
    check_finite(&y)?;
    let mut q = y.qr().q();
    for _ in 0..cfg.power_iters {
        y = op.apply_block(&q)?;
        check_finite(&y)?;
        q = y.qr().q();
    }
    let aq = op.apply_block(&q)?;
    check_finite(&aq)?;
    let b = super::at_mul(&q, &aq);
    let small = dense_top_eigen(&b, rank);
    Ok(TruncatedSpectrum {
        vectors: &q * small.vectors,
        values: small.values,
    })
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBreakdown(
            "non-finite operator product in randomized SVD".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseOperator, DiagonalOperator};

    #[test]
    fn diagonal_spectrum() {
        let op = DiagonalOperator {
            diagonal: DVector::from_vec(vec![5.0, 3.0, 1.0]),
        };
        let mut rng = crate::rng::seeded(1);
        let s = randomized_svd(&op, 2, &RsvdConfig::default(), &mut rng).unwrap();
        assert!((s.values[0] - 5.0).abs() < 1e-12);
        assert!((s.values[1] - 3.0).abs() < 1e-12);
        assert!((s.vectors[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((s.vectors[(1, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constructed_rank_two() {
        let dim = 40;
        let mut u = DVector::zeros(dim);
        let mut v = DVector::zeros(dim);
        for i in 0..dim {
            u[i] = ((i as f64) * 0.3).sin();
            v[i] = ((i as f64) * 0.7).cos();
        }
        u.normalize_mut();
        v -= &u * u.dot(&v);
        v.normalize_mut();
        let m = &u * u.transpose() + &v * v.transpose() * 0.5;
        let op = DenseOperator::new(m).unwrap();
        let mut rng = crate::rng::seeded(2);
        let s = randomized_svd(&op, 2, &RsvdConfig::default(), &mut rng).unwrap();
        assert!((s.values[0] - 1.0).abs() < 1e-10);
        assert!((s.values[1] - 0.5).abs() < 1e-10);
        let gram = s.vectors.tr_mul(&s.vectors);
        assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn rank_bounds() {
        let op = DiagonalOperator {
            diagonal: DVector::from_vec(vec![1.0, 2.0]),
        };
        let mut rng = crate::rng::seeded(3);
        assert!(randomized_svd(&op, 0, &RsvdConfig::default(), &mut rng).is_err());
        assert!(randomized_svd(&op, 3, &RsvdConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn projected_apply() {
        let s = TruncatedSpectrum {
            vectors: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
            values: DVector::from_vec(vec![2.0]),
        };
        let y = s.apply_projected(&DVector::from_vec(vec![3.0]), &DVector::from_vec(vec![1.0, 1.0, 1.0]));
        assert_eq!(y, DVector::from_vec(vec![3.0, 0.0, 0.0]));
    }
}
