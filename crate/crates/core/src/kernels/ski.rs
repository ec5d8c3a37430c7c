//! Structured kernel interpolation for the additive state kernel.
//!
//! Each feature dimension gets its own regular grid of `m` points. Samples are
//! interpolated onto the grid with cubic convolution (Keys, `a = −1/2`), four
//! weights per sample, and the grid Gram of a stationary 1-d RBF is Toeplitz:
//!
//! ```text
//! K̂_s = Σ_d W_d T_d W_dᵀ
//! ```
//!
//! so one product costs `O(n + m log m)` per dimension.

use nalgebra::{DMatrix, DVector};

use super::state::DeepRbfKernel;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{LinearOperator, ToeplitzSpec};

const KEYS_A: f64 = -0.5;

/// Evenly spaced 1-d grid `lo + k h`, `k = 0..m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1d {
    pub lo: f64,
    pub spacing: f64,
    pub size: usize,
}

impl Grid1d {
    /// Grid over `[min − 3h, max + 3h]`, so `h = (max − min) / (m − 7)`.
    /// Returns `None` for a zero-span dimension.
    pub fn covering(min: f64, max: f64, size: usize) -> Option<Self> {
        let span = max - min;
        if !(span > 1e-12 * (1.0 + min.abs().max(max.abs()))) {
            return None;
        }
        let spacing = span / (size as f64 - 7.0);
        Some(Self {
            lo: min - 3.0 * spacing,
            spacing,
            size,
        })
    }

    pub fn point(&self, k: usize) -> f64 {
        self.lo + k as f64 * self.spacing
    }

    /// Four grid indices and cubic-convolution weights for `x`.
    pub fn interpolate(&self, x: f64) -> ([usize; 4], [f64; 4]) {
        let u = (x - self.lo) / self.spacing;
        let base = (u.floor() as i64).clamp(1, self.size as i64 - 3);
        let t = u - base as f64;
        let idx = [
            base as usize - 1,
            base as usize,
            base as usize + 1,
            base as usize + 2,
        ];
        let w = [
            keys_weight(t + 1.0),
            keys_weight(t),
            keys_weight(1.0 - t),
            keys_weight(2.0 - t),
        ];
        (idx, w)
    }
}

/// Keys cubic convolution kernel.
pub fn keys_weight(s: f64) -> f64 {
    let s = s.abs();
    let a = KEYS_A;
    if s <= 1.0 {
        (a + 2.0) * s * s * s - (a + 3.0) * s * s + 1.0
    } else if s < 2.0 {
        a * s * s * s - 5.0 * a * s * s + 8.0 * a * s - 4.0 * a
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
struct SkiDimension {
    grid: Grid1d,
    toeplitz: ToeplitzSpec,
    indices: Vec<[usize; 4]>,
    weights: Vec<[f64; 4]>,
}

/// `K̂_s` as a matrix-free operator over one batch.
#[derive(Debug, Clone)]
pub struct SkiOperator {
    n: usize,
    dims: Vec<SkiDimension>,
    /// Zero-span dimensions contribute `sf` to every entry.
    constant_dims: usize,
    signal_scale: f64,
}

impl SkiOperator {
    /// Builds grids covering the batch features (`feature_dim x n`).
    pub fn build(kernel: &DeepRbfKernel, features: &DMatrix<f64>, grid_size: usize) -> Result<Self> {
        if grid_size < 8 {
            return Err(Error::Config(format!("SKI grid size {grid_size} is below 8")));
        }
        let grids = (0..features.nrows())
            .map(|d| {
                let row = features.row(d);
                Grid1d::covering(row.min(), row.max(), grid_size)
            })
            .collect::<Vec<_>>();
        Self::with_grids(kernel, features, &grids)
    }

    /// Uses the given grids; `None` marks a constant dimension.
    pub fn with_grids(
        kernel: &DeepRbfKernel,
        features: &DMatrix<f64>,
        grids: &[Option<Grid1d>],
    ) -> Result<Self> {
        check_dim("SKI feature dim", kernel.feature_dim(), features.nrows())?;
        check_dim("SKI grids", features.nrows(), grids.len())?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite features in SKI build".into()));
        }
        let sf = kernel.signal_scale();
        let ells = kernel.lengthscales();
        let n = features.ncols();
        let mut dims = Vec::new();
        let mut constant_dims = 0;
        for (d, grid) in grids.iter().enumerate() {
            let Some(grid) = *grid else {
                constant_dims += 1;
                continue;
            };
            let ell = ells[d];
            let col: Vec<f64> = (0..grid.size)
                .map(|k| {
                    let r = k as f64 * grid.spacing;
                    sf * (-r * r / (2.0 * ell * ell)).exp()
                })
                .collect();
            let mut indices = Vec::with_capacity(n);
            let mut weights = Vec::with_capacity(n);
            for i in 0..n {
                let (idx, w) = grid.interpolate(features[(d, i)]);
                indices.push(idx);
                weights.push(w);
            }
            dims.push(SkiDimension {
                grid,
                toeplitz: ToeplitzSpec::new(col)?,
                indices,
                weights,
            });
        }
        Ok(Self {
            n,
            dims,
            constant_dims,
            signal_scale: sf,
        })
    }

    pub fn grids(&self) -> Vec<Grid1d> {
        self.dims.iter().map(|d| d.grid).collect()
    }

    pub fn constant_dims(&self) -> usize {
        self.constant_dims
    }

    /// Sparse interpolation rows of interpolated dimension `d`.
    pub fn interpolation(&self, d: usize) -> (&[[usize; 4]], &[[f64; 4]]) {
        (&self.dims[d].indices, &self.dims[d].weights)
    }

    /// Grid Toeplitz generator of interpolated dimension `d`.
    pub fn grid_gram(&self, d: usize) -> &ToeplitzSpec {
        &self.dims[d].toeplitz
    }
}

impl LinearOperator for SkiOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("SkiOperator::apply", self.n, v.len())?;
        let mut out = DVector::zeros(self.n);
        if self.constant_dims > 0 {
            out.fill(self.constant_dims as f64 * self.signal_scale * v.sum());
        }
        for dim in &self.dims {
            let m = dim.grid.size;
            let mut on_grid = vec![0.0; m];
            for (i, (idx, w)) in dim.indices.iter().zip(&dim.weights).enumerate() {
                for k in 0..4 {
                    on_grid[idx[k]] += w[k] * v[i];
                }
            }
            let mut mixed = vec![0.0; m];
            dim.toeplitz.mvm_into(&on_grid, &mut mixed)?;
            for (i, (idx, w)) in dim.indices.iter().zip(&dim.weights).enumerate() {
                out[i] += (0..4).map(|k| w[k] * mixed[idx[k]]).sum::<f64>();
            }
        }
        Ok(out)
    }

    fn description(&self) -> String {
        format!(
            "SKI ({} samples, {} grid dims, {} constant)",
            self.n,
            self.dims.len(),
            self.constant_dims
        )
    }
}
