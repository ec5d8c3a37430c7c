use std::sync::Arc;

use nalgebra::DVector;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::LinearOperator;
use crate::error::{check_dim, Error, Result};

/// Symmetric Toeplitz matrix `T[x][y] = first_column[|x − y|]` with a
/// precomputed circulant embedding.
///
/// The embedding length is the next power of two at or above `2m − 1`, which
/// keeps the wrap-around terms of the circulant product out of the first `m`
/// outputs.
#[derive(Clone)]
pub struct ToeplitzSpec {
    first_column: Vec<f64>,
    fft_len: usize,
    eigenvalues: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ToeplitzSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToeplitzSpec")
            .field("m", &self.first_column.len())
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl ToeplitzSpec {
    pub fn new(first_column: Vec<f64>) -> Result<Self> {
        let m = first_column.len();
        if m == 0 {
            return Err(Error::Input("empty Toeplitz generator".into()));
        }
        let fft_len = (2 * m - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);

        let mut circ = vec![Complex64::new(0.0, 0.0); fft_len];
        circ[0] = Complex64::new(first_column[0], 0.0);
        for k in 1..m {
            circ[k] = Complex64::new(first_column[k], 0.0);
            circ[fft_len - k] = Complex64::new(first_column[k], 0.0);
        }
        forward.process(&mut circ);

        Ok(Self {
            first_column,
            fft_len,
            eigenvalues: circ,
            forward,
            inverse,
        })
    }

    pub fn size(&self) -> usize {
        self.first_column.len()
    }

    pub fn first_column(&self) -> &[f64] {
        &self.first_column
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    /// `T v` written into `out`; both slices have length `m`.
    pub fn mvm_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.size();
        check_dim("toeplitz_mvm input", m, v.len())?;
        check_dim("toeplitz_mvm output", m, out.len())?;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (b, &x) in buf.iter_mut().zip(v) {
            b.re = x;
        }
        self.forward.process(&mut buf);
        for (b, e) in buf.iter_mut().zip(&self.eigenvalues) {
            *b *= *e;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.fft_len as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
        Ok(())
    }
}

/// `T v` through the circulant embedding, `O(m log m)`.
pub fn toeplitz_mvm(spec: &ToeplitzSpec, v: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(spec.size());
    spec.mvm_into(v.as_slice(), out.as_mut_slice())?;
    Ok(out)
}

impl LinearOperator for ToeplitzSpec {
    fn dim(&self) -> usize {
        self.size()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        toeplitz_mvm(self, x)
    }
    fn description(&self) -> String {
        format!("toeplitz {} (fft {})", self.size(), self.fft_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dense(col: &[f64]) -> DMatrix<f64> {
        let m = col.len();
        DMatrix::from_fn(m, m, |i, j| col[i.abs_diff(j)])
    }

    #[test]
    fn identity_generator() {
        let spec = ToeplitzSpec::new(vec![1.0, 0.0, 0.0]).unwrap();
        let v = DVector::from_vec(vec![0.5, -2.0, 7.0]);
        assert!((toeplitz_mvm(&spec, &v).unwrap() - v).norm() < 1e-14);
    }

    #[test]
    fn two_by_two_by_hand() {
        let spec = ToeplitzSpec::new(vec![2.0, 1.0]).unwrap();
        let y = toeplitz_mvm(&spec, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((y - DVector::from_vec(vec![3.0, 3.0])).norm() < 1e-14);
    }

    #[test]
    fn embedding_length() {
        assert_eq!(ToeplitzSpec::new(vec![1.0; 1]).unwrap().fft_len(), 1);
        assert_eq!(ToeplitzSpec::new(vec![1.0; 5]).unwrap().fft_len(), 16);
        assert_eq!(ToeplitzSpec::new(vec![1.0; 128]).unwrap().fft_len(), 256);
    }

    #[test]
    fn matches_dense_length_64() {
        let col: Vec<f64> = (0..64).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let v = DVector::from_fn(64, |i, _| ((i * 13 % 7) as f64) - 3.0);
        let spec = ToeplitzSpec::new(col.clone()).unwrap();
        let fast = toeplitz_mvm(&spec, &v).unwrap();
        let slow = dense(&col) * v;
        assert!((fast - slow).abs().max() < 1e-10);
    }

    #[test]
    fn length_mismatch() {
        let spec = ToeplitzSpec::new(vec![1.0, 0.5]).unwrap();
        assert!(matches!(
            toeplitz_mvm(&spec, &DVector::zeros(3)),
            Err(Error::Dimension { .. })
        ));
        assert!(ToeplitzSpec::new(vec![]).is_err());
    }
}
