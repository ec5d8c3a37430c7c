use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Largest operator that [`dense_materialize`] will expand by default.
pub const DEFAULT_ORACLE_CAP: usize = 2048;

/// A square operator known only through its matrix-vector product.
///
/// Implementations are immutable once built, so products may be issued from
/// several threads at once.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    /// `A x`. Implementations must reject inputs whose length is not `dim()`.
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `A X` for a block of column vectors.
    fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("apply_block rows", self.dim(), x.nrows())?;
        let mut out = DMatrix::zeros(self.dim(), x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let y = self.apply(&col.into_owned())?;
            out.set_column(j, &y);
        }
        Ok(out)
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn description(&self) -> String;
}

impl<T: LinearOperator + ?Sized> LinearOperator for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).apply(x)
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).apply_block(x)
    }
    fn is_symmetric(&self) -> bool {
        (**self).is_symmetric()
    }
    fn description(&self) -> String {
        (**self).description()
    }
}

/// Expands an operator column by column.
pub fn dense_materialize(op: &dyn LinearOperator, cap: usize) -> Result<DMatrix<f64>> {
    let dim = op.dim();
    if dim > cap {
        return Err(Error::OracleCapExceeded { dim, cap });
    }
    op.apply_block(&DMatrix::identity(dim, dim))
}

#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    symmetric: bool,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        check_dim("dense operator (square)", matrix.nrows(), matrix.ncols())?;
        let symmetric = matrix.relative_eq(&matrix.transpose(), 1e-12, 1e-12);
        Ok(Self { matrix, symmetric })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("dense operator", self.dim(), x.len())?;
        Ok(&self.matrix * x)
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("dense operator block", self.dim(), x.nrows())?;
        Ok(&self.matrix * x)
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn description(&self) -> String {
        format!("dense {}x{}", self.dim(), self.dim())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator {
    pub dim: usize,
}

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("identity operator", self.dim, x.len())?;
        Ok(x.clone())
    }
    fn description(&self) -> String {
        format!("identity {}", self.dim)
    }
}

#[derive(Debug, Clone)]
pub struct DiagonalOperator {
    pub diagonal: DVector<f64>,
}

impl LinearOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.diagonal.len()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("diagonal operator", self.dim(), x.len())?;
        Ok(self.diagonal.component_mul(x))
    }
    fn description(&self) -> String {
        format!("diagonal {}", self.dim())
    }
}

/// `Σ_k w_k A_k`. Terms with a zero weight are never evaluated.
#[derive(Clone)]
pub struct SumOperator {
    dim: usize,
    terms: Vec<(f64, Arc<dyn LinearOperator>)>,
}

impl SumOperator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, weight: f64, op: Arc<dyn LinearOperator>) -> Result<Self> {
        check_dim("sum operator term", self.dim, op.dim())?;
        self.terms.push((weight, op));
        Ok(self)
    }

    pub fn terms(&self) -> &[(f64, Arc<dyn LinearOperator>)] {
        &self.terms
    }
}

impl LinearOperator for SumOperator {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("sum operator", self.dim, x.len())?;
        let mut out = DVector::zeros(self.dim);
        for (w, op) in &self.terms {
            if *w != 0.0 {
                out.axpy(*w, &op.apply(x)?, 1.0);
            }
        }
        Ok(out)
    }
    fn is_symmetric(&self) -> bool {
        self.terms.iter().all(|(_, op)| op.is_symmetric())
    }
    fn description(&self) -> String {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(w, op)| format!("{w}*[{}]", op.description()))
            .collect();
        parts.join(" + ")
    }
}

/// `A + s I`.
#[derive(Clone)]
pub struct ShiftedOperator {
    pub inner: Arc<dyn LinearOperator>,
    pub shift: f64,
}

impl LinearOperator for ShiftedOperator {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut y = self.inner.apply(x)?;
        y.axpy(self.shift, x, 1.0);
        Ok(y)
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
    fn description(&self) -> String {
        format!("[{}] + {}*I", self.inner.description(), self.shift)
    }
}

type MvmFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;

/// Operator defined by a closure.
pub struct FnOperator {
    dim: usize,
    symmetric: bool,
    label: String,
    mvm: Box<MvmFn>,
}

impl FnOperator {
    pub fn new<F>(dim: usize, label: impl Into<String>, mvm: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Self {
            dim,
            symmetric: true,
            label: label.into(),
            mvm: Box::new(mvm),
        }
    }

    pub fn non_symmetric(mut self) -> Self {
        self.symmetric = false;
        self
    }
}

impl LinearOperator for FnOperator {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("fn operator input", self.dim, x.len())?;
        let y = (self.mvm)(x)?;
        check_dim("fn operator output", self.dim, y.len())?;
        Ok(y)
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
    fn description(&self) -> String {
        self.label.clone()
    }
}
