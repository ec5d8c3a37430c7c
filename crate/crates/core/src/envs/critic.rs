use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::kernels::DeepRbfKernel;
use crate::optim::Adam;

/// Linear value head `V(s) = wᵀ φ(s) + b` on the kernel's state features.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticHead {
    pub weights: DVector<f64>,
    pub bias: f64,
}

/// Gradients of `½ mean (V − y)²`.
#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub loss: f64,
    /// `[w, b]`.
    pub head: DVector<f64>,
    /// With respect to the feature-map parameters.
    pub features: DVector<f64>,
}

impl CriticHead {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            weights: DVector::zeros(feature_dim),
            bias: 0.0,
        }
    }

    pub fn params(&self) -> DVector<f64> {
        let mut v = self.weights.as_slice().to_vec();
        v.push(self.bias);
        DVector::from_vec(v)
    }

    pub fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        check_dim("CriticHead::set_params", self.weights.len() + 1, p.len())?;
        let d = self.weights.len();
        self.weights.copy_from_slice(&p.as_slice()[..d]);
        self.bias = p[d];
        Ok(())
    }

    /// Predictions for `feature_dim x n` features.
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("CriticHead::predict", self.weights.len(), features.nrows())?;
        Ok(features.tr_mul(&self.weights).add_scalar(self.bias))
    }

    pub fn values(&self, kernel: &DeepRbfKernel, states: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.predict(&kernel.featurize(states)?.values)
    }
}

pub fn critic_loss_and_grads(
    critic: &CriticHead,
    kernel: &DeepRbfKernel,
    states: &DMatrix<f64>,
    targets: &DVector<f64>,
) -> Result<CriticGrads> {
    check_dim("critic targets", states.nrows(), targets.len())?;
    let feats = kernel.featurize(states)?;
    let pred = critic.predict(&feats.values)?;
    let n = targets.len() as f64;
    let resid = (pred - targets) / n;
    let loss = 0.5 * n * resid.norm_squared();
    let gw = &feats.values * &resid;
    let mut head = gw.as_slice().to_vec();
    head.push(resid.sum());
    let dfeat = &critic.weights * resid.transpose();
    let features = kernel.feature_backward(&feats, &dfeat)?;
    Ok(CriticGrads {
        loss,
        head: DVector::from_vec(head),
        features,
    })
}

/// One Adam descent step on the value loss for the head. Returns the
/// gradients so that the caller can fold the feature part into the shared
/// feature update.
pub fn critic_update(
    critic: &mut CriticHead,
    kernel: &DeepRbfKernel,
    states: &DMatrix<f64>,
    targets: &DVector<f64>,
    optimizer: &mut Adam,
) -> Result<CriticGrads> {
    let grads = critic_loss_and_grads(critic, kernel, states, targets)?;
    let mut p = critic.params();
    optimizer.ascend(&mut p, &(-&grads.head))?;
    critic.set_params(&p)?;
    Ok(grads)
}
