//! Additive RBF kernel on learned state features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::policy::{Activation, ForwardCache, Mlp};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mlp,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub lengthscale: f64,
    pub signal_scale: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Mlp,
            hidden: vec![64, 48],
            output_dim: 10,
            lengthscale: 1.0,
            signal_scale: 1.0,
        }
    }
}

/// State feature extractor `φ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Identity { dim: usize },
    Network(Mlp),
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Network(net) => net.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Network(net) => net.output_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            FeatureMap::Identity { .. } => 0,
            FeatureMap::Network(net) => net.num_params(),
        }
    }
}

/// Features of a batch together with what is needed to backpropagate
/// through them.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    /// `feature_dim x n`.
    pub values: DMatrix<f64>,
    cache: Option<ForwardCache>,
}

/// `k_s(s, s') = Σ_d sf · exp(−(φ_d(s) − φ_d(s'))² / (2 ℓ_d²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepRbfKernel {
    pub features: FeatureMap,
    pub log_lengthscales: DVector<f64>,
    pub log_signal_scale: f64,
}

impl DeepRbfKernel {
    pub fn new(state_dim: usize, cfg: &FeatureConfig, rng: &mut Rng) -> Result<Self> {
        if !(cfg.lengthscale > 0.0 && cfg.signal_scale > 0.0) {
            return Err(Error::Config(
                "kernel lengthscale and signal scale must be positive".into(),
            ));
        }
        let features = match cfg.kind {
            FeatureKind::Identity => FeatureMap::Identity { dim: state_dim },
            FeatureKind::Mlp => {
                if cfg.output_dim == 0 {
                    return Err(Error::Config("feature output_dim must be positive".into()));
                }
                let mut sizes = vec![state_dim];
                sizes.extend_from_slice(&cfg.hidden);
                sizes.push(cfg.output_dim);
                FeatureMap::Network(Mlp::orthogonal(&sizes, Activation::Tanh, 1.0, 1.0, rng))
            }
        };
        let d = features.output_dim();
        Ok(Self {
            features,
            log_lengthscales: DVector::from_element(d, cfg.lengthscale.ln()),
            log_signal_scale: cfg.signal_scale.ln(),
        })
    }

    pub fn with_identity(dim: usize, lengthscales: &[f64], signal_scale: f64) -> Self {
        assert_eq!(lengthscales.len(), dim);
        Self {
            features: FeatureMap::Identity { dim },
            log_lengthscales: DVector::from_iterator(dim, lengthscales.iter().map(|l| l.ln())),
            log_signal_scale: signal_scale.ln(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.features.output_dim()
    }

    pub fn signal_scale(&self) -> f64 {
        self.log_signal_scale.exp()
    }

    pub fn lengthscales(&self) -> DVector<f64> {
        self.log_lengthscales.map(f64::exp)
    }

    /// `[feature params, log ℓ, log sf]`.
    pub fn num_params(&self) -> usize {
        self.features.num_params() + self.feature_dim() + 1
    }

    pub fn params(&self) -> DVector<f64> {
        let mut v = match &self.features {
            FeatureMap::Identity { .. } => Vec::new(),
            FeatureMap::Network(net) => net.params().as_slice().to_vec(),
        };
        v.extend(self.log_lengthscales.iter());
        v.push(self.log_signal_scale);
        DVector::from_vec(v)
    }

    pub fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        check_dim("DeepRbfKernel::set_params", self.num_params(), p.len())?;
        let split = self.features.num_params();
        if let FeatureMap::Network(net) = &mut self.features {
            net.set_params(&p.as_slice()[..split])?;
        }
        let d = self.feature_dim();
        self.log_lengthscales
            .copy_from_slice(&p.as_slice()[split..split + d]);
        self.log_signal_scale = p[split + d];
        Ok(())
    }

    /// Features of an `n x state_dim` batch.
    pub fn featurize(&self, states: &DMatrix<f64>) -> Result<FeatureBatch> {
        check_dim("featurize state dim", self.features.input_dim(), states.ncols())?;
        match &self.features {
            FeatureMap::Identity { .. } => Ok(FeatureBatch {
                values: states.transpose(),
                cache: None,
            }),
            FeatureMap::Network(net) => {
                let cache = net.forward(states.transpose())?;
                Ok(FeatureBatch {
                    values: cache.output().clone(),
                    cache: Some(cache),
                })
            }
        }
    }

    /// Gradient with respect to the feature-map parameters of
    /// `Σ_i ⟨dfeat_i, φ(s_i)⟩`.
    pub fn feature_backward(
        &self,
        batch: &FeatureBatch,
        dfeat: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        match (&self.features, &batch.cache) {
            (FeatureMap::Identity { .. }, _) => Ok(DVector::zeros(0)),
            (FeatureMap::Network(net), Some(cache)) => net.backward(cache, dfeat),
            (FeatureMap::Network(_), None) => Err(Error::Input(
                "feature batch was not produced by this network".into(),
            )),
        }
    }

    pub fn eval(&self, s1: &[f64], s2: &[f64]) -> Result<f64> {
        if s1.iter().chain(s2).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite state".into()));
        }
        let f1 = self.featurize(&DMatrix::from_row_slice(1, s1.len(), s1))?;
        let f2 = self.featurize(&DMatrix::from_row_slice(1, s2.len(), s2))?;
        Ok(self.eval_features(&f1.values.column(0).into_owned(), &f2.values.column(0).into_owned()))
    }

    pub fn eval_features(&self, f1: &DVector<f64>, f2: &DVector<f64>) -> f64 {
        let sf = self.signal_scale();
        let mut k = 0.0;
        for d in 0..self.feature_dim() {
            let ell = self.log_lengthscales[d].exp();
            let diff = f1[d] - f2[d];
            k += sf * (-diff * diff / (2.0 * ell * ell)).exp();
        }
        k
    }

    /// Dense Gram matrix on precomputed features (`feature_dim x n`).
    pub fn gram_from_features(&self, feats: &DMatrix<f64>) -> DMatrix<f64> {
        let n = feats.ncols();
        let sf = self.signal_scale();
        let ells = self.lengthscales();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = sf * self.feature_dim() as f64;
            for j in 0..i {
                let mut v = 0.0;
                for d in 0..self.feature_dim() {
                    let diff = feats[(d, i)] - feats[(d, j)];
                    v += (-diff * diff / (2.0 * ells[d] * ells[d])).exp();
                }
                k[(i, j)] = sf * v;
                k[(j, i)] = sf * v;
            }
        }
        k
    }

    pub fn gram(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.gram_from_features(&self.featurize(states)?.values))
    }
}
