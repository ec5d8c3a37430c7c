//! Fully connected network with hand-written reverse and forward sweeps.
//!
//! Activations are stored column-per-sample: a batch of `n` inputs is a
//! `width x n` matrix. The flat parameter layout is, per layer, the weight
//! matrix in row-major order followed by the bias.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::at_mul;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            z.apply(|v| *v = v.tanh());
        }
    }

    /// Derivative expressed through the activation output `h`.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    output_activation: Activation,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Per-layer activations of one batch, `outputs[0]` being the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    outputs: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.outputs.last().expect("cache holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.outputs[0].ncols()
    }
}

impl Mlp {
    /// Zero-initialised network. `sizes` lists input, hidden and output widths.
    pub fn zeros(sizes: &[usize], output_activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let weights = sizes
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = sizes[1..].iter().map(|&w| DVector::zeros(w)).collect();
        Self {
            sizes: sizes.to_vec(),
            output_activation,
            weights,
            biases,
        }
    }

    /// Orthogonal weights scaled by `hidden_gain` (last layer `output_gain`),
    /// zero biases.
    pub fn orthogonal(
        sizes: &[usize],
        output_activation: Activation,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut net = Self::zeros(sizes, output_activation);
        let layers = net.weights.len();
        for (l, w) in net.weights.iter_mut().enumerate() {
            let gain = if l + 1 == layers { output_gain } else { hidden_gain };
            *w = orthogonal_matrix(w.nrows(), w.ncols(), rng) * gain;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            Activation::Tanh
        }
    }

    pub fn params(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        DVector::from_vec(out)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("Mlp::set_params", self.num_params(), params.len())?;
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = params[k];
                    k += 1;
                }
            }
            for v in b.iter_mut() {
                *v = params[k];
                k += 1;
            }
        }
        Ok(())
    }

    /// Forward pass over a `input_dim x n` batch.
    pub fn forward(&self, inputs: DMatrix<f64>) -> Result<ForwardCache> {
        check_dim("Mlp::forward", self.input_dim(), inputs.nrows())?;
        let mut outputs = Vec::with_capacity(self.weights.len() + 1);
        outputs.push(inputs);
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * outputs.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            self.activation(l).apply(&mut z);
            outputs.push(z);
        }
        Ok(ForwardCache { outputs })
    }

    /// Single-input convenience wrapper.
    pub fn eval(&self, input: &[f64]) -> Result<DVector<f64>> {
        let cache = self.forward(DMatrix::from_column_slice(input.len(), 1, input))?;
        Ok(cache.output().column(0).into_owned())
    }

    /// Parameter gradient of `Σ_i ⟨dout_i, f(x_i)⟩`.
    pub fn backward(&self, cache: &ForwardCache, dout: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_cotangent(cache, dout)?;
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.num_layers());
        let mut delta = dout.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation(l);
            let h_out = &cache.outputs[l + 1];
            delta.zip_apply(h_out, |d, h| *d *= act.derivative_from_output(h));
            let gw = &delta * cache.outputs[l].transpose();
            let gb = delta.column_sum();
            if l > 0 {
                delta = at_mul(&self.weights[l], &delta);
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut out = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            for r in 0..gw.nrows() {
                out.extend(gw.row(r).iter());
            }
            out.extend(gb.iter());
        }
        Ok(DVector::from_vec(out))
    }

    /// Per-sample parameter gradients as a `num_params x n` matrix; column `i`
    /// is the gradient of `⟨dout_i, f(x_i)⟩`.
    pub fn backward_per_sample(
        &self,
        cache: &ForwardCache,
        dout: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.num_params(), cache.batch_size());
        self.backward_per_sample_into(cache, dout, &mut jac)?;
        Ok(jac)
    }

    /// [`Mlp::backward_per_sample`] written into the leading
    /// `num_params()` rows of `jac` (`n` columns); other rows are untouched.
    pub fn backward_per_sample_into(
        &self,
        cache: &ForwardCache,
        dout: &DMatrix<f64>,
        jac: &mut DMatrix<f64>,
    ) -> Result<()> {
        self.check_cotangent(cache, dout)?;
        let n = cache.batch_size();
        check_dim("backward_per_sample columns", n, jac.ncols())?;
        if jac.nrows() < self.num_params() {
            return Err(Error::Input("backward_per_sample output has too few rows".into()));
        }
        let offsets = self.layer_offsets();
        let mut delta = dout.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation(l);
            delta.zip_apply(&cache.outputs[l + 1], |d, h| {
                *d *= act.derivative_from_output(h)
            });
            let h_in = &cache.outputs[l];
            let (rows, cols) = self.weights[l].shape();
            let base = offsets[l];
            for i in 0..n {
                let mut col = jac.column_mut(i);
                let col = col.as_mut_slice();
                let h = h_in.column(i);
                let h = h.as_slice();
                let d_col = delta.column(i);
                let (weights, biases) = col[base..base + rows * cols + rows].split_at_mut(rows * cols);
                for ((w_row, b), &d) in weights.chunks_exact_mut(cols).zip(biases).zip(d_col.iter()) {
                    for (o, &x) in w_row.iter_mut().zip(h) {
                        *o = d * x;
                    }
                    *b = d;
                }
            }
            if l > 0 {
                delta = at_mul(&self.weights[l], &delta);
            }
        }
        Ok(())
    }

    /// Output tangent `J(x_i) v` for each sample, as an `output_dim x n` matrix.
    pub fn jvp(&self, cache: &ForwardCache, tangent: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("Mlp::jvp", self.num_params(), tangent.len())?;
        let n = cache.batch_size();
        let mut t = DMatrix::<f64>::zeros(self.input_dim(), n);
        let mut k = 0;
        for l in 0..self.num_layers() {
            let (rows, cols) = self.weights[l].shape();
            let dw = DMatrix::from_row_slice(rows, cols, &tangent[k..k + rows * cols]);
            k += rows * cols;
            let db = DVector::from_column_slice(&tangent[k..k + rows]);
            k += rows;
            let mut dz = dw * &cache.outputs[l];
            if l > 0 {
                dz += &self.weights[l] * &t;
            }
            for mut col in dz.column_iter_mut() {
                col += &db;
            }
            let act = self.activation(l);
            dz.zip_apply(&cache.outputs[l + 1], |d, h| {
                *d *= act.derivative_from_output(h)
            });
            t = dz;
        }
        Ok(t)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut k = 0;
        for w in self.sizes.windows(2) {
            offsets.push(k);
            k += w[1] * (w[0] + 1);
        }
        offsets
    }

    fn check_cotangent(&self, cache: &ForwardCache, dout: &DMatrix<f64>) -> Result<()> {
        check_dim("Mlp cotangent rows", self.output_dim(), dout.nrows())?;
        check_dim("Mlp cotangent columns", cache.batch_size(), dout.ncols())
    }
}

/// `rows x cols` matrix with orthonormal rows or columns, whichever is shorter.
pub fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}
