//! Shape-preserving dense + batch-norm transform used inside the coupling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtBlock<T: Real = f64> {
    pub weight: DMatrix<T>,
    pub bias: DVector<T>,
    pub bn_gamma: DVector<T>,
    pub bn_beta: DVector<T>,
    pub bn_mean: DVector<T>,
    pub bn_var: DVector<T>,
    pub bn_eps: T,
    pub bn_momentum: T,
    pub activation: Activation,
    pub training: bool,
}

fn cast_scalar<T: Real, U: Real>(x: T) -> U {
    nalgebra::convert::<f64, U>(nalgebra::try_convert::<T, f64>(x).unwrap_or(f64::NAN))
}

fn cast_vec<T: Real, U: Real>(v: &DVector<T>) -> DVector<U> {
    v.map(cast_scalar)
}

impl<T: Real> EtBlock<T> {
    pub fn units(&self) -> usize {
        self.bias.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len() + self.bn_gamma.len() + self.bn_beta.len()
    }

    /// Per-row affine map that eval-mode batch norm reduces to.
    fn eval_affine(&self) -> (DVector<T>, DVector<T>) {
        let scale = self
            .bn_gamma
            .zip_map(&self.bn_var, |g, v| g / (v + self.bn_eps).sqrt());
        let shift = DVector::from_fn(self.units(), |i, _| {
            self.bn_beta[i] + (self.bias[i] - self.bn_mean[i]) * scale[i]
        });
        (scale, shift)
    }

    fn activate(&self, mut h: DMatrix<T>) -> DMatrix<T> {
        if self.activation == Activation::Tanh {
            h.apply(|v| *v = v.tanh());
        }
        h
    }

    /// Applies the block to each column of `x`. Batch statistics are taken
    /// over the columns in training mode; running statistics otherwise.
    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.nrows() != self.units() {
            return Err(Error::DimMismatch(format!(
                "ET block of width {} applied to {} rows",
                self.units(),
                x.nrows()
            )));
        }
        let mut z = &self.weight * x;
        if self.training {
            let n: T = nalgebra::convert(x.ncols() as f64);
            for i in 0..z.nrows() {
                let mut row = z.row_mut(i);
                row.add_scalar_mut(self.bias[i]);
                let mean = row.sum() / n;
                let var = row
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .fold(T::zero(), |a, b| a + b)
                    / n;
                let inv_std = T::one() / (var + self.bn_eps).sqrt();
                row.apply(|v| *v = (*v - mean) * inv_std * self.bn_gamma[i] + self.bn_beta[i]);
            }
        } else {
            let (scale, shift) = self.eval_affine();
            for i in 0..z.nrows() {
                z.row_mut(i).apply(|v| *v = *v * scale[i] + shift[i]);
            }
        }
        Ok(self.activate(z))
    }

    /// Single-vector form of [`EtBlock::apply`].
    pub fn et_apply(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let out = self.apply(&m)?;
        Ok(DVector::from_column_slice(out.as_slice()))
    }

    pub fn cast<U: Real>(&self) -> EtBlock<U> {
        EtBlock {
            weight: self.weight.map(cast_scalar),
            bias: cast_vec(&self.bias),
            bn_gamma: cast_vec(&self.bn_gamma),
            bn_beta: cast_vec(&self.bn_beta),
            bn_mean: cast_vec(&self.bn_mean),
            bn_var: cast_vec(&self.bn_var),
            bn_eps: cast_scalar(self.bn_eps),
            bn_momentum: cast_scalar(self.bn_momentum),
            activation: self.activation,
            training: self.training,
        }
    }
}

/// Gradients of one ET block's trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EtGradients {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
}

impl EtGradients {
    pub fn zeros(units: usize) -> Self {
        Self {
            weight: DMatrix::zeros(units, units),
            bias: DVector::zeros(units),
            gamma: DVector::zeros(units),
            beta: DVector::zeros(units),
        }
    }

    pub fn add_assign(&mut self, other: &EtGradients) {
        self.weight += &other.weight;
        self.bias += &other.bias;
        self.gamma += &other.gamma;
        self.beta += &other.beta;
    }

    pub fn scale(&mut self, s: f64) {
        self.weight *= s;
        self.bias *= s;
        self.gamma *= s;
        self.beta *= s;
    }

    pub fn squared_norm(&self) -> f64 {
        self.weight.norm_squared()
            + self.bias.norm_squared()
            + self.gamma.norm_squared()
            + self.beta.norm_squared()
    }
}

/// Intermediates kept by [`EtBlock::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct EtCache {
    input: DMatrix<f64>,
    x_hat: DMatrix<f64>,
    inv_std: DVector<f64>,
    output: DMatrix<f64>,
    batch_stats: bool,
    pub(crate) batch_mean: DVector<f64>,
    /// Biased batch variance.
    pub(crate) batch_var: DVector<f64>,
}

impl EtBlock<f64> {
    /// Glorot-uniform dense weights, zero bias, identity batch norm.
    pub fn glorot<R: Rng + ?Sized>(
        units: usize,
        eps: f64,
        momentum: f64,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (2 * units) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(units, units, |_, _| rng.random_range(-limit..limit)),
            ..Self::zero(units, eps, momentum, activation)
        }
    }

    /// A block whose output is identically zero in eval mode.
    pub fn zero(units: usize, eps: f64, momentum: f64, activation: Activation) -> Self {
        Self {
            weight: DMatrix::zeros(units, units),
            bias: DVector::zeros(units),
            bn_gamma: DVector::from_element(units, 1.0),
            bn_beta: DVector::zeros(units),
            bn_mean: DVector::zeros(units),
            bn_var: DVector::from_element(units, 1.0),
            bn_eps: eps,
            bn_momentum: momentum,
            activation,
            training: false,
        }
    }

    pub(crate) fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, EtCache)> {
        if x.nrows() != self.units() {
            return Err(Error::DimMismatch(format!(
                "ET block of width {} applied to {} rows",
                self.units(),
                x.nrows()
            )));
        }
        let units = self.units();
        let n = x.ncols();
        let mut z = &self.weight * x;
        for i in 0..units {
            z.row_mut(i).add_scalar_mut(self.bias[i]);
        }
        let (mean, var) = if self.training {
            let mean = DVector::from_fn(units, |i, _| z.row(i).sum() / n as f64);
            let var = DVector::from_fn(units, |i, _| {
                z.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / n as f64
            });
            (mean, var)
        } else {
            (self.bn_mean.clone(), self.bn_var.clone())
        };
        let inv_std = var.map(|v| 1.0 / (v + self.bn_eps).sqrt());
        let x_hat = DMatrix::from_fn(units, n, |i, j| (z[(i, j)] - mean[i]) * inv_std[i]);
        let h = DMatrix::from_fn(units, n, |i, j| {
            x_hat[(i, j)] * self.bn_gamma[i] + self.bn_beta[i]
        });
        let output = self.activate(h);
        let cache = EtCache {
            input: x.clone(),
            x_hat,
            inv_std,
            output: output.clone(),
            batch_stats: self.training,
            batch_mean: mean,
            batch_var: var,
        };
        Ok((output, cache))
    }

    /// Returns the gradient with respect to the block input and the parameter gradients.
    pub(crate) fn backward(
        &self,
        cache: &EtCache,
        d_out: &DMatrix<f64>,
    ) -> (DMatrix<f64>, EtGradients) {
        let (units, n) = d_out.shape();
        let dh = match self.activation {
            Activation::None => d_out.clone(),
            Activation::Tanh => d_out.zip_map(&cache.output, |d, a| d * (1.0 - a * a)),
        };
        let mut grads = EtGradients::zeros(units);
        let mut dz = DMatrix::zeros(units, n);
        for i in 0..units {
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..n {
                let d = dh[(i, j)];
                grads.gamma[i] += d * cache.x_hat[(i, j)];
                grads.beta[i] += d;
                let dxh = d * self.bn_gamma[i];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * cache.x_hat[(i, j)];
            }
            let inv = cache.inv_std[i];
            for j in 0..n {
                let dxh = dh[(i, j)] * self.bn_gamma[i];
                dz[(i, j)] = if cache.batch_stats {
                    inv / n as f64
                        * (n as f64 * dxh - sum_dxhat - cache.x_hat[(i, j)] * sum_dxhat_xhat)
                } else {
                    inv * dxh
                };
            }
        }
        grads.weight = &dz * cache.input.transpose();
        grads.bias = DVector::from_fn(units, |i, _| dz.row(i).sum());
        let d_input = self.weight.tr_mul(&dz);
        (d_input, grads)
    }

    /// Folds batch statistics into the running estimates.
    pub(crate) fn update_running(
        &mut self,
        batch_mean: &DVector<f64>,
        batch_var: &DVector<f64>,
        n: usize,
    ) {
        let m = self.bn_momentum;
        let unbiased = if n > 1 {
            n as f64 / (n - 1) as f64
        } else {
            1.0
        };
        self.bn_mean = &self.bn_mean * m + batch_mean * (1.0 - m);
        self.bn_var = &self.bn_var * m + batch_var * ((1.0 - m) * unbiased);
    }
}
