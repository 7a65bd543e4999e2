//! Spectral fine tuning: joint training of basis filters and spectral
//! weights with a soft orthogonality penalty on each basis.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{fit, FitOptions, Gradients, Layer, Network, Regularizer, TrainConfig, TrainReport};
use crate::scalar::Scalar;
use crate::spectral::orthogonality_residual;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoConfig {
    /// Balance between the unit-norm term (`alpha`) and the pairwise term.
    pub alpha: f64,
    /// Multiplier on the summed per-layer penalty.
    pub weight: f64,
}

impl Default for OrthoConfig {
    fn default() -> Self {
        OrthoConfig { alpha: 0.5, weight: 1.0 }
    }
}

impl OrthoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidArgument(format!("ortho weight {} must be >= 0", self.weight)));
        }
        Ok(())
    }
}

fn gram<T: Scalar>(basis: &Tensor<T>) -> (usize, usize, Vec<T>) {
    let q = basis.dim(0);
    let n = basis.len() / q;
    let f = basis.data();
    let mut g = vec![T::zero(); q * q];
    for i in 0..q {
        for j in i..q {
            let v: T = f[i * n..(i + 1) * n]
                .iter()
                .zip(&f[j * n..(j + 1) * n])
                .map(|(&a, &b)| a * b)
                .sum();
            g[i * q + j] = v;
            g[j * q + i] = v;
        }
    }
    (q, n, g)
}

/// Orthogonality penalty of a `[Q, L, D, D]` basis:
///
/// `J = (alpha/Q) sum_i (1 - f_i.f_i)^2 + 2(1-alpha)/(Q(Q-1)) sum_{i<j} (f_i.f_j)^2`,
///
/// with the pairwise term taken as zero when `Q = 1`.
pub fn ortho_loss<T: Scalar>(basis: &Tensor<T>, alpha: T) -> T {
    let (q, _, g) = gram(basis);
    let qf = T::lit(q as f64);
    let diag: T = (0..q).map(|i| (T::one() - g[i * q + i]).powi(2)).sum();
    let mut loss = alpha / qf * diag;
    if q > 1 {
        let mut off = T::zero();
        for i in 0..q {
            for j in i + 1..q {
                off += g[i * q + j].powi(2);
            }
        }
        loss += T::lit(2.0) * (T::one() - alpha) / (qf * (qf - T::one())) * off;
    }
    loss
}

/// Analytic gradient of [`ortho_loss`] with respect to every basis entry.
pub fn ortho_loss_grad<T: Scalar>(basis: &Tensor<T>, alpha: T) -> Tensor<T> {
    let (q, n, g) = gram(basis);
    let qf = T::lit(q as f64);
    let four = T::lit(4.0);
    let f = basis.data();
    let mut out = Tensor::zeros(basis.shape());
    let grad = out.data_mut();
    let cross = if q > 1 {
        four * (T::one() - alpha) / (qf * (qf - T::one()))
    } else {
        T::zero()
    };
    for i in 0..q {
        let row = &mut grad[i * n..(i + 1) * n];
        let own = -four * alpha / qf * (T::one() - g[i * q + i]);
        for (r, &v) in row.iter_mut().zip(&f[i * n..(i + 1) * n]) {
            *r += own * v;
        }
        if q > 1 {
            for j in (0..q).filter(|&j| j != i) {
                let c = cross * g[i * q + j];
                for (r, &v) in row.iter_mut().zip(&f[j * n..(j + 1) * n]) {
                    *r += c * v;
                }
            }
        }
    }
    out
}

/// `weight * sum over BasisConv layers of ortho_loss`, as a training term.
#[derive(Debug, Clone, Copy)]
pub struct OrthoPenalty {
    pub config: OrthoConfig,
}

impl<T: Scalar> Regularizer<T> for OrthoPenalty {
    fn apply(&self, network: &Network<T>, grads: &mut Gradients<T>) -> T {
        let alpha = T::lit(self.config.alpha);
        let weight = T::lit(self.config.weight);
        let mut total = T::zero();
        for (layer, g) in network.layers().iter().zip(grads.iter_mut()) {
            if let Layer::BasisConv(bc) = layer {
                total += ortho_loss(&bc.basis, alpha);
                if self.config.weight != 0.0 {
                    g[0].axpy(weight, &ortho_loss_grad(&bc.basis, alpha)).expect("basis gradient shape");
                }
            }
        }
        weight * total
    }

    fn residual(&self, network: &Network<T>) -> Option<f64> {
        max_ortho_residual(network)
    }
}

/// Largest `max |F^T F - I|` over the network's BasisConv layers.
pub fn max_ortho_residual<T: Scalar>(network: &Network<T>) -> Option<f64> {
    network
        .layers()
        .iter()
        .filter_map(|l| match l {
            Layer::BasisConv(bc) => Some(orthogonality_residual(&bc.basis).as_f64()),
            _ => None,
        })
        .reduce(f64::max)
}

/// Fine-tunes the BasisConv and Dense parameters of a compressed network on
/// cross-entropy plus the orthogonality penalty. Plain conv layers stay frozen.
pub fn spectral_finetune<T: Scalar>(
    network: &mut Network<T>,
    dataset: &Dataset<T>,
    train_config: &TrainConfig,
    ortho: &OrthoConfig,
) -> Result<TrainReport> {
    ortho.validate()?;
    if !network.layers().iter().any(|l| matches!(l, Layer::BasisConv(_))) {
        return Err(Error::InvalidArgument("network has no basis_conv layer to fine-tune".into()));
    }
    let penalty = OrthoPenalty { config: *ortho };
    fit(
        network,
        dataset,
        train_config,
        FitOptions {
            trainable: &|l| matches!(l, Layer::BasisConv(_) | Layer::Dense(_)),
            regularizer: Some(&penalty),
        },
    )
}
