//! The two-stage replacement for a convolution layer.
//!
//! Stage one convolves the input with `Q` shared basis filters, producing
//! `z` (`[Q, H', W']`). Stage two is a 1x1 convolution of `z` with the
//! `P x Q` spectral weights, so output plane `k` is `sum_i W[k,i] z_i + b_k`.
//! The `P` full filters are never materialized.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{EigenBasis, SpectralWeights};
use crate::tensor::{conv2d_backward, conv2d_nobias, gemm, gemm_nt, gemm_tn, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BasisConvLayer<T: Scalar = f64> {
    /// `[Q, L, D, D]`
    pub basis: Tensor<T>,
    /// `[P, Q]`
    pub weights: Tensor<T>,
    /// `[P]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct BasisConvGrads<T: Scalar = f64> {
    pub input: Tensor<T>,
    pub basis: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> BasisConvLayer<T> {
    pub fn new(basis: Tensor<T>, weights: Tensor<T>, bias: Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [q, _, d, d2] = basis.shape()[..] else {
            return Err(Error::dim("basis rank", 4, basis.ndim()));
        };
        if d != d2 {
            return Err(Error::dim("basis width axis", d, d2));
        }
        let (p, wq) = weights.dims2("spectral weights")?;
        if wq != q {
            return Err(Error::dim("spectral weights rank axis", q, wq));
        }
        if bias.shape() != [p] {
            return Err(Error::dim("bias axis", format!("[{p}]"), format!("{:?}", bias.shape())));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(BasisConvLayer {
            basis,
            weights,
            bias,
            stride,
            pad,
        })
    }

    pub fn from_spectral(
        basis: EigenBasis<T>,
        weights: SpectralWeights<T>,
        bias: Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        Self::new(basis.basis, weights.weights, bias, stride, pad)
    }

    pub fn rank(&self) -> usize {
        self.basis.dim(0)
    }

    pub fn num_filters(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn channels(&self) -> usize {
        self.basis.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.basis.dim(2)
    }

    /// The basis responses `z_i = x * f_i`, shape `[Q, H', W']`.
    pub fn basis_responses(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_nobias(input, &self.basis, self.stride, self.pad)
    }

    /// Second stage: the 1x1 weight convolution of precomputed responses.
    pub fn combine(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let (q, oh, ow) = (z.dim(0), z.dim(1), z.dim(2));
        if q != self.rank() {
            return Err(Error::dim("basis response axis", self.rank(), q));
        }
        let p = self.num_filters();
        let hw = oh * ow;
        let mut out = vec![T::zero(); p * hw];
        for (plane, &b) in out.chunks_exact_mut(hw).zip(self.bias.data()) {
            plane.iter_mut().for_each(|v| *v = b);
        }
        gemm(p, q, hw, self.weights.data(), z.data(), &mut out);
        Tensor::new(vec![p, oh, ow], out)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.combine(&self.basis_responses(input)?)
    }

    /// Gradients given the cached basis responses `z` of `input`.
    pub fn backward_with_responses(
        &self,
        input: &Tensor<T>,
        z: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<BasisConvGrads<T>> {
        let (q, oh, ow) = (z.dim(0), z.dim(1), z.dim(2));
        let p = self.num_filters();
        if grad_out.shape() != [p, oh, ow] {
            return Err(Error::dim(
                "grad_out shape",
                format!("{:?}", [p, oh, ow]),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let hw = oh * ow;
        let mut grad_weights = vec![T::zero(); p * q];
        gemm_nt(p, hw, q, grad_out.data(), z.data(), &mut grad_weights);
        let mut grad_z = vec![T::zero(); q * hw];
        gemm_tn(q, p, hw, self.weights.data(), grad_out.data(), &mut grad_z);
        let grad_bias = grad_out
            .data()
            .chunks_exact(hw)
            .map(|plane| plane.iter().copied().sum())
            .collect();
        let grad_z = Tensor::new(vec![q, oh, ow], grad_z)?;
        let inner = conv2d_backward(input, &self.basis, &grad_z, self.stride, self.pad)?;
        Ok(BasisConvGrads {
            input: inner.input,
            basis: inner.filters,
            weights: Tensor::new(vec![p, q], grad_weights)?,
            bias: Tensor::new(vec![p], grad_bias)?,
        })
    }
}

/// Forward pass of a BasisConv layer: `Q` basis convolutions computed once,
/// then `P` weighted sums of them.
pub fn basisconv_forward<T: Scalar>(layer: &BasisConvLayer<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    layer.forward(input)
}

/// Exact gradients of [`basisconv_forward`] with respect to the input, the
/// basis filters, the spectral weights and the bias.
pub fn basisconv_backward<T: Scalar>(
    layer: &BasisConvLayer<T>,
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BasisConvGrads<T>> {
    let z = layer.basis_responses(input)?;
    layer.backward_with_responses(input, &z, grad_out)
}
