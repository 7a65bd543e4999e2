use super::basis_conv::BasisConvLayer;
use super::spec::LayerSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::FilterBank;
use crate::tensor::{conv2d_backward, conv2d_forward, gemm, gemm_tn, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Scalar = f64> {
    /// `[P, L, D, D]`
    pub filters: Tensor<T>,
    /// `[P]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(filters: Tensor<T>, bias: Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        FilterBank::new(filters.clone(), bias.clone())?;
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(ConvLayer {
            filters,
            bias,
            stride,
            pad,
        })
    }

    pub fn bank(&self) -> Result<FilterBank<T>> {
        FilterBank::new(self.filters.clone(), self.bias.clone())
    }

    pub fn num_filters(&self) -> usize {
        self.filters.dim(0)
    }

    pub fn channels(&self) -> usize {
        self.filters.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.filters.dim(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Scalar = f64> {
    /// `[out, in]`
    pub weights: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (out, _) = weights.dims2("dense weights")?;
        if bias.shape() != [out] {
            return Err(Error::dim("dense bias", format!("[{out}]"), format!("{:?}", bias.shape())));
        }
        Ok(DenseLayer { weights, bias })
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, inp) = (self.weights.dim(0), self.weights.dim(1));
        if x.shape() != [inp] {
            return Err(Error::dim("dense input", format!("[{inp}]"), format!("{:?}", x.shape())));
        }
        let mut y = self.bias.data().to_vec();
        gemm(out, inp, 1, self.weights.data(), x.data(), &mut y);
        Tensor::new(vec![out], y)
    }

    fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (out, inp) = (self.weights.dim(0), self.weights.dim(1));
        let mut grad_w = vec![T::zero(); out * inp];
        gemm(out, 1, inp, grad_out.data(), x.data(), &mut grad_w);
        let mut grad_x = vec![T::zero(); inp];
        gemm_tn(inp, out, 1, self.weights.data(), grad_out.data(), &mut grad_x);
        (
            Tensor::new(vec![inp], grad_x).expect("shape checked in forward"),
            Tensor::new(vec![out, inp], grad_w).expect("shape checked in forward"),
            grad_out.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
}

impl MaxPool {
    /// Pooled output and, for each output cell, the flat input index of its
    /// maximum (first occurrence on ties).
    fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let out_shape = LayerSpec::MaxPool {
            size: self.size,
            stride: self.stride,
        }
        .output_shape(x.shape())?;
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut arg = Vec::with_capacity(c * oh * ow);
        let data = x.data();
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = ch * h * w + oy * self.stride * w + ox * self.stride;
                    for i in 0..self.size {
                        for j in 0..self.size {
                            let idx = ch * h * w + (oy * self.stride + i) * w + ox * self.stride + j;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Tensor::new(out_shape, out)?, arg))
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Scalar = f64> {
    Conv(ConvLayer<T>),
    BasisConv(BasisConvLayer<T>),
    Dense(DenseLayer<T>),
    Relu,
    MaxPool(MaxPool),
    Flatten,
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache<T: Scalar = f64> {
    input: Tensor<T>,
    aux: Aux<T>,
}

#[derive(Debug, Clone)]
enum Aux<T: Scalar> {
    None,
    Responses(Tensor<T>),
    Argmax(Vec<usize>),
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv {
                in_channels: c.channels(),
                filters: c.num_filters(),
                kernel: c.kernel(),
                stride: c.stride,
                pad: c.pad,
            },
            Layer::BasisConv(b) => LayerSpec::BasisConv {
                in_channels: b.channels(),
                filters: b.num_filters(),
                kernel: b.kernel(),
                stride: b.stride,
                pad: b.pad,
                rank: b.rank(),
            },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.weights.dim(1),
                outputs: d.weights.dim(0),
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool(p) => LayerSpec::MaxPool {
                size: p.size,
                stride: p.stride,
            },
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    /// Rebuilds a layer from its spec and parameters in [`LayerSpec::param_shapes`] order.
    pub fn from_parts(spec: &LayerSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::dim(format!("{} parameter count", spec.name()), shapes.len(), params.len()));
        }
        for ((name, shape), t) in shapes.iter().zip(&params) {
            if t.shape() != &shape[..] {
                return Err(Error::dim(
                    format!("{} {name}", spec.name()),
                    format!("{shape:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        let mut it = params.into_iter();
        let mut next = || it.next().expect("count checked");
        Ok(match *spec {
            LayerSpec::Conv { stride, pad, .. } => Layer::Conv(ConvLayer::new(next(), next(), stride, pad)?),
            LayerSpec::BasisConv { stride, pad, .. } => {
                Layer::BasisConv(BasisConvLayer::new(next(), next(), next(), stride, pad)?)
            }
            LayerSpec::Dense { .. } => Layer::Dense(DenseLayer::new(next(), next())?),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool { size, stride } => Layer::MaxPool(MaxPool { size, stride }),
            LayerSpec::Flatten => Layer::Flatten,
        })
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&c.filters, &c.bias],
            Layer::BasisConv(b) => vec![&b.basis, &b.weights, &b.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.filters, &mut c.bias],
            Layer::BasisConv(b) => vec![&mut b.basis, &mut b.weights, &mut b.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => conv2d_forward(x, &c.filters, &c.bias, c.stride, c.pad),
            Layer::BasisConv(b) => b.forward(x),
            Layer::Dense(d) => d.forward(x),
            Layer::Relu => Ok(x.map(|v| v.max(T::zero()))),
            Layer::MaxPool(p) => Ok(p.forward(x)?.0),
            Layer::Flatten => x.clone().reshape(&[x.len()]),
        }
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let (y, aux) = match self {
            Layer::BasisConv(b) => {
                let z = b.basis_responses(x)?;
                (b.combine(&z)?, Aux::Responses(z))
            }
            Layer::MaxPool(p) => {
                let (y, arg) = p.forward(x)?;
                (y, Aux::Argmax(arg))
            }
            _ => (self.forward(x)?, Aux::None),
        };
        Ok((
            y,
            Cache {
                input: x.clone(),
                aux,
            },
        ))
    }

    /// Gradient with respect to the layer input and to each parameter
    /// (in [`Layer::params`] order).
    pub fn backward(&self, cache: &Cache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let x = &cache.input;
        match (self, &cache.aux) {
            (Layer::Conv(c), _) => {
                let g = conv2d_backward(x, &c.filters, grad_out, c.stride, c.pad)?;
                Ok((g.input, vec![g.filters, g.bias]))
            }
            (Layer::BasisConv(b), Aux::Responses(z)) => {
                let g = b.backward_with_responses(x, z, grad_out)?;
                Ok((g.input, vec![g.basis, g.weights, g.bias]))
            }
            (Layer::Dense(d), _) => {
                let (gx, gw, gb) = d.backward(x, grad_out);
                Ok((gx, vec![gw, gb]))
            }
            (Layer::Relu, _) => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                Ok((Tensor::new(x.shape().to_vec(), data)?, vec![]))
            }
            (Layer::MaxPool(_), Aux::Argmax(arg)) => {
                let mut gx = Tensor::zeros(x.shape());
                let buf = gx.data_mut();
                for (&i, &g) in arg.iter().zip(grad_out.data()) {
                    buf[i] += g;
                }
                Ok((gx, vec![]))
            }
            (Layer::Flatten, _) => Ok((grad_out.clone().reshape(x.shape())?, vec![])),
            (layer, _) => Err(Error::InvalidArgument(format!(
                "cache does not belong to a {} layer",
                layer.spec().name()
            ))),
        }
    }
}
