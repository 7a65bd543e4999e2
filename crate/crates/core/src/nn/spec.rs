use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_output_extent;

/// Structural description of one layer, without its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BasisConv {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rank: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, filters: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            filters,
            kernel,
            stride,
            pad,
        }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn max_pool(size: usize) -> Self {
        LayerSpec::MaxPool { size, stride: size }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BasisConv { .. } => "basis_conv",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("{}: {msg}", self.name())));
        match *self {
            LayerSpec::Conv {
                in_channels,
                filters,
                kernel,
                stride,
                ..
            } => {
                if in_channels == 0 || filters == 0 || kernel == 0 || stride == 0 {
                    return bad("channels, filters, kernel and stride must be >= 1".into());
                }
            }
            LayerSpec::BasisConv {
                in_channels,
                filters,
                kernel,
                stride,
                rank,
                ..
            } => {
                if in_channels == 0 || filters == 0 || kernel == 0 || stride == 0 {
                    return bad("channels, filters, kernel and stride must be >= 1".into());
                }
                let max = filters.min(in_channels * kernel * kernel);
                if rank == 0 || rank > max {
                    return bad(format!("rank {rank} outside [1, {max}]"));
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return bad("inputs and outputs must be >= 1".into());
                }
            }
            LayerSpec::MaxPool { size, stride } => {
                if size == 0 || stride == 0 {
                    return bad("size and stride must be >= 1".into());
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Shape produced by this layer for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |channels: usize, kernel: usize, stride: usize, pad: usize| -> Result<(usize, usize)> {
            let [c, h, w] = input[..] else {
                return Err(Error::dim(format!("{} input rank", self.name()), 3, input.len()));
            };
            if c != channels {
                return Err(Error::dim(format!("{} channel axis", self.name()), channels, c));
            }
            let oh = conv_output_extent(h, kernel, stride, pad)
                .ok_or_else(|| Error::dim(format!("{} height axis", self.name()), format!(">= {kernel}"), h + 2 * pad))?;
            let ow = conv_output_extent(w, kernel, stride, pad)
                .ok_or_else(|| Error::dim(format!("{} width axis", self.name()), format!(">= {kernel}"), w + 2 * pad))?;
            Ok((oh, ow))
        };
        match *self {
            LayerSpec::Conv {
                in_channels,
                filters,
                kernel,
                stride,
                pad,
            }
            | LayerSpec::BasisConv {
                in_channels,
                filters,
                kernel,
                stride,
                pad,
                ..
            } => {
                let (oh, ow) = spatial(in_channels, kernel, stride, pad)?;
                Ok(vec![filters, oh, ow])
            }
            LayerSpec::MaxPool { size, stride } => {
                let c = input.first().copied().unwrap_or(0);
                let (oh, ow) = spatial(c, size, stride, 0)?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(Error::dim("dense input", format!("[{inputs}]"), format!("{input:?}")));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Named parameter tensors in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                ("filters", vec![filters, in_channels, kernel, kernel]),
                ("bias", vec![filters]),
            ],
            LayerSpec::BasisConv {
                in_channels,
                filters,
                kernel,
                rank,
                ..
            } => vec![
                ("basis", vec![rank, in_channels, kernel, kernel]),
                ("weights", vec![filters, rank]),
                ("bias", vec![filters]),
            ],
            LayerSpec::Dense { inputs, outputs } => {
                vec![("weights", vec![outputs, inputs]), ("bias", vec![outputs])]
            }
            LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Flatten => vec![],
        }
    }
}
