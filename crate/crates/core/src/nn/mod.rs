//! Layers, sequential networks and the SGD training loop.

mod basis_conv;
mod layer;
mod network;
mod spec;
mod train;

pub use basis_conv::{basisconv_backward, basisconv_forward, BasisConvGrads, BasisConvLayer};
pub use layer::{Cache, ConvLayer, DenseLayer, Layer, MaxPool};
pub use network::{presets, Gradients, Network};
pub use spec::LayerSpec;
pub use train::{
    evaluate, fit, softmax_cross_entropy, train, EpochStats, FitOptions, Regularizer, TrainConfig, TrainReport,
};
