pub mod accounting;
pub mod compress;
pub mod data;
pub mod error;
pub mod io;
pub mod nn;
pub mod scalar;
pub mod sft;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases, the default for training and tests.
pub type TensorF64 = tensor::Tensor<f64>;
pub type NetworkF64 = nn::Network<f64>;
pub type DatasetF64 = data::Dataset<f64>;
pub type FilterBankF64 = spectral::FilterBank<f64>;

/// Single-precision aliases.
pub type TensorF32 = tensor::Tensor<f32>;
pub type NetworkF32 = nn::Network<f32>;
pub type DatasetF32 = data::Dataset<f32>;
pub type FilterBankF32 = spectral::FilterBank<f32>;
