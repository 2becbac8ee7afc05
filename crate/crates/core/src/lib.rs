//! Binary-weight convolutional networks with an optional Walsh-Hadamard
//! input branch, trained from scratch on MNIST and CIFAR-10.

pub mod binary;
pub mod data;
pub mod error;
pub mod instrument;
pub mod model;
pub mod nn;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod wht;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
