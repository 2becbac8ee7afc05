//! Layer kernels: forward and backward for every layer the architectures use.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod loss;
pub mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads, Padding};
pub use dense::{fully_connected, fully_connected_backward, DenseGrads};
pub use dropout::{dropout, dropout_backward};
pub use loss::{softmax, softmax_xent, softmax_xent_batch};
pub use pool::{maxpool2x2, maxpool2x2_backward, Pooled};
