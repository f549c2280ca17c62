//! Targeted kernel networks from scratch: dense tensors, parametric attention
//! windows, ROI-restricted convolution, a small layer graph with SGD/Nesterov
//! training, FLOP accounting, MNIST/tlMNIST tooling, and attention-map export.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod export;
pub mod flops;
pub mod graph;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod target;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Roi, Tensor4};
