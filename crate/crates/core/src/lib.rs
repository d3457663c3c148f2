//! Interpretable capsule classifier with class-supervised disentanglement.

pub mod capsnet;
pub mod components;
pub mod data;
pub mod eval;
pub mod losses;
mod error;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, TensorError};

/// Single-precision tensor used for training.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor used by gradient checks and oracles.
pub type Tensor64 = Tensor<f64>;
