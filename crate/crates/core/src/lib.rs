//! Neural bidirectional texture functions: data formats, the guidance
//! autoencoder and renderer, training, texture propagation and evaluation.

pub mod btf;
mod bytes;
pub mod error;
pub mod eval;
pub mod model;
pub mod propagate;
pub mod training;

pub use error::{Error, Result};
pub use nbtf_tensor::TensorError;
