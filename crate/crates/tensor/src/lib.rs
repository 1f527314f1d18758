//! Dense float tensors with reverse-mode differentiation.
//!
//! The operator set covers what small fully-convolutional networks need:
//! grouped and strided convolutions with circular padding, channel layer
//! normalization, GELU and sine activations, nearest upsampling, pooling for
//! attention, Gram matrices and a differentiable 2D DFT.

pub mod conv;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod par;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use conv::{pad_circular, Conv2dSpec, Padding};
pub use error::{Result, TensorError};
pub use optim::{adam_step, cosine_lr, AdamState};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
