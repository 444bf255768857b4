//! Minimal dense-tensor engine: `f64` tensors, the layer kernels used by the
//! gaze and caption models, a reverse-mode tape, Adam, and initializers.

mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
mod optim;
mod param;
pub mod rng;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use kernels::Activation;
pub use optim::{Adam, AdamConfig};
pub use param::{ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
