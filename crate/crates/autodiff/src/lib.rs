//! Dense `f64` tensors with a Wengert tape for reverse-mode
//! differentiation, covering the primitives used by the recognition
//! pipeline: convolutions, pooling, circular convolution, channel-graph
//! edge convolution and the task losses.

mod circular;
mod edge;
pub mod error;
pub mod gradcheck;
pub mod kernels;
mod nn;
mod params;
mod sample;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_op, GradCheckConfig, GradCheckReport};
pub use params::{GradBuffer, Graph, ParamId, ParamStore, Parameter};
pub use sample::bilinear_sample;
pub use tape::{Direction, Gradients, Tape, Var};
pub use tensor::Tensor;
