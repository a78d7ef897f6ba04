//! A compact tape-based reverse-mode autodiff engine for dense, contiguous,
//! row-major CPU tensors.
//!
//! The engine is generic over [`Real`] so models can be trained in `f32` and
//! gradient-checked in `f64` from the same code. Convolutions are lowered to
//! GEMM through im2col; everything else is a straightforward loop.

mod error;
pub mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod real;
mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, AdamState};
pub use real::Real;
pub use tensor::Tensor;
