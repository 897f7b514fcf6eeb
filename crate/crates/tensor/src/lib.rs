//! Dense `N×C×H×W` tensors with a dynamic reverse-mode autodiff graph.
//!
//! Every op records a closure that maps the output gradient back onto its
//! inputs. Calling [`Tensor::backward`] on a scalar walks the graph in reverse
//! topological order and accumulates gradients into the leaves that were
//! created with `requires_grad`.
//!
//! The engine is generic over [`Element`] so the same layer code runs in
//! single precision for training and in double precision for
//! finite-difference gradient checks.

mod autograd;
mod element;
mod error;
pub mod gradcheck;
mod gemm;
pub mod macs;
mod ops;
mod shape;
mod tensor;

pub use autograd::{is_grad_enabled, no_grad, NoGradGuard};
pub use element::Element;
pub use error::{Result, TensorError};
pub use ops::conv::Conv2dSpec;
pub use shape::Shape;
pub use tensor::Tensor;
