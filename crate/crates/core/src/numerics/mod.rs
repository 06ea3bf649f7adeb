//! Deterministic numeric foundation: tensors, stable scalar kernels,
//! matrix products, a reverse-mode tape, finite differences, and seeded
//! random streams.

pub mod fd;
pub mod matmul;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use fd::{finite_diff_gradient, max_relative_error};
pub use scalar::{gelu, logsumexp, sigmoid, softplus};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
