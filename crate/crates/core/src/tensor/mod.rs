//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Model arithmetic runs in `f32`; the gradient-check suite exercises the
//! identical code paths in `f64`. Forward/backward over a single [`Graph`]
//! is single-threaded at the tape level; elementwise and matrix kernels
//! parallelize internally with one writer per output element, so results are
//! bit-stable for any thread count.

mod array;
mod check;
mod graph;
pub mod kernels;
pub mod nn;
mod scalar;

pub use array::Tensor;
pub use check::{grad_check, grad_check_with_step};
pub use graph::{Graph, Var};
pub use scalar::{fast_exp_f32, s, Scalar};
