//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and a backward closure. [`Graph::backward`] walks the tape from the
//! loss towards the leaves, visiting each node once, and accumulates gradients
//! into the leaves that were created with `requires_grad`.
//!
//! Parameters live outside the graph. A training step copies them in as leaves,
//! runs the forward pass, calls `backward`, reads the leaf gradients and hands
//! them to [`Adam`].

mod adam;
mod error;
mod gradcheck;
mod graph;
pub mod ops;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{AdError, Result};
pub use gradcheck::{grad_check, relative_error};
pub use graph::{BackwardArgs, Contribution, Graph, Precision, Var};
pub use ops::nn::{BatchNormMode, BatchStats};
pub use tensor::Tensor;
