//! Differentiable operations, implemented as methods on [`Graph`](crate::Graph).

mod elementwise;
mod linalg;
pub mod nn;
mod reduce;
mod shape;

pub(crate) fn dense(v: Vec<f64>) -> Option<crate::Contribution> {
    Some(crate::Contribution::Dense(v))
}
