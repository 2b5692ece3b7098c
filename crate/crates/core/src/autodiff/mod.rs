//! Reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
mod kernels;

pub use gradcheck::{check_gradients, check_gradients_with, relative_error, GRADCHECK_EPS, GRADCHECK_FLOOR};
pub use graph::{BatchStats, Conv2d, Graph, Pool2d, Var, NORM_EPS};

#[cfg(test)]
mod tests;
