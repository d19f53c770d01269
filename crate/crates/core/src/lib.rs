//! Explicit p-dependence of the global gradient bound for p-Laplacian
//! Poisson problems, with the machinery to check it numerically.
//!
//! * [`structural`]: the regularized coefficient family and its growth
//!   inequalities.
//! * [`rearrange`]: decreasing rearrangements and Lorentz norms.
//! * [`constants`]: the constant chain and theorem factors.
//! * [`solver`]: grid solver for the regularized Dirichlet and Neumann problems.
//! * [`harness`]: sweeps, bound-shape and lemma checks, CSV output.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod error;
pub mod grid;
pub mod harness;
pub mod numeric;
pub mod rearrange;
pub mod solver;
pub mod structural;

pub use error::{Error, Result};
