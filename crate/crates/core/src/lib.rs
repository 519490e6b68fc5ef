//! Bilevel optimization by the inversion-free penalty method.
//!
//! The crate solves `min_u f(u, v*(u))` with `v*(u) = argmin_v g(u, v)` by
//! alternating gradient steps on the penalty function
//! `f + (γ/2)(‖h‖² + ‖∇_v g‖²)` while `γ` grows, and ships the usual
//! hypergradient baselines (alternating GD, forward/reverse-mode unrolling,
//! approximate inversion) next to exact verifiers and a desk-scale problem
//! suite.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod hypergrad;
pub mod numeric;
pub mod oracle;
pub mod problems;
pub mod solvers;

pub use error::{BilevelError, Result};
pub use numeric::{RealVec, RngSeed};
pub use oracle::{BilevelOracle, Dims, Point};
