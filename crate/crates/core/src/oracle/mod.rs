//! Bilevel problem abstraction and the penalty function built on it.
//!
//! A problem is `min_u f(u, v*)` s.t. `h(u, v*) = 0`, `v* = argmin_v g(u, v)`.
//! Oracles expose analytic first-order quantities plus Hessian-vector and
//! Jacobian-vector products of the lower-level cost; dense second-order
//! matrices are an optional capability used only by forward-mode
//! differentiation and the exact verifiers.

mod counted;
mod fd;
mod penalty;
mod slack;

pub use counted::{CountedOracle, OracleCounters};
pub use fd::{fd_check_oracle, FdReport};
pub use penalty::{penalty_grad_u, penalty_grad_v, penalty_value, PenaltyParams};
pub(crate) use penalty::{grad_u_prechecked, grad_v_prechecked};
pub use slack::{slackify, Slackified, SLACK_FLOOR};

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::numeric::{check_same_dim, RealVec};

/// Problem dimensions: upper variable, lower variable, equality constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub u: usize,
    pub v: usize,
    pub c: usize,
}

/// An iterate `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub u: RealVec,
    pub v: RealVec,
}

impl Point {
    pub fn new(u: impl Into<RealVec>, v: impl Into<RealVec>) -> Self {
        Self {
            u: u.into(),
            v: v.into(),
        }
    }

    pub fn check_dims(&self, dims: Dims) -> Result<()> {
        check_same_dim("point u", self.u.dim(), dims.u)?;
        check_same_dim("point v", self.v.dim(), dims.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    /// Stacked `w = (u, v)`.
    pub fn stacked(&self) -> RealVec {
        self.u.concat(&self.v)
    }
}

/// Analytic callbacks of a bilevel problem.
///
/// Implementations must be pure: concurrent calls with distinct points are safe.
/// The constraint callbacks default to "no constraints" and the dense
/// callbacks default to "capability absent".
pub trait BilevelOracle: Send + Sync {
    fn dims(&self) -> Dims;

    fn f(&self, p: &Point) -> f64;
    fn g(&self, p: &Point) -> f64;
    fn grad_u_f(&self, p: &Point) -> RealVec;
    fn grad_v_f(&self, p: &Point) -> RealVec;
    fn grad_v_g(&self, p: &Point) -> RealVec;
    /// `(∇_v f, ∇_v g)` at one point. Override when the two share work.
    fn grad_v_fg(&self, p: &Point) -> (RealVec, RealVec) {
        (self.grad_v_f(p), self.grad_v_g(p))
    }
    /// `∇²_vv g · q`, a V-vector.
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec;
    /// `∇²_uv g · q` (the U×V mixed block times a V-vector), a U-vector.
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec;

    /// Equality constraints `h(u, v) = 0`; `None` when `dims().c == 0`.
    fn h(&self, _p: &Point) -> Option<RealVec> {
        None
    }
    /// `(∂h/∂u)ᵀ μ`
    fn jtvp_u_h(&self, _p: &Point, _mu: &[f64]) -> RealVec {
        RealVec::zeros(self.dims().u)
    }
    /// `(∂h/∂v)ᵀ μ`
    fn jtvp_v_h(&self, _p: &Point, _mu: &[f64]) -> RealVec {
        RealVec::zeros(self.dims().v)
    }

    /// Dense `∇²_vv g` (V×V).
    fn hess_vv_g(&self, _p: &Point) -> Option<DMatrix<f64>> {
        None
    }
    /// Dense `∇²_uv g` (U×V).
    fn jac_uv_g(&self, _p: &Point) -> Option<DMatrix<f64>> {
        None
    }
    fn has_dense(&self) -> bool {
        false
    }

    /// Instrumentation hook: `n` trajectory vectors are alive right now.
    fn note_stored(&self, _n: u64) {}
    /// Call tallies, for instrumented oracles.
    fn counters(&self) -> Option<OracleCounters> {
        None
    }
    /// The underlying oracle whose calls bypass any instrumentation.
    fn uncounted(&self) -> Option<&dyn BilevelOracle> {
        None
    }
}

impl<T: BilevelOracle + ?Sized> BilevelOracle for &T {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn f(&self, p: &Point) -> f64 {
        (**self).f(p)
    }
    fn g(&self, p: &Point) -> f64 {
        (**self).g(p)
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        (**self).grad_u_f(p)
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        (**self).grad_v_f(p)
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        (**self).grad_v_g(p)
    }
    fn grad_v_fg(&self, p: &Point) -> (RealVec, RealVec) {
        (**self).grad_v_fg(p)
    }
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        (**self).hvp_vv_g(p, q)
    }
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        (**self).jvp_uv_g(p, q)
    }
    fn h(&self, p: &Point) -> Option<RealVec> {
        (**self).h(p)
    }
    fn jtvp_u_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        (**self).jtvp_u_h(p, mu)
    }
    fn jtvp_v_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        (**self).jtvp_v_h(p, mu)
    }
    fn hess_vv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        (**self).hess_vv_g(p)
    }
    fn jac_uv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        (**self).jac_uv_g(p)
    }
    fn has_dense(&self) -> bool {
        (**self).has_dense()
    }
    fn note_stored(&self, n: u64) {
        (**self).note_stored(n)
    }
    fn counters(&self) -> Option<OracleCounters> {
        (**self).counters()
    }
    fn uncounted(&self) -> Option<&dyn BilevelOracle> {
        (**self).uncounted()
    }
}

impl<T: BilevelOracle + ?Sized> BilevelOracle for Arc<T> {
    fn dims(&self) -> Dims {
        (**self).dims()
    }
    fn f(&self, p: &Point) -> f64 {
        (**self).f(p)
    }
    fn g(&self, p: &Point) -> f64 {
        (**self).g(p)
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        (**self).grad_u_f(p)
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        (**self).grad_v_f(p)
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        (**self).grad_v_g(p)
    }
    fn grad_v_fg(&self, p: &Point) -> (RealVec, RealVec) {
        (**self).grad_v_fg(p)
    }
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        (**self).hvp_vv_g(p, q)
    }
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        (**self).jvp_uv_g(p, q)
    }
    fn h(&self, p: &Point) -> Option<RealVec> {
        (**self).h(p)
    }
    fn jtvp_u_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        (**self).jtvp_u_h(p, mu)
    }
    fn jtvp_v_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        (**self).jtvp_v_h(p, mu)
    }
    fn hess_vv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        (**self).hess_vv_g(p)
    }
    fn jac_uv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        (**self).jac_uv_g(p)
    }
    fn has_dense(&self) -> bool {
        (**self).has_dense()
    }
    fn note_stored(&self, n: u64) {
        (**self).note_stored(n)
    }
    fn counters(&self) -> Option<OracleCounters> {
        (**self).counters()
    }
    fn uncounted(&self) -> Option<&dyn BilevelOracle> {
        (**self).uncounted()
    }
}

/// `(∂h/∂u)` as a dense C×U matrix, assembled from transpose products.
pub fn dense_jac_u_h(oracle: &dyn BilevelOracle, p: &Point) -> DMatrix<f64> {
    let d = oracle.dims();
    let mut j = DMatrix::zeros(d.c, d.u);
    for i in 0..d.c {
        let row = oracle.jtvp_u_h(p, &RealVec::unit(d.c, i));
        for (k, x) in row.iter().enumerate() {
            j[(i, k)] = *x;
        }
    }
    j
}

/// `(∂h/∂v)` as a dense C×V matrix.
pub fn dense_jac_v_h(oracle: &dyn BilevelOracle, p: &Point) -> DMatrix<f64> {
    let d = oracle.dims();
    let mut j = DMatrix::zeros(d.c, d.v);
    for i in 0..d.c {
        let row = oracle.jtvp_v_h(p, &RealVec::unit(d.c, i));
        for (k, x) in row.iter().enumerate() {
            j[(i, k)] = *x;
        }
    }
    j
}
