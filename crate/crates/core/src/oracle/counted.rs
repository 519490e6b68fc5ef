use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use nalgebra::DMatrix;

use super::{BilevelOracle, Dims, Point};
use crate::numeric::RealVec;

/// Per-run tallies of oracle calls.
///
/// `peak_stored_vecs` is the largest number of V-dimensional trajectory
/// vectors a solver kept alive at once (a dense U×V matrix counts as U).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleCounters {
    pub n_f: u64,
    pub n_g: u64,
    pub n_grad_u_f: u64,
    pub n_grad_v_f: u64,
    pub n_grad_v_g: u64,
    pub n_hvp: u64,
    pub n_jvp: u64,
    pub n_h: u64,
    pub n_jtvp_h: u64,
    pub n_dense_hess: u64,
    pub n_dense_jac: u64,
    pub peak_stored_vecs: u64,
}

impl OracleCounters {
    /// Calls made between `earlier` and `self`; the peak is kept from `self`.
    pub fn since(&self, earlier: &OracleCounters) -> OracleCounters {
        OracleCounters {
            n_f: self.n_f - earlier.n_f,
            n_g: self.n_g - earlier.n_g,
            n_grad_u_f: self.n_grad_u_f - earlier.n_grad_u_f,
            n_grad_v_f: self.n_grad_v_f - earlier.n_grad_v_f,
            n_grad_v_g: self.n_grad_v_g - earlier.n_grad_v_g,
            n_hvp: self.n_hvp - earlier.n_hvp,
            n_jvp: self.n_jvp - earlier.n_jvp,
            n_h: self.n_h - earlier.n_h,
            n_jtvp_h: self.n_jtvp_h - earlier.n_jtvp_h,
            n_dense_hess: self.n_dense_hess - earlier.n_dense_hess,
            n_dense_jac: self.n_dense_jac - earlier.n_dense_jac,
            peak_stored_vecs: self.peak_stored_vecs,
        }
    }

    /// Hessian/Jacobian-vector products plus dense second-order evaluations.
    pub fn second_order_calls(&self) -> u64 {
        self.n_hvp + self.n_jvp + self.n_dense_hess + self.n_dense_jac
    }
}

#[derive(Default)]
struct Tally {
    n_f: AtomicU64,
    n_g: AtomicU64,
    n_grad_u_f: AtomicU64,
    n_grad_v_f: AtomicU64,
    n_grad_v_g: AtomicU64,
    n_hvp: AtomicU64,
    n_jvp: AtomicU64,
    n_h: AtomicU64,
    n_jtvp_h: AtomicU64,
    n_dense_hess: AtomicU64,
    n_dense_jac: AtomicU64,
    peak_stored_vecs: AtomicU64,
}

/// Wraps an oracle and counts every call that goes through it.
pub struct CountedOracle<O> {
    inner: O,
    tally: Tally,
}

impl<O: BilevelOracle> CountedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            tally: Tally::default(),
        }
    }

    /// The wrapped oracle; calls through it are not counted.
    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn counters(&self) -> OracleCounters {
        let t = &self.tally;
        OracleCounters {
            n_f: t.n_f.load(Relaxed),
            n_g: t.n_g.load(Relaxed),
            n_grad_u_f: t.n_grad_u_f.load(Relaxed),
            n_grad_v_f: t.n_grad_v_f.load(Relaxed),
            n_grad_v_g: t.n_grad_v_g.load(Relaxed),
            n_hvp: t.n_hvp.load(Relaxed),
            n_jvp: t.n_jvp.load(Relaxed),
            n_h: t.n_h.load(Relaxed),
            n_jtvp_h: t.n_jtvp_h.load(Relaxed),
            n_dense_hess: t.n_dense_hess.load(Relaxed),
            n_dense_jac: t.n_dense_jac.load(Relaxed),
            peak_stored_vecs: t.peak_stored_vecs.load(Relaxed),
        }
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Relaxed);
}

impl<O: BilevelOracle> BilevelOracle for CountedOracle<O> {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }
    fn f(&self, p: &Point) -> f64 {
        bump(&self.tally.n_f);
        self.inner.f(p)
    }
    fn g(&self, p: &Point) -> f64 {
        bump(&self.tally.n_g);
        self.inner.g(p)
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        bump(&self.tally.n_grad_u_f);
        self.inner.grad_u_f(p)
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        bump(&self.tally.n_grad_v_f);
        self.inner.grad_v_f(p)
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        bump(&self.tally.n_grad_v_g);
        self.inner.grad_v_g(p)
    }
    fn grad_v_fg(&self, p: &Point) -> (RealVec, RealVec) {
        bump(&self.tally.n_grad_v_f);
        bump(&self.tally.n_grad_v_g);
        self.inner.grad_v_fg(p)
    }
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        bump(&self.tally.n_hvp);
        self.inner.hvp_vv_g(p, q)
    }
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        bump(&self.tally.n_jvp);
        self.inner.jvp_uv_g(p, q)
    }
    fn h(&self, p: &Point) -> Option<RealVec> {
        bump(&self.tally.n_h);
        self.inner.h(p)
    }
    fn jtvp_u_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        bump(&self.tally.n_jtvp_h);
        self.inner.jtvp_u_h(p, mu)
    }
    fn jtvp_v_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        bump(&self.tally.n_jtvp_h);
        self.inner.jtvp_v_h(p, mu)
    }
    fn hess_vv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        bump(&self.tally.n_dense_hess);
        self.inner.hess_vv_g(p)
    }
    fn jac_uv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        bump(&self.tally.n_dense_jac);
        self.inner.jac_uv_g(p)
    }
    fn has_dense(&self) -> bool {
        self.inner.has_dense()
    }
    fn note_stored(&self, n: u64) {
        self.tally.peak_stored_vecs.fetch_max(n, Relaxed);
    }
    fn counters(&self) -> Option<OracleCounters> {
        Some(CountedOracle::counters(self))
    }
    fn uncounted(&self) -> Option<&dyn BilevelOracle> {
        Some(&self.inner)
    }
}
