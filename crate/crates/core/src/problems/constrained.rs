//! Scalar inequality-constrained toy: `f = u² + v²`, `g = (v − u)²`,
//! `h = 1 − u − v ≤ 0`. On `v = u` the constraint binds at `u = 0.5`, so the
//! solution is `(0.5, 0.5)` with `f* = 0.5`.

use std::sync::Arc;

use super::{Metric, ProblemInstance};
use crate::numeric::{uniform_vec, BoxBounds, RealVec, RngSeed};
use crate::oracle::{slackify, BilevelOracle, Dims, Point, Slackified};

pub const CONSTRAINED_OPTIMUM: (f64, f64) = (0.5, 0.5);

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstrainedToy {
    /// Drops `h`, leaving the unconstrained problem with optimum `(0, 0)`.
    pub unconstrained: bool,
}

impl BilevelOracle for ConstrainedToy {
    fn dims(&self) -> Dims {
        Dims {
            u: 1,
            v: 1,
            c: if self.unconstrained { 0 } else { 1 },
        }
    }
    fn f(&self, p: &Point) -> f64 {
        p.u[0] * p.u[0] + p.v[0] * p.v[0]
    }
    fn g(&self, p: &Point) -> f64 {
        (p.v[0] - p.u[0]).powi(2)
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        vec![2.0 * p.u[0]].into()
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        vec![2.0 * p.v[0]].into()
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        vec![2.0 * (p.v[0] - p.u[0])].into()
    }
    fn hvp_vv_g(&self, _p: &Point, q: &[f64]) -> RealVec {
        vec![2.0 * q[0]].into()
    }
    fn jvp_uv_g(&self, _p: &Point, q: &[f64]) -> RealVec {
        vec![-2.0 * q[0]].into()
    }
    fn h(&self, p: &Point) -> Option<RealVec> {
        (!self.unconstrained).then(|| vec![1.0 - p.u[0] - p.v[0]].into())
    }
    fn jtvp_u_h(&self, _p: &Point, mu: &[f64]) -> RealVec {
        vec![-mu.first().copied().unwrap_or(0.0)].into()
    }
    fn jtvp_v_h(&self, _p: &Point, mu: &[f64]) -> RealVec {
        vec![-mu.first().copied().unwrap_or(0.0)].into()
    }
    fn hess_vv_g(&self, _p: &Point) -> Option<nalgebra::DMatrix<f64>> {
        Some(nalgebra::DMatrix::from_element(1, 1, 2.0))
    }
    fn jac_uv_g(&self, _p: &Point) -> Option<nalgebra::DMatrix<f64>> {
        Some(nalgebra::DMatrix::from_element(1, 1, -2.0))
    }
    fn has_dense(&self) -> bool {
        true
    }
}

/// The constrained toy with its inequality converted to `h + s² = 0`.
///
/// Points of the returned instance are `(u, s; v)`; the metric and `f`
/// ignore the slack.
/// The toy has no random data; `_seed` is accepted for a uniform factory signature.
pub fn make_constrained_toy(_seed: RngSeed) -> ProblemInstance {
    let oracle: Arc<Slackified<ConstrainedToy>> =
        Arc::new(slackify(ConstrainedToy::default()).expect("toy has one constraint"));
    let bounds = BoxBounds::symmetric(5.0).expect("valid box");
    let metric: Metric = Arc::new(|p: &Point| {
        let (u0, v0) = CONSTRAINED_OPTIMUM;
        ((p.u[0] - u0).powi(2) + (p.v[0] - v0).powi(2)).sqrt()
    });
    let init_oracle = Arc::clone(&oracle);
    ProblemInstance {
        name: "constrained".into(),
        oracle,
        metric: Some(metric),
        init: Arc::new(move |seed: RngSeed| {
            let mut rng = seed.stream(1);
            let u = uniform_vec(&mut rng, 1, bounds);
            let v = uniform_vec(&mut rng, 1, bounds);
            init_oracle.lift_point(&Point { u, v })
        }),
        bounds: Some(bounds),
    }
}
