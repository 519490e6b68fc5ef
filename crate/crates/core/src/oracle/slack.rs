//! Inequality constraints `h ≤ 0` rewritten as `h + s² = 0` with slack
//! variables appended to the upper-level block.

use nalgebra::DMatrix;

use super::{BilevelOracle, Dims, Point};
use crate::error::{BilevelError, Result};
use crate::numeric::RealVec;

/// Lower bound on `-h` when initializing slacks, so a start point with
/// active or violated constraints still gets a nonzero slack.
pub const SLACK_FLOOR: f64 = 1e-3;

/// Oracle with upper variable `(u, s)` and equality constraints `h(u, v) + s²`.
///
/// `f` and `g` ignore the slack coordinates.
#[derive(Debug, Clone)]
pub struct Slackified<O> {
    inner: O,
}

/// Wraps an oracle whose `h` encodes inequality constraints `h ≤ 0`.
pub fn slackify<O: BilevelOracle>(oracle: O) -> Result<Slackified<O>> {
    if oracle.dims().c == 0 {
        return Err(BilevelError::contract(
            "slackify needs at least one inequality constraint",
        ));
    }
    Ok(Slackified { inner: oracle })
}

impl<O: BilevelOracle> Slackified<O> {
    pub fn inner(&self) -> &O {
        &self.inner
    }

    fn base_u(&self) -> usize {
        self.inner.dims().u
    }

    /// Drops the slack coordinates.
    pub fn project_point(&self, p: &Point) -> Point {
        let (u, _) = p.u.split(self.base_u());
        Point { u, v: p.v.clone() }
    }

    pub fn slacks<'a>(&self, p: &'a Point) -> &'a [f64] {
        &p.u[self.base_u()..]
    }

    /// Appends slacks `s_i = sqrt(max(−h_i, SLACK_FLOOR))` to a point of the
    /// original problem.
    pub fn lift_point(&self, p: &Point) -> Point {
        let h = self.inner.h(p).unwrap_or_else(|| RealVec::zeros(0));
        let s: Vec<f64> = h.iter().map(|hi| (-hi).max(SLACK_FLOOR).sqrt()).collect();
        Point {
            u: p.u.concat(&s),
            v: p.v.clone(),
        }
    }

    fn pad_u(&self, g: RealVec) -> RealVec {
        g.concat(&vec![0.0; self.inner.dims().c])
    }
}

impl<O: BilevelOracle> BilevelOracle for Slackified<O> {
    fn dims(&self) -> Dims {
        let d = self.inner.dims();
        Dims {
            u: d.u + d.c,
            v: d.v,
            c: d.c,
        }
    }
    fn f(&self, p: &Point) -> f64 {
        self.inner.f(&self.project_point(p))
    }
    fn g(&self, p: &Point) -> f64 {
        self.inner.g(&self.project_point(p))
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        self.pad_u(self.inner.grad_u_f(&self.project_point(p)))
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        self.inner.grad_v_f(&self.project_point(p))
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        self.inner.grad_v_g(&self.project_point(p))
    }
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        self.inner.hvp_vv_g(&self.project_point(p), q)
    }
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        self.pad_u(self.inner.jvp_uv_g(&self.project_point(p), q))
    }
    fn h(&self, p: &Point) -> Option<RealVec> {
        let mut h = self.inner.h(&self.project_point(p))?;
        for (hi, s) in h.iter_mut().zip(self.slacks(p)) {
            *hi += s * s;
        }
        Some(h)
    }
    fn jtvp_u_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        let base = self.inner.jtvp_u_h(&self.project_point(p), mu);
        let slack_part: Vec<f64> = self
            .slacks(p)
            .iter()
            .zip(mu)
            .map(|(s, m)| 2.0 * s * m)
            .collect();
        base.concat(&slack_part)
    }
    fn jtvp_v_h(&self, p: &Point, mu: &[f64]) -> RealVec {
        self.inner.jtvp_v_h(&self.project_point(p), mu)
    }
    fn hess_vv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        self.inner.hess_vv_g(&self.project_point(p))
    }
    fn jac_uv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        let j = self.inner.jac_uv_g(&self.project_point(p))?;
        let d = self.inner.dims();
        Some(j.resize_vertically(d.u + d.c, 0.0))
    }
    fn has_dense(&self) -> bool {
        self.inner.has_dense()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures::{pt, ScalarQuadratic};
    use crate::oracle::{penalty_grad_u, PenaltyParams};
    use approx::assert_abs_diff_eq;

    /// `ScalarQuadratic` with the inequality `u + v − 1 ≤ 0`.
    struct WithCap;

    impl BilevelOracle for WithCap {
        fn dims(&self) -> Dims {
            Dims { u: 1, v: 1, c: 1 }
        }
        fn f(&self, p: &Point) -> f64 {
            ScalarQuadratic.f(p)
        }
        fn g(&self, p: &Point) -> f64 {
            ScalarQuadratic.g(p)
        }
        fn grad_u_f(&self, p: &Point) -> RealVec {
            ScalarQuadratic.grad_u_f(p)
        }
        fn grad_v_f(&self, p: &Point) -> RealVec {
            ScalarQuadratic.grad_v_f(p)
        }
        fn grad_v_g(&self, p: &Point) -> RealVec {
            ScalarQuadratic.grad_v_g(p)
        }
        fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
            ScalarQuadratic.hvp_vv_g(p, q)
        }
        fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
            ScalarQuadratic.jvp_uv_g(p, q)
        }
        fn h(&self, p: &Point) -> Option<RealVec> {
            Some(vec![p.u[0] + p.v[0] - 1.0].into())
        }
        fn jtvp_u_h(&self, _p: &Point, mu: &[f64]) -> RealVec {
            vec![mu[0]].into()
        }
        fn jtvp_v_h(&self, _p: &Point, mu: &[f64]) -> RealVec {
            vec![mu[0]].into()
        }
    }

    #[test]
    fn slack_encoding_examples() {
        let o = slackify(WithCap).unwrap();
        assert_eq!(o.dims(), Dims { u: 2, v: 1, c: 1 });
        let p = Point::new(vec![0.2, 0.5f64.sqrt()], vec![0.3]);
        assert!(o.h(&p).unwrap()[0].abs() < 1e-12);
        let p0 = Point::new(vec![0.2, 0.0], vec![0.3]);
        assert_eq!(o.h(&p0).unwrap()[0], WithCap.h(&pt(0.2, 0.3)).unwrap()[0]);
    }

    #[test]
    fn slack_gradient_of_squared_violation() {
        // d/ds of (γ/2)‖h + s²‖² at h = −0.5, s = 0.5 with γ = 2 is 2·(−0.25)·(2·0.5).
        let o = slackify(WithCap).unwrap();
        let p = Point::new(vec![0.2, 0.5], vec![0.3]);
        let g = penalty_grad_u(&o, &p, &PenaltyParams::plain(2.0)).unwrap();
        let lower = ScalarQuadratic.grad_v_g(&pt(0.2, 0.3))[0];
        assert_abs_diff_eq!(g[1], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0], 0.4 + 2.0 * 2.0 * lower + 2.0 * (-0.25), epsilon = 1e-12);
    }

    #[test]
    fn costs_ignore_slacks_and_lift_initializes() {
        let o = slackify(WithCap).unwrap();
        for s in [0.0, 0.3, -2.0] {
            let p = Point::new(vec![0.4, s], vec![-0.1]);
            assert_eq!(o.f(&p), WithCap.f(&pt(0.4, -0.1)));
            assert_eq!(o.g(&p), WithCap.g(&pt(0.4, -0.1)));
        }
        let lifted = o.lift_point(&pt(0.1, 0.2));
        assert_abs_diff_eq!(lifted.u[1], 0.7f64.sqrt(), epsilon = 1e-15);
        let lifted = o.lift_point(&pt(1.0, 1.0));
        assert_abs_diff_eq!(lifted.u[1], SLACK_FLOOR.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn requires_constraints() {
        assert!(matches!(
            slackify(ScalarQuadratic),
            Err(BilevelError::Contract(_))
        ));
    }
}
