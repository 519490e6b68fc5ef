//! Central-difference self-checks of analytic oracle callbacks.

use rand::Rng;

use super::{BilevelOracle, Point};
use crate::error::{BilevelError, Result};
use crate::numeric::{RealVec, RngSeed};

const DIRECTIONS: usize = 3;
const DIRECTION_SEED: RngSeed = RngSeed(0x00fd_c4ec);

/// Maximum relative error per callback, `‖analytic − fd‖ / max(1, ‖fd‖)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub grad_u_f: f64,
    pub grad_v_f: f64,
    pub grad_v_g: f64,
    pub hvp_vv_g: f64,
    pub jvp_uv_g: f64,
    /// Both constraint transpose products; `None` without constraints.
    pub jtvp_h: Option<f64>,
}

impl FdReport {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut e = vec![
            ("grad_u_f", self.grad_u_f),
            ("grad_v_f", self.grad_v_f),
            ("grad_v_g", self.grad_v_g),
            ("hvp_vv_g", self.hvp_vv_g),
            ("jvp_uv_g", self.jvp_uv_g),
        ];
        if let Some(j) = self.jtvp_h {
            e.push(("jtvp_h", j));
        }
        e
    }

    pub fn max_error(&self) -> f64 {
        self.entries().iter().fold(0.0, |m, (_, e)| m.max(*e))
    }
}

fn rel_err(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = reference.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    if diff.is_nan() {
        f64::INFINITY
    } else {
        diff / scale
    }
}

fn shifted(p: &Point, du: Option<(usize, f64)>, dv: Option<(&[f64], f64)>) -> Point {
    let mut q = p.clone();
    if let Some((i, h)) = du {
        q.u[i] += h;
    }
    if let Some((dir, h)) = dv {
        q.v.axpy(h, dir);
    }
    q
}

fn fd_grad_u(p: &Point, eps: f64, fun: impl Fn(&Point) -> f64) -> RealVec {
    RealVec::from_fn(p.u.dim(), |i| {
        (fun(&shifted(p, Some((i, eps)), None)) - fun(&shifted(p, Some((i, -eps)), None)))
            / (2.0 * eps)
    })
}

fn fd_grad_v(p: &Point, eps: f64, fun: impl Fn(&Point) -> f64) -> RealVec {
    let mut q = p.clone();
    RealVec::from_fn(p.v.dim(), |i| {
        let x = q.v[i];
        q.v[i] = x + eps;
        let plus = fun(&q);
        q.v[i] = x - eps;
        let minus = fun(&q);
        q.v[i] = x;
        (plus - minus) / (2.0 * eps)
    })
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> RealVec {
    let mut d = RealVec::from_fn(dim, |_| rng.gen_range(-1.0..1.0));
    let n = d.norm();
    if n > 0.0 {
        d.scale(1.0 / n);
    }
    d
}

/// Compares every analytic callback of `oracle` with central differences at `p`.
///
/// HVP and JVP are checked along a few seeded random unit directions against
/// differences of `grad_v_g`; gradients are checked against `f` and `g`.
pub fn fd_check_oracle(oracle: &dyn BilevelOracle, p: &Point, eps: f64) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(BilevelError::contract(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let d = oracle.dims();
    p.check_dims(d)?;

    let grad_u_f = rel_err(&oracle.grad_u_f(p), &fd_grad_u(p, eps, |q| oracle.f(q)));
    let grad_v_f = rel_err(&oracle.grad_v_f(p), &fd_grad_v(p, eps, |q| oracle.f(q)));
    let grad_v_g = rel_err(&oracle.grad_v_g(p), &fd_grad_v(p, eps, |q| oracle.g(q)));

    let mut rng = DIRECTION_SEED.rng();
    let mut hvp_err: f64 = 0.0;
    let mut jvp_err: f64 = 0.0;
    for _ in 0..DIRECTIONS {
        let dir = random_unit(&mut rng, d.v);
        let plus = oracle.grad_v_g(&shifted(p, None, Some((&dir, eps))));
        let minus = oracle.grad_v_g(&shifted(p, None, Some((&dir, -eps))));
        let fd_hvp = plus.sub(&minus).scaled(0.5 / eps);
        hvp_err = hvp_err.max(rel_err(&oracle.hvp_vv_g(p, &dir), &fd_hvp));

        // (∇²_uv g · q)_i = ∂/∂u_i (∇_v g · q)
        let fd_jvp = RealVec::from_fn(d.u, |i| {
            let plus = oracle.grad_v_g(&shifted(p, Some((i, eps)), None));
            let minus = oracle.grad_v_g(&shifted(p, Some((i, -eps)), None));
            (plus.dot(&dir) - minus.dot(&dir)) / (2.0 * eps)
        });
        jvp_err = jvp_err.max(rel_err(&oracle.jvp_uv_g(p, &dir), &fd_jvp));
    }

    let jtvp_h = if d.c > 0 {
        let mut err: f64 = 0.0;
        for _ in 0..DIRECTIONS {
            let mu = random_unit(&mut rng, d.c);
            let weighted = |q: &Point| oracle.h(q).map_or(f64::NAN, |h| h.dot(&mu));
            err = err.max(rel_err(&oracle.jtvp_u_h(p, &mu), &fd_grad_u(p, eps, weighted)));
            err = err.max(rel_err(&oracle.jtvp_v_h(p, &mu), &fd_grad_v(p, eps, weighted)));
        }
        Some(err)
    } else {
        None
    };

    Ok(FdReport {
        grad_u_f,
        grad_v_f,
        grad_v_g,
        hvp_vv_g: hvp_err,
        jvp_uv_g: jvp_err,
        jtvp_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures::{pt, ScalarQuadratic};
    use crate::oracle::Dims;

    struct DoubledHvp;

    impl BilevelOracle for DoubledHvp {
        fn dims(&self) -> Dims {
            ScalarQuadratic.dims()
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
            ScalarQuadratic.hvp_vv_g(p, q).scaled(2.0)
        }
        fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
            ScalarQuadratic.jvp_uv_g(p, q)
        }
    }

    #[test]
    fn quadratic_passes() {
        let r = fd_check_oracle(&ScalarQuadratic, &pt(0.3, -1.2), 1e-5).unwrap();
        assert!(r.max_error() < 1e-6, "{r:?}");
        assert!(r.jtvp_h.is_none());
    }

    #[test]
    fn corrupted_hvp_is_detected() {
        let r = fd_check_oracle(&DoubledHvp, &pt(0.3, -1.2), 1e-5).unwrap();
        assert!(r.hvp_vv_g > 0.5, "{r:?}");
        assert!(r.grad_v_g < 1e-6);
    }

    #[test]
    fn step_range_is_enforced() {
        assert!(fd_check_oracle(&ScalarQuadratic, &pt(0.0, 0.0), 1e-2).is_err());
        assert!(fd_check_oracle(&ScalarQuadratic, &pt(0.0, 0.0), 1e-9).is_err());
    }
}
