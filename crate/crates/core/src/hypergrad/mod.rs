//! Reference hypergradients and optimality checks: the exact implicit
//! hypergradient, a finite-difference one, the penalty-gradient identity at
//! the inner minimizer, and a KKT residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{BilevelError, Result};
use crate::numeric::RealVec;
use crate::oracle::{penalty_grad_u, penalty_grad_v, penalty_value, BilevelOracle, PenaltyParams, Point};

pub mod inner;
mod kkt;

pub use inner::{minimize, Minimum};
pub use kkt::{kkt_residual, KktReport};

/// Largest lower-level Hessian condition estimate accepted by [`exact_hypergrad`].
pub const CONDITION_CAP: f64 = 1e12;

/// Iteration budget of every inner minimization run by the verifiers.
pub const INNER_MAX_ITER: usize = 20_000;

/// Dense `∇²_vv g`, from the dense callback when present and otherwise
/// assembled column by column from Hessian-vector products.
pub fn dense_hessian(oracle: &dyn BilevelOracle, p: &Point) -> DMatrix<f64> {
    if let Some(h) = oracle.hess_vv_g(p) {
        return h;
    }
    let v = oracle.dims().v;
    let cols: Vec<RealVec> = (0..v).map(|j| oracle.hvp_vv_g(p, &RealVec::unit(v, j))).collect();
    DMatrix::from_fn(v, v, |i, j| cols[j][i])
}

/// Dense `∇²_uv g` (U×V), with the same fallback as [`dense_hessian`].
pub fn dense_mixed(oracle: &dyn BilevelOracle, p: &Point) -> DMatrix<f64> {
    if let Some(j) = oracle.jac_uv_g(p) {
        return j;
    }
    let d = oracle.dims();
    let cols: Vec<RealVec> = (0..d.v).map(|j| oracle.jvp_uv_g(p, &RealVec::unit(d.v, j))).collect();
    DMatrix::from_fn(d.u, d.v, |i, j| cols[j][i])
}

/// Ratio of extreme singular values; infinite for an exactly singular matrix.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Solves `H x = b` after checking the condition estimate of `H`.
pub fn solve_checked(h: &DMatrix<f64>, b: &[f64]) -> Result<RealVec> {
    let condition = condition_estimate(h);
    if !(condition <= CONDITION_CAP) {
        return Err(BilevelError::Singular { condition });
    }
    let x = h
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(b))
        .ok_or(BilevelError::Singular { condition })?;
    Ok(RealVec::from(x.as_slice()))
}

/// `∇_u f − ∇²_uv g (∇²_vv g)⁻¹ ∇_v f` at `p`, by a dense solve.
pub fn exact_hypergrad(oracle: &dyn BilevelOracle, p: &Point) -> Result<RealVec> {
    if !oracle.has_dense() {
        return Err(BilevelError::Capability(
            "exact_hypergrad needs dense hess_vv_g and jac_uv_g".into(),
        ));
    }
    p.check_dims(oracle.dims())?;
    let h = oracle
        .hess_vv_g(p)
        .ok_or_else(|| BilevelError::Capability("hess_vv_g".into()))?;
    let j = oracle
        .jac_uv_g(p)
        .ok_or_else(|| BilevelError::Capability("jac_uv_g".into()))?;
    let q = solve_checked(&h, &oracle.grad_v_f(p))?;
    let jq = &j * DVector::from_column_slice(&q);
    let mut out = oracle.grad_u_f(p);
    out.axpy(-1.0, jq.as_slice());
    out.ensure_finite("exact_hypergrad")?;
    Ok(out)
}

/// Minimizes `g(u, ·)` from `v0` to `‖∇_v g‖ ≤ tol`.
pub fn solve_lower(oracle: &dyn BilevelOracle, u: &RealVec, v0: RealVec, tol: f64) -> Result<RealVec> {
    let objective = |v: &RealVec| {
        let p = Point::new(u.clone(), v.clone());
        Ok((oracle.g(&p), oracle.grad_v_g(&p)))
    };
    Ok(minimize("lower-level solve", objective, v0, tol, INNER_MAX_ITER)?.x)
}

/// Central finite differences of `u ↦ f(u, v*(u))`, solving the lower level
/// to `inner_tol` at every perturbed `u` (warm-started from `v*(u)`).
pub fn fd_hypergrad(
    oracle: &dyn BilevelOracle,
    u: &RealVec,
    v0: &RealVec,
    inner_tol: f64,
    fd_eps: f64,
) -> Result<RealVec> {
    let dims = oracle.dims();
    Point::new(u.clone(), v0.clone()).check_dims(dims)?;
    if !(fd_eps > 0.0 && inner_tol > 0.0) {
        return Err(BilevelError::contract("fd_hypergrad needs fd_eps > 0 and inner_tol > 0"));
    }
    let v_star = solve_lower(oracle, u, v0.clone(), inner_tol)?;
    let reduced = |du: &RealVec| -> Result<f64> {
        let v = solve_lower(oracle, du, v_star.clone(), inner_tol)?;
        Ok(oracle.f(&Point::new(du.clone(), v)))
    };
    let mut out = RealVec::zeros(dims.u);
    for i in 0..dims.u {
        let mut plus = u.clone();
        plus[i] += fd_eps;
        let mut minus = u.clone();
        minus[i] -= fd_eps;
        out[i] = (reduced(&plus)? - reduced(&minus)?) / (2.0 * fd_eps);
    }
    out.ensure_finite("fd_hypergrad")?;
    Ok(out)
}

/// Minimizes the penalty function `f + (γ/2)‖∇_v g‖²` over `v` at fixed `u`
/// and returns `‖∇_u f̃ − exact‖ / max(1, ‖exact‖)` at the minimizer, with
/// `exact` the implicit hypergradient at the same point.
pub fn verify_lemma3(
    oracle: &dyn BilevelOracle,
    u: &RealVec,
    v0: &RealVec,
    gamma: f64,
    inner_tol: f64,
) -> Result<f64> {
    if oracle.dims().c != 0 {
        return Err(BilevelError::contract(
            "the penalty-gradient identity needs an oracle without constraints",
        ));
    }
    if !(gamma > 0.0) {
        return Err(BilevelError::contract("gamma must be positive"));
    }
    let params = PenaltyParams::plain(gamma);
    let objective = |v: &RealVec| {
        let p = Point::new(u.clone(), v.clone());
        Ok((penalty_value(oracle, &p, &params)?, penalty_grad_v(oracle, &p, &params)?))
    };
    let v_hat = minimize("penalty inner minimization", objective, v0.clone(), inner_tol, INNER_MAX_ITER)?.x;
    let p = Point::new(u.clone(), v_hat);
    let grad = penalty_grad_u(oracle, &p, &params)?;
    let exact = exact_hypergrad(oracle, &p)?;
    Ok(grad.distance(&exact) / exact.norm().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngSeed;
    use crate::oracle::fixtures::{pt, ScalarQuadratic};
    use crate::problems::{make_hyperparam_ridge, make_random_quadratic, make_synthetic, RidgeProblem};

    #[test]
    fn scalar_examples() {
        let hg = exact_hypergrad(&ScalarQuadratic, &pt(0.5, 0.5)).unwrap();
        assert_eq!(hg[0], 0.0);
        let hg = exact_hypergrad(&ScalarQuadratic, &pt(0.3, 0.7)).unwrap();
        assert!((hg[0] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn singular_hessian_is_reported() {
        let inst = make_synthetic(3, 10, RngSeed(1)).unwrap();
        let p = (inst.init)(RngSeed(0));
        match exact_hypergrad(inst.oracle.as_ref(), &p) {
            Err(BilevelError::Singular { condition }) => assert!(condition > CONDITION_CAP),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn fd_matches_exact_on_example1() {
        let inst = make_synthetic(1, 10, RngSeed(0)).unwrap();
        let u = RealVec::filled(10, 0.3);
        let v0 = RealVec::zeros(10);
        let fd = fd_hypergrad(inst.oracle.as_ref(), &u, &v0, 1e-10, 1e-5).unwrap();
        let v = solve_lower(inst.oracle.as_ref(), &u, v0, 1e-12).unwrap();
        let exact = exact_hypergrad(inst.oracle.as_ref(), &Point::new(u, v)).unwrap();
        assert!(fd.distance(&exact) <= 1e-4 * exact.norm(), "{fd:?} vs {exact:?}");
    }

    #[test]
    fn fd_matches_exact_on_quadratic_and_ridge() {
        let q = make_random_quadratic(5, 5, RngSeed(3)).unwrap();
        let u = RealVec::from_fn(5, |i| 0.2 * i as f64 - 0.4);
        let fd = fd_hypergrad(q.oracle.as_ref(), &u, &RealVec::zeros(5), 1e-11, 1e-5).unwrap();
        let v = solve_lower(q.oracle.as_ref(), &u, RealVec::zeros(5), 1e-12).unwrap();
        let exact = exact_hypergrad(q.oracle.as_ref(), &Point::new(u, v)).unwrap();
        assert!(fd.distance(&exact) <= 1e-4 * exact.norm().max(1e-12));

        let r = RidgeProblem::new(RngSeed(5), 80, 6, 0.5).unwrap();
        let u: RealVec = vec![-0.4].into();
        let w = r.closed_form(-0.4);
        let exact = exact_hypergrad(&r, &Point::new(u.clone(), w)).unwrap();
        let h = 1e-5;
        let closed = (r.reduced_objective(-0.4 + h) - r.reduced_objective(-0.4 - h)) / (2.0 * h);
        assert!((exact[0] - closed).abs() <= 1e-4 * closed.abs().max(1.0));
        let fd = fd_hypergrad(&r, &u, &RealVec::zeros(6), 1e-11, 1e-5).unwrap();
        assert!((fd[0] - closed).abs() <= 1e-4 * closed.abs().max(1.0));
        assert!(make_hyperparam_ridge(RngSeed(5), 80, 6, 0.5).is_ok());
    }

    #[test]
    fn decoupled_problem_reduces_to_plain_differences() {
        let q = crate::problems::QuadraticBilevel::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DVector::from_column_slice(&[1.0, -1.0]),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DVector::from_column_slice(&[0.3, 0.1]),
        )
        .unwrap();
        let u: RealVec = vec![0.7, -0.2].into();
        let fd = fd_hypergrad(&q, &u, &RealVec::zeros(2), 1e-12, 1e-5).unwrap();
        let e = 1e-5;
        let f = |x: &RealVec| q.f(&Point::new(x.clone(), RealVec::zeros(2)));
        for i in 0..2 {
            let mut a = u.clone();
            a[i] += e;
            let mut b = u.clone();
            b[i] -= e;
            assert!((fd[i] - (f(&a) - f(&b)) / (2.0 * e)).abs() < 1e-8);
        }
    }

    #[test]
    fn lemma3_holds_for_several_gammas() {
        let inst = make_synthetic(1, 10, RngSeed(0)).unwrap();
        let mut rng = RngSeed(17).stream(0);
        let u = crate::numeric::uniform_vec(
            &mut rng,
            10,
            crate::numeric::BoxBounds::symmetric(5.0).unwrap(),
        );
        for gamma in [0.1, 10.0, 1000.0] {
            let err = verify_lemma3(inst.oracle.as_ref(), &u, &RealVec::zeros(10), gamma, 1e-10).unwrap();
            assert!(err < 1e-6, "gamma {gamma}: {err}");
        }
    }

    #[test]
    fn lemma3_rejects_constraints() {
        let inst = crate::problems::make_constrained_toy(RngSeed(0));
        let p = (inst.init)(RngSeed(0));
        assert!(matches!(
            verify_lemma3(inst.oracle.as_ref(), &p.u, &p.v, 1.0, 1e-8),
            Err(BilevelError::Contract(_))
        ));
    }
}
