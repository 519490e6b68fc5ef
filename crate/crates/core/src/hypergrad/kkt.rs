//! KKT residual of the single-level reformulation
//! `min_w f(w)` s.t. `g̃(w) = (h(w); ∇_v g(w)) = 0`, `w = (u, v)`.

use nalgebra::{DMatrix, DVector};

use super::{dense_hessian, dense_mixed};
use crate::numeric::RealVec;
use crate::oracle::{dense_jac_u_h, dense_jac_v_h, BilevelOracle, Point};

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `‖g̃(w)‖`
    pub feasibility: f64,
    /// `‖∇_w f − J_wᵀ μ̂‖` with `μ̂` the least-squares multiplier.
    pub stationarity: f64,
    /// `μ̂`, ordered as `g̃`: constraint entries first.
    pub multiplier: RealVec,
    /// `−γ g̃(w)`, the multiplier implied by the penalty.
    pub penalty_multiplier: RealVec,
    /// Numerical rank of `J_w g̃` (full rank `C + V` means LICQ holds).
    pub jacobian_rank: usize,
}

/// `J_w g̃` as a `(C+V) × (U+V)` matrix.
fn constraint_jacobian(oracle: &dyn BilevelOracle, p: &Point) -> DMatrix<f64> {
    let d = oracle.dims();
    let hv = dense_hessian(oracle, p);
    let juv = dense_mixed(oracle, p);
    let mut jac = DMatrix::zeros(d.c + d.v, d.u + d.v);
    if d.c > 0 {
        jac.view_mut((0, 0), (d.c, d.u)).copy_from(&dense_jac_u_h(oracle, p));
        jac.view_mut((0, d.u), (d.c, d.v)).copy_from(&dense_jac_v_h(oracle, p));
    }
    jac.view_mut((d.c, 0), (d.v, d.u)).copy_from(&juv.transpose());
    jac.view_mut((d.c, d.u), (d.v, d.v)).copy_from(&hv);
    jac
}

pub fn kkt_residual(oracle: &dyn BilevelOracle, p: &Point, gamma: f64) -> KktReport {
    let gv = oracle.grad_v_g(p);
    let g_tilde = match oracle.h(p) {
        Some(h) => h.concat(&gv),
        None => gv,
    };
    let grad_f = oracle.grad_u_f(p).concat(&oracle.grad_v_f(p));
    let jac = constraint_jacobian(oracle, p);
    let jt = jac.transpose();
    let b = DVector::from_column_slice(&grad_f);
    let svd = jt.clone().svd(true, true);
    let cutoff = RANK_TOL * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let rank = svd.rank(cutoff);
    let mu = svd.solve(&b, cutoff).expect("both factors were computed");
    let residual = &b - &jt * &mu;
    KktReport {
        feasibility: g_tilde.norm(),
        stationarity: residual.norm(),
        multiplier: RealVec::from(mu.as_slice()),
        penalty_multiplier: g_tilde.scaled(-gamma),
        jacobian_rank: rank,
    }
}
