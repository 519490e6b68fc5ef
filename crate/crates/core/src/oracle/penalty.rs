//! The penalty function
//! `f̃ = f + (γ/2)(‖h‖² + ‖∇_v g‖²) + νᵀ∇_v g + ν_hᵀh + λ g`
//! and its partial gradients.
//!
//! With `ν = ν_h = 0` and `λ = 0` this is the plain quadratic penalty. The
//! `λ g` term is a regularizer for the v-update only, so
//! [`penalty_grad_u`] leaves it out.

use super::{BilevelOracle, Point};
use crate::error::{BilevelError, Result};
use crate::numeric::{all_finite, check_same_dim, RealVec};

/// Penalty weight, lower-level regularization and multiplier estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyParams {
    pub gamma: f64,
    pub lambda: f64,
    /// Multiplier for `∇_v g = 0`; `None` means zero.
    pub nu: Option<RealVec>,
    /// Multiplier for `h = 0`; `None` means zero.
    pub nu_h: Option<RealVec>,
}

impl PenaltyParams {
    pub fn plain(gamma: f64) -> Self {
        Self {
            gamma,
            lambda: 0.0,
            nu: None,
            nu_h: None,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_nu(mut self, nu: RealVec) -> Self {
        self.nu = Some(nu);
        self
    }

    pub fn with_nu_h(mut self, nu_h: RealVec) -> Self {
        self.nu_h = Some(nu_h);
        self
    }

    pub(crate) fn validate(&self, oracle: &dyn BilevelOracle) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(BilevelError::contract(format!(
                "penalty weight must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(BilevelError::contract(format!(
                "regularization must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        let d = oracle.dims();
        if let Some(nu) = &self.nu {
            check_same_dim("multiplier nu", nu.dim(), d.v)?;
        }
        if let Some(nu_h) = &self.nu_h {
            check_same_dim("multiplier nu_h", nu_h.dim(), d.c)?;
        }
        Ok(())
    }
}

fn finite(x: f64, source: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(BilevelError::non_finite(source))
    }
}

fn finite_vec(x: RealVec, source: &str) -> Result<RealVec> {
    x.ensure_finite(source)?;
    Ok(x)
}

fn constraint(oracle: &dyn BilevelOracle, p: &Point) -> Result<Option<RealVec>> {
    if oracle.dims().c == 0 {
        return Ok(None);
    }
    match oracle.h(p) {
        Some(h) => {
            check_same_dim("h", h.dim(), oracle.dims().c)?;
            Ok(Some(finite_vec(h, "h")?))
        }
        None => Err(BilevelError::contract(
            "oracle declares constraints but h() returned None",
        )),
    }
}

/// `γ h + ν_h`, the vector that multiplies the constraint Jacobian.
fn constraint_weight(h: &RealVec, params: &PenaltyParams) -> RealVec {
    let mut w = h.scaled(params.gamma);
    if let Some(nu_h) = &params.nu_h {
        w.axpy(1.0, nu_h);
    }
    w
}

/// Turns `∇_v g` into `γ ∇_v g + ν`, the vector fed to the single HVP/JVP
/// per gradient.
fn into_stationarity_weight(grad_v_g: &mut RealVec, params: &PenaltyParams) {
    grad_v_g.scale(params.gamma);
    if let Some(nu) = &params.nu {
        grad_v_g.axpy(1.0, nu);
    }
}

/// Value of the penalty function at `p`.
pub fn penalty_value(oracle: &dyn BilevelOracle, p: &Point, params: &PenaltyParams) -> Result<f64> {
    params.validate(oracle)?;
    p.check_dims(oracle.dims())?;
    let f = finite(oracle.f(p), "f")?;
    if params.gamma == 0.0 && params.lambda == 0.0 && params.nu.is_none() && params.nu_h.is_none()
    {
        return Ok(f);
    }
    let gv = finite_vec(oracle.grad_v_g(p), "grad_v_g")?;
    let mut value = f + 0.5 * params.gamma * gv.norm_sq();
    if let Some(nu) = &params.nu {
        value += gv.dot(nu);
    }
    if let Some(h) = constraint(oracle, p)? {
        value += 0.5 * params.gamma * h.norm_sq();
        if let Some(nu_h) = &params.nu_h {
            value += h.dot(nu_h);
        }
    }
    if params.lambda != 0.0 {
        value += params.lambda * finite(oracle.g(p), "g")?;
    }
    finite(value, "penalty value")
}

/// `∇_v f̃ = ∇_v f + ∇²_vv g (γ∇_v g + ν) + λ∇_v g + (∂h/∂v)ᵀ(γh + ν_h)`.
///
/// Makes exactly one `hvp_vv_g` call.
pub fn penalty_grad_v(
    oracle: &dyn BilevelOracle,
    p: &Point,
    params: &PenaltyParams,
) -> Result<RealVec> {
    params.validate(oracle)?;
    p.check_dims(oracle.dims())?;
    grad_v_prechecked(oracle, p, params)
}

/// [`penalty_grad_v`] for callers that already validated `params` and `p`.
///
/// Only the result is checked; a non-finite result is traced back to the
/// first offending oracle call by [`diagnose`].
pub(crate) fn grad_v_prechecked(
    oracle: &dyn BilevelOracle,
    p: &Point,
    params: &PenaltyParams,
) -> Result<RealVec> {
    let (mut grad, mut weight) = oracle.grad_v_fg(p);
    if params.lambda != 0.0 {
        grad.axpy(params.lambda, &weight);
    }
    into_stationarity_weight(&mut weight, params);
    let ok = all_finite(&weight);
    grad.axpy(1.0, &oracle.hvp_vv_g(p, &weight));
    if let Some(h) = constraint(oracle, p)? {
        grad.axpy(1.0, &oracle.jtvp_v_h(p, &constraint_weight(&h, params)));
    }
    if ok && all_finite(&grad) {
        Ok(grad)
    } else {
        Err(diagnose(oracle, p, params, Side::V))
    }
}

/// `∇_u f̃ = ∇_u f + ∇²_uv g (γ∇_v g + ν) + (∂h/∂u)ᵀ(γh + ν_h)`.
///
/// Makes exactly one `jvp_uv_g` call. There is no `λ` term.
pub fn penalty_grad_u(
    oracle: &dyn BilevelOracle,
    p: &Point,
    params: &PenaltyParams,
) -> Result<RealVec> {
    params.validate(oracle)?;
    p.check_dims(oracle.dims())?;
    grad_u_prechecked(oracle, p, params)
}

/// [`penalty_grad_u`] for callers that already validated `params` and `p`.
pub(crate) fn grad_u_prechecked(
    oracle: &dyn BilevelOracle,
    p: &Point,
    params: &PenaltyParams,
) -> Result<RealVec> {
    let mut grad = oracle.grad_u_f(p);
    let mut weight = oracle.grad_v_g(p);
    into_stationarity_weight(&mut weight, params);
    let ok = all_finite(&weight);
    grad.axpy(1.0, &oracle.jvp_uv_g(p, &weight));
    if let Some(h) = constraint(oracle, p)? {
        grad.axpy(1.0, &oracle.jtvp_u_h(p, &constraint_weight(&h, params)));
    }
    if ok && all_finite(&grad) {
        Ok(grad)
    } else {
        Err(diagnose(oracle, p, params, Side::U))
    }
}

#[derive(Clone, Copy)]
enum Side {
    U,
    V,
}

/// Re-evaluates the pieces of a non-finite penalty gradient on the
/// uncounted oracle and names the first one that is not finite.
fn diagnose(oracle: &dyn BilevelOracle, p: &Point, params: &PenaltyParams, side: Side) -> BilevelError {
    let raw = oracle.uncounted().unwrap_or(oracle);
    let (first, whole) = match side {
        Side::U => ((raw.grad_u_f(p), "grad_u_f"), "penalty_grad_u"),
        Side::V => ((raw.grad_v_f(p), "grad_v_f"), "penalty_grad_v"),
    };
    let mut weight = raw.grad_v_g(p);
    let mut pieces = vec![first, (weight.clone(), "grad_v_g")];
    into_stationarity_weight(&mut weight, params);
    pieces.push(match side {
        Side::U => (raw.jvp_uv_g(p, &weight), "jvp_uv_g"),
        Side::V => (raw.hvp_vv_g(p, &weight), "hvp_vv_g"),
    });
    if let Ok(Some(h)) = constraint(raw, p) {
        let w = constraint_weight(&h, params);
        pieces.push(match side {
            Side::U => (raw.jtvp_u_h(p, &w), "jtvp_u_h"),
            Side::V => (raw.jtvp_v_h(p, &w), "jtvp_v_h"),
        });
    }
    let source = pieces
        .iter()
        .find(|(x, _)| !x.is_finite())
        .map_or(whole, |(_, s)| s);
    BilevelError::non_finite(source)
}
