//! Alternating gradient descent and the hypergradient-based baselines:
//! reverse- and forward-mode unrolling of `T` lower steps, and the
//! approximate linear solve.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::config::{LinearSolver, PenaltyConfig};
use super::trace::{Recorder, Schedule, SolveResult};
use crate::error::{BilevelError, Result};
use crate::hypergrad::solve_checked;
use crate::numeric::{AdamParams, RealVec, StepperKind, StepperState};
use crate::oracle::{BilevelOracle, Point};
use crate::problems::Metric;

/// Largest `U·V` for which forward mode keeps its dense sensitivity matrix.
pub const FMD_MAX_ENTRIES: usize = 1_000_000;

fn finite(v: RealVec, source: &str) -> Result<RealVec> {
    v.ensure_finite(source)?;
    Ok(v)
}

fn check_inputs(oracle: &dyn BilevelOracle, u: &RealVec, v0: &RealVec, t: usize, rho: f64) -> Result<()> {
    Point::new(u.clone(), v0.clone()).check_dims(oracle.dims())?;
    if t == 0 {
        return Err(BilevelError::contract("T must be >= 1"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(BilevelError::contract(format!("rho must be positive, got {rho}")));
    }
    Ok(())
}

/// Hypergradient estimate and the lower iterate it was computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub hypergrad: RealVec,
    pub v_t: RealVec,
}

/// Reverse mode: `T` plain gradient steps `v ← v − ρ∇_v g` with the whole
/// trajectory kept, then `p ← p + B_t q`, `q ← A_t q` backwards from
/// `p = ∇_u f`, `q = ∇_v f` at `v_T`, with `A_t = I − ρ∇²_vv g` and
/// `B_t = −ρ∇²_uv g` taken at `v_{t−1}`.
pub fn rmd_hypergrad(
    oracle: &dyn BilevelOracle,
    u: &RealVec,
    v0: &RealVec,
    t: usize,
    rho: f64,
) -> Result<Estimate> {
    check_inputs(oracle, u, v0, t, rho)?;
    let mut traj = Vec::with_capacity(t + 1);
    traj.push(v0.clone());
    let mut p = Point::new(u.clone(), v0.clone());
    for _ in 0..t {
        let g = finite(oracle.grad_v_g(&p), "grad_v_g")?;
        p.v.axpy(-rho, &g);
        traj.push(p.v.clone());
    }
    oracle.note_stored(traj.len() as u64);
    let mut hg = finite(oracle.grad_u_f(&p), "grad_u_f")?;
    let mut q = finite(oracle.grad_v_f(&p), "grad_v_f")?;
    for v_prev in traj[..t].iter().rev() {
        p.v.clone_from(v_prev);
        let jq = finite(oracle.jvp_uv_g(&p, &q), "jvp_uv_g")?;
        hg.axpy(-rho, &jq);
        let hq = finite(oracle.hvp_vv_g(&p, &q), "hvp_vv_g")?;
        q.axpy(-rho, &hq);
    }
    Ok(Estimate {
        hypergrad: hg,
        v_t: traj.pop().expect("trajectory holds v_T"),
    })
}

/// Forward mode: carries the dense sensitivity `P = dv_t/du` (U×V) through
/// `P ← P A_t + B_t` alongside the lower steps and returns
/// `∇_u f + P ∇_v f` at `v_T`.
pub fn fmd_hypergrad(
    oracle: &dyn BilevelOracle,
    u: &RealVec,
    v0: &RealVec,
    t: usize,
    rho: f64,
) -> Result<Estimate> {
    check_fmd(oracle)?;
    check_inputs(oracle, u, v0, t, rho)?;
    let d = oracle.dims();
    oracle.note_stored(d.u as u64 + 1);
    let mut sens = DMatrix::<f64>::zeros(d.u, d.v);
    let mut p = Point::new(u.clone(), v0.clone());
    for _ in 0..t {
        let h = oracle
            .hess_vv_g(&p)
            .ok_or_else(|| BilevelError::Capability("hess_vv_g".into()))?;
        let j = oracle
            .jac_uv_g(&p)
            .ok_or_else(|| BilevelError::Capability("jac_uv_g".into()))?;
        let g = finite(oracle.grad_v_g(&p), "grad_v_g")?;
        let ph = &sens * &h;
        sens -= ph * rho;
        sens -= j * rho;
        p.v.axpy(-rho, &g);
    }
    if sens.iter().any(|x| !x.is_finite()) {
        return Err(BilevelError::non_finite("fmd sensitivity"));
    }
    let mut hg = finite(oracle.grad_u_f(&p), "grad_u_f")?;
    let fv = finite(oracle.grad_v_f(&p), "grad_v_f")?;
    let pf = &sens * DVector::from_column_slice(&fv);
    hg.axpy(1.0, pf.as_slice());
    Ok(Estimate {
        hypergrad: hg,
        v_t: p.v,
    })
}

fn check_fmd(oracle: &dyn BilevelOracle) -> Result<()> {
    let d = oracle.dims();
    if !oracle.has_dense() {
        return Err(BilevelError::Capability(
            "forward mode needs dense hess_vv_g and jac_uv_g".into(),
        ));
    }
    if d.u.saturating_mul(d.v) > FMD_MAX_ENTRIES {
        return Err(BilevelError::Capability(format!(
            "forward mode limited to U·V <= {FMD_MAX_ENTRIES} (U = {}, V = {})",
            d.u, d.v
        )));
    }
    Ok(())
}

/// Persistent state of the approximate-inversion estimator: the lower
/// stepper, the linear-system iterate `q` and its stepper.
#[derive(Debug, Clone)]
pub struct ApproxGradState {
    v_step: StepperState,
    q: RealVec,
    q_step: StepperState,
    /// `‖∇²_vv g q − ∇_v f‖` after the last solve (unregularized residual).
    pub residual: f64,
}

impl ApproxGradState {
    pub fn new(stepper: StepperKind, v_dim: usize) -> Self {
        Self {
            v_step: StepperState::new(stepper, v_dim, AdamParams::default()),
            q: RealVec::zeros(v_dim),
            q_step: StepperState::new(stepper, v_dim, AdamParams::default()),
            residual: f64::NAN,
        }
    }

    pub fn q(&self) -> &RealVec {
        &self.q
    }
}

/// Settings of one approximate-inversion estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxGradParams {
    pub t_v: usize,
    pub t_lin: usize,
    pub rho: f64,
    pub reg: f64,
    pub solver: LinearSolver,
}

/// `T_v` lower steps on `∇_v g`, then `T_lin` iterations on
/// `(∇²_vv g + λI) q = ∇_v f` warm-started from the stored `q`, returning
/// `∇_u f − ∇²_uv g q`.
pub fn approxgrad_step(
    oracle: &dyn BilevelOracle,
    state: &mut ApproxGradState,
    u: &RealVec,
    v0: &RealVec,
    prm: &ApproxGradParams,
    bounds: Option<crate::numeric::BoxBounds>,
) -> Result<Estimate> {
    check_inputs(oracle, u, v0, prm.t_v, prm.rho)?;
    if prm.t_lin == 0 {
        return Err(BilevelError::contract("T_lin must be >= 1"));
    }
    if !(prm.reg >= 0.0) {
        return Err(BilevelError::contract("reg_lambda must be >= 0"));
    }
    oracle.note_stored(2);
    let mut p = Point::new(u.clone(), v0.clone());
    for _ in 0..prm.t_v {
        let g = finite(oracle.grad_v_g(&p), "grad_v_g")?;
        state.v_step.step(&mut p.v, &g, prm.rho)?;
        if let Some(b) = bounds {
            b.clamp_in_place(&mut p.v);
        }
    }
    let b = finite(oracle.grad_v_f(&p), "grad_v_f")?;
    let apply = |q: &[f64]| -> Result<RealVec> {
        let mut out = finite(oracle.hvp_vv_g(&p, q), "hvp_vv_g")?;
        out.axpy(prm.reg, q);
        Ok(out)
    };
    match prm.solver {
        LinearSolver::Iterative => {
            for _ in 0..prm.t_lin {
                let r = apply(&state.q)?.sub(&b);
                let grad = apply(&r)?;
                state.q_step.step(&mut state.q, &grad, prm.rho)?;
            }
        }
        LinearSolver::ConjugateGradient => {
            let mut r = b.sub(&apply(&state.q)?);
            let mut dir = r.clone();
            let mut rr = r.norm_sq();
            for _ in 0..prm.t_lin {
                if rr == 0.0 {
                    break;
                }
                let ad = apply(&dir)?;
                let curv = dir.dot(&ad);
                if !(curv > 0.0) {
                    break;
                }
                let alpha = rr / curv;
                state.q.axpy(alpha, &dir);
                r.axpy(-alpha, &ad);
                let rr_new = r.norm_sq();
                dir.scale(rr_new / rr);
                dir.axpy(1.0, &r);
                rr = rr_new;
            }
        }
        LinearSolver::Dense => {
            let mut h = oracle
                .hess_vv_g(&p)
                .ok_or_else(|| BilevelError::Capability("hess_vv_g".into()))?;
            for i in 0..h.nrows() {
                h[(i, i)] += prm.reg;
            }
            state.q = solve_checked(&h, &b)?;
        }
    }
    state.q.ensure_finite("approxgrad linear solve")?;
    let raw = oracle.uncounted().unwrap_or(oracle);
    state.residual = raw.hvp_vv_g(&p, &state.q).sub(&b).norm();
    let mut hg = finite(oracle.grad_u_f(&p), "grad_u_f")?;
    let jq = finite(oracle.jvp_uv_g(&p, &state.q), "jvp_uv_g")?;
    hg.axpy(-1.0, &jq);
    Ok(Estimate {
        hypergrad: hg,
        v_t: p.v,
    })
}

/// One-shot approximate-inversion hypergradient from `q = 0` with the
/// stepper used for every update.
#[allow(clippy::too_many_arguments)]
pub fn approxgrad_hypergrad(
    oracle: &dyn BilevelOracle,
    u: &RealVec,
    v0: &RealVec,
    t_v: usize,
    t_lin: usize,
    rho: f64,
    reg_lambda: f64,
    solver: LinearSolver,
    stepper: StepperKind,
) -> Result<(Estimate, f64)> {
    let mut state = ApproxGradState::new(stepper, v0.dim());
    let prm = ApproxGradParams {
        t_v,
        t_lin,
        rho,
        reg: reg_lambda,
        solver,
    };
    let est = approxgrad_step(oracle, &mut state, u, v0, &prm, None)?;
    Ok((est, state.residual))
}

/// Hypergradient estimator driven by [`outer_loop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Rmd,
    Fmd,
    ApproxGrad,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Rmd => "rmd",
            Estimator::Fmd => "fmd",
            Estimator::ApproxGrad => "approxgrad",
        })
    }
}

impl FromStr for Estimator {
    type Err = BilevelError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmd" => Ok(Estimator::Rmd),
            "fmd" => Ok(Estimator::Fmd),
            "approxgrad" => Ok(Estimator::ApproxGrad),
            other => Err(BilevelError::contract(format!("unknown estimator '{other}'"))),
        }
    }
}

/// `K` upper steps along an estimated hypergradient, warm-starting the
/// lower variable from the previous `v_T`.
pub fn outer_loop(
    oracle: &dyn BilevelOracle,
    start: &Point,
    estimator: Estimator,
    cfg: &PenaltyConfig,
    metric: Option<&Metric>,
) -> SolveResult {
    let mut rec = Recorder::new(oracle, metric, cfg.record_every, cfg.record_timing);
    let setup = || -> Result<()> {
        cfg.validate()?;
        start.check_dims(oracle.dims())?;
        if estimator == Estimator::Fmd {
            check_fmd(oracle)?;
        }
        Ok(())
    };
    if let Err(e) = setup() {
        return Err(rec.fail(e, 0));
    }
    let dims = oracle.dims();
    let mut p = start.clone();
    let mut u_step = StepperState::new(cfg.stepper, dims.u, AdamParams::default());
    let mut ag = ApproxGradState::new(cfg.stepper, dims.v);
    let ag_params = ApproxGradParams {
        t_v: cfg.t,
        t_lin: cfg.t_lin(),
        rho: cfg.rho0,
        reg: cfg.approx_reg,
        solver: cfg.linear_solver,
    };
    for k in 1..=cfg.k {
        let est = match estimator {
            Estimator::Rmd => rmd_hypergrad(oracle, &p.u, &p.v, cfg.t, cfg.rho0),
            Estimator::Fmd => fmd_hypergrad(oracle, &p.u, &p.v, cfg.t, cfg.rho0),
            Estimator::ApproxGrad => {
                approxgrad_step(oracle, &mut ag, &p.u, &p.v, &ag_params, cfg.bounds)
            }
        };
        let est = match est {
            Ok(e) => e,
            Err(e) => return Err(rec.fail(e, k)),
        };
        p.v = est.v_t;
        if let Some(b) = cfg.bounds {
            b.clamp_in_place(&mut p.v);
        }
        if let Err(e) = u_step.step(&mut p.u, &est.hypergrad, cfg.sigma0) {
            return Err(rec.fail(e, k));
        }
        if let Some(b) = cfg.bounds {
            b.clamp_in_place(&mut p.u);
        }
        if rec.due(k) {
            let raw = oracle.uncounted().unwrap_or(oracle);
            let gv = raw.grad_v_g(&p).norm();
            rec.record(k, &p, Schedule::NONE, est.hypergrad.norm(), gv);
        }
    }
    Ok(rec.finish(p))
}

/// Alternating descent: `T` steps `v ← v − ρ∇_v g`, then `u ← u − σ∇_u f`.
pub fn gd_alternating(
    oracle: &dyn BilevelOracle,
    start: &Point,
    cfg: &PenaltyConfig,
    metric: Option<&Metric>,
) -> SolveResult {
    let mut rec = Recorder::new(oracle, metric, cfg.record_every, cfg.record_timing);
    let setup = || -> Result<()> {
        cfg.validate()?;
        start.check_dims(oracle.dims())
    };
    if let Err(e) = setup() {
        return Err(rec.fail(e, 0));
    }
    let dims = oracle.dims();
    let mut p = start.clone();
    let mut u_step = StepperState::new(cfg.stepper, dims.u, AdamParams::default());
    let mut v_step = StepperState::new(cfg.stepper, dims.v, AdamParams::default());
    oracle.note_stored(1);
    for k in 1..=cfg.k {
        let mut gv_norm = 0.0;
        for _ in 0..cfg.t {
            let step = finite(oracle.grad_v_g(&p), "grad_v_g").and_then(|g| {
                gv_norm = g.norm();
                v_step.step(&mut p.v, &g, cfg.rho0)
            });
            if let Err(e) = step {
                return Err(rec.fail(e, k));
            }
            if let Some(b) = cfg.bounds {
                b.clamp_in_place(&mut p.v);
            }
        }
        let mut gu_norm = 0.0;
        let step = finite(oracle.grad_u_f(&p), "grad_u_f").and_then(|g| {
            gu_norm = g.norm();
            u_step.step(&mut p.u, &g, cfg.sigma0)
        });
        if let Err(e) = step {
            return Err(rec.fail(e, k));
        }
        if let Some(b) = cfg.bounds {
            b.clamp_in_place(&mut p.u);
        }
        rec.record(k, &p, Schedule::NONE, gu_norm, gv_norm);
    }
    Ok(rec.finish(p))
}
