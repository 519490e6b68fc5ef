//! The penalty method: alternate `T` lower steps and one upper step on the
//! penalty function until its gradient falls below `ε`, then grow `γ` and
//! shrink `ε`.

use super::config::PenaltyConfig;
use super::trace::{Recorder, Schedule, SolveResult};
use crate::error::Result;
use crate::numeric::{AdamParams, RealVec, StepperState};
use crate::oracle::{grad_u_prechecked, grad_v_prechecked, BilevelOracle, PenaltyParams, Point};
use crate::problems::Metric;

/// Penalty loop without `λg` regularization or multipliers.
pub fn penalty_solve(
    oracle: &dyn BilevelOracle,
    start: &Point,
    cfg: &PenaltyConfig,
    metric: Option<&Metric>,
) -> SolveResult {
    run(oracle, start, cfg, metric, false)
}

/// Penalty loop with the regularizer `λ_k g` in the lower step, multipliers
/// `ν` (and `ν_h` for constraints) in both steps, and between phases
/// `λ ← c_λ λ`, `ν ← ν + γ∇_v g`, `ν_h ← ν_h + γh`.
pub fn penalty_aug_solve(
    oracle: &dyn BilevelOracle,
    start: &Point,
    cfg: &PenaltyConfig,
    metric: Option<&Metric>,
) -> SolveResult {
    run(oracle, start, cfg, metric, true)
}

fn run(
    oracle: &dyn BilevelOracle,
    start: &Point,
    cfg: &PenaltyConfig,
    metric: Option<&Metric>,
    augmented: bool,
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
    let mut params = PenaltyParams::plain(cfg.gamma0);
    if augmented {
        params.lambda = cfg.lambda0;
        params.nu = Some(RealVec::filled(dims.v, cfg.nu0));
        if dims.c > 0 {
            params.nu_h = Some(RealVec::filled(dims.c, cfg.nu0));
        }
    }
    let mut eps = cfg.eps0;
    let mut u_step = StepperState::new(cfg.stepper, dims.u, AdamParams::default());
    let mut v_step = StepperState::new(cfg.stepper, dims.v, AdamParams::default());
    if let Err(e) = params.validate(oracle) {
        return Err(rec.fail(e, 0));
    }
    oracle.note_stored(1);

    let mut k = 0;
    while k < cfg.k {
        let mut in_phase = 0;
        let converged = loop {
            let mut gv_norm = 0.0;
            for j in 0..cfg.t {
                let step = grad_v_prechecked(oracle, &p, &params).and_then(|gv| {
                    if j + 1 == cfg.t {
                        gv_norm = gv.norm();
                    }
                    v_step.step(&mut p.v, &gv, cfg.rho0)
                });
                if let Err(e) = step {
                    return Err(rec.fail(e, k + 1));
                }
                if let Some(b) = cfg.bounds {
                    b.clamp_in_place(&mut p.v);
                }
            }
            let mut gu_norm = 0.0;
            let step = grad_u_prechecked(oracle, &p, &params).and_then(|gu| {
                gu_norm = gu.norm();
                u_step.step(&mut p.u, &gu, cfg.sigma0)
            });
            if let Err(e) = step {
                return Err(rec.fail(e, k + 1));
            }
            if let Some(b) = cfg.bounds {
                b.clamp_in_place(&mut p.u);
            }
            k += 1;
            in_phase += 1;
            let schedule = Schedule {
                gamma: params.gamma,
                eps,
                lambda: params.lambda,
            };
            rec.record(k, &p, schedule, gu_norm, gv_norm);
            if gu_norm * gu_norm + gv_norm * gv_norm <= eps * eps {
                break true;
            }
            if in_phase >= cfg.while_cap || k >= cfg.k {
                break false;
            }
        };
        rec.trace.phases += 1;
        if !converged && in_phase >= cfg.while_cap {
            rec.trace.while_cap_hits += 1;
        }
        if augmented && cfg.multiplier_update {
            let raw = oracle.uncounted().unwrap_or(oracle);
            let gamma = params.gamma;
            if let Some(nu) = params.nu.as_mut() {
                nu.axpy(gamma, &raw.grad_v_g(&p));
            }
            if let (Some(nu_h), Some(h)) = (params.nu_h.as_mut(), raw.h(&p)) {
                nu_h.axpy(gamma, &h);
            }
        }
        if augmented {
            params.lambda *= cfg.c_lambda;
        }
        params.gamma = (params.gamma * cfg.c_gamma).min(cfg.gamma_max);
        eps *= cfg.c_eps;
    }
    let mut sol = rec.finish(p);
    sol.nu = params.nu;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{BoxBounds, RngSeed, StepperKind};
    use crate::oracle::fixtures::{pt, ScalarQuadratic};
    use crate::oracle::CountedOracle;
    use crate::problems::make_synthetic;

    fn small(k: usize, t: usize) -> PenaltyConfig {
        PenaltyConfig {
            k,
            t,
            record_every: 1,
            record_timing: false,
            ..PenaltyConfig::default()
        }
    }

    #[test]
    fn counters_per_upper_step() {
        let o = CountedOracle::new(ScalarQuadratic);
        let cfg = small(7, 4);
        penalty_solve(&o, &pt(1.0, -1.0), &cfg, None).unwrap();
        let c = o.counters();
        assert_eq!(c.n_hvp, 7 * 4);
        assert_eq!(c.n_jvp, 7);
        assert_eq!(c.peak_stored_vecs, 1);
        assert_eq!(c.n_dense_hess + c.n_dense_jac, 0);
    }

    #[test]
    fn schedule_follows_the_exact_recurrence() {
        let cfg = PenaltyConfig {
            while_cap: 1,
            ..small(30, 1)
        };
        let sol = penalty_solve(&ScalarQuadratic, &pt(3.0, -2.0), &cfg, None).unwrap();
        let (mut gamma, mut eps) = (cfg.gamma0, cfg.eps0);
        for r in &sol.trace.records {
            assert_eq!(r.gamma.to_bits(), gamma.to_bits());
            assert_eq!(r.eps.to_bits(), eps.to_bits());
            gamma *= cfg.c_gamma;
            eps *= cfg.c_eps;
        }
        assert_eq!(sol.trace.records.len(), 30);
        assert_eq!(sol.trace.phases, 30);
    }

    #[test]
    fn record_every_k_gives_one_row() {
        let cfg = PenaltyConfig {
            record_every: 25,
            ..small(25, 2)
        };
        let sol = penalty_solve(&ScalarQuadratic, &pt(0.0, 0.0), &cfg, None).unwrap();
        assert_eq!(sol.trace.records.len(), 1);
        assert_eq!(sol.trace.records[0].k, 25);
    }

    #[test]
    fn degenerate_augmented_config_matches_plain() {
        let inst = make_synthetic(1, 10, RngSeed(0)).unwrap();
        let start = (inst.init)(RngSeed(3));
        let cfg = PenaltyConfig {
            lambda0: 0.0,
            nu0: 0.0,
            c_lambda: 1.0,
            multiplier_update: false,
            record_every: 10,
            ..small(2000, 3)
        };
        let a = penalty_solve(inst.oracle.as_ref(), &start, &cfg, inst.metric.as_ref()).unwrap();
        let b = penalty_aug_solve(inst.oracle.as_ref(), &start, &cfg, inst.metric.as_ref()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.point, b.point);
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = make_synthetic(2, 10, RngSeed(1)).unwrap();
        let start = (inst.init)(RngSeed(2));
        let cfg = small(500, 2);
        let a = penalty_aug_solve(inst.oracle.as_ref(), &start, &cfg, inst.metric.as_ref()).unwrap();
        let b = penalty_aug_solve(inst.oracle.as_ref(), &start, &cfg, inst.metric.as_ref()).unwrap();
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn multiplier_update_hand_trace() {
        // One phase of length one (the tolerance is met immediately), then
        // ν₁ = ν₀ + γ₀ ∇_v g at the exit point.
        let cfg = PenaltyConfig {
            k: 1,
            t: 1,
            eps0: 1e6,
            nu0: 0.25,
            stepper: StepperKind::PlainGd,
            record_every: 1,
            record_timing: false,
            ..PenaltyConfig::default()
        };
        let start = pt(0.2, 0.1);
        let sol = penalty_aug_solve(&ScalarQuadratic, &start, &cfg, None).unwrap();
        // Replay the two updates by hand.
        let gvg = |u: f64, v: f64| -2.0 * (1.0 - u - v);
        let (u0, v0) = (0.2, 0.1);
        let w = cfg.gamma0 * gvg(u0, v0) + 0.25;
        let v1 = v0 - cfg.rho0 * (2.0 * v0 + 2.0 * w + cfg.lambda0 * gvg(u0, v0));
        let w1 = cfg.gamma0 * gvg(u0, v1) + 0.25;
        let u1 = u0 - cfg.sigma0 * (2.0 * u0 + 2.0 * w1);
        assert!((sol.point.v[0] - v1).abs() < 1e-15);
        assert!((sol.point.u[0] - u1).abs() < 1e-15);
        let nu1 = 0.25 + cfg.gamma0 * gvg(u1, v1);
        assert!((sol.nu.unwrap()[0] - nu1).abs() < 1e-15);
    }

    #[test]
    fn huge_gamma_drives_feasibility() {
        let cfg = PenaltyConfig {
            gamma0: 1e5,
            c_gamma: 1.0,
            stepper: StepperKind::PlainGd,
            rho0: 1e-6,
            sigma0: 1e-6,
            bounds: Some(BoxBounds::symmetric(5.0).unwrap()),
            record_every: 200,
            ..small(200, 50)
        };
        let sol = penalty_solve(&ScalarQuadratic, &pt(2.0, -3.0), &cfg, None).unwrap();
        let fz = sol.trace.last().unwrap().feas_norm;
        assert!(fz < 1e-3, "{fz}");
    }

    #[test]
    fn non_finite_gradients_abort_with_context() {
        struct Bad;
        impl BilevelOracle for Bad {
            fn dims(&self) -> crate::oracle::Dims {
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
                if p.v[0] < 0.0 {
                    vec![f64::NAN].into()
                } else {
                    ScalarQuadratic.grad_v_f(p)
                }
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
        }
        let err = penalty_solve(&Bad, &pt(0.0, -1.0), &small(10, 2), None).unwrap_err();
        assert_eq!(err.k, 1);
        assert!(err.trace.records.is_empty());
        assert!(err.to_string().contains("grad_v_f"), "{err}");
    }
}
