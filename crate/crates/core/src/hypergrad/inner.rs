//! Limited-memory BFGS for the smooth inner problems of the verifiers.

use std::collections::VecDeque;

use crate::error::{BilevelError, Result};
use crate::numeric::RealVec;

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: RealVec,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Minimizes `objective` (returning value and gradient) from `x0` until the
/// gradient norm is at most `tol`.
///
/// Near the optimum the objective differences drop below rounding error, so
/// a step that fails the Armijo test is still accepted when the value stays
/// within a few ulps and the directional derivative shrinks.
pub fn minimize(
    what: &str,
    mut objective: impl FnMut(&RealVec) -> Result<(f64, RealVec)>,
    x0: RealVec,
    tol: f64,
    max_iter: usize,
) -> Result<Minimum> {
    let mut x = x0;
    let (mut fx, mut gx) = objective(&x)?;
    let mut pairs: VecDeque<(RealVec, RealVec, f64)> = VecDeque::with_capacity(MEMORY);
    for iter in 0..max_iter {
        let gn = gx.norm();
        if gn <= tol {
            return Ok(Minimum {
                x,
                value: fx,
                grad_norm: gn,
                iterations: iter,
            });
        }
        let mut d = two_loop(&gx, &pairs);
        let mut slope = gx.dot(&d);
        if !(slope < 0.0) {
            pairs.clear();
            d = gx.scaled(-1.0);
            slope = -gn * gn;
        }
        if pairs.is_empty() {
            let scale = (1.0 / gn).min(1.0);
            d.scale(scale);
            slope *= scale;
        }
        let slack = 8.0 * f64::EPSILON * fx.abs().max(1e-300);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = x.clone();
            cand.axpy(t, &d);
            let (fc, gc) = objective(&cand)?;
            if fc.is_finite() {
                let armijo = fc <= fx + ARMIJO * t * slope;
                let flat = fc <= fx + slack && gc.dot(&d).abs() <= slope.abs();
                if armijo || flat {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            return Err(BilevelError::Convergence {
                what: format!("{what} (line search)"),
                residual: gn,
                iterations: iter,
            });
        };
        let s = xn.sub(&x);
        let y = gnew.sub(&gx);
        let sy = s.dot(&y);
        if sy > 1e-16 * s.norm() * y.norm() && sy > 0.0 {
            if pairs.len() == MEMORY {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fnew;
        gx = gnew;
    }
    let gn = gx.norm();
    if gn <= tol {
        return Ok(Minimum {
            x,
            value: fx,
            grad_norm: gn,
            iterations: max_iter,
        });
    }
    Err(BilevelError::Convergence {
        what: what.to_string(),
        residual: gn,
        iterations: max_iter,
    })
}

fn two_loop(g: &RealVec, pairs: &VecDeque<(RealVec, RealVec, f64)>) -> RealVec {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        q.scale(s.dot(y) / y.norm_sq());
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s);
    }
    q.scale(-1.0);
    q
}
