//! Ridge hyperparameter tuning: the upper variable is the scalar
//! log-regularizer `u`, the lower level is
//! `min_w ‖X_tr w − y_tr‖²/N + e^u ‖w‖²` and the upper cost is the
//! validation mean squared error.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::data::{DatasetSplit, Split};
use super::{Metric, ProblemInstance};
use crate::error::{BilevelError, Result};
use crate::numeric::{RealVec, RngSeed};
use crate::oracle::{BilevelOracle, Dims, Point};

const GRID_POINTS: usize = 1000;
const GRID_HALF_WIDTH: f64 = 6.0;

#[derive(Debug, Clone)]
pub struct RidgeProblem {
    pub data: DatasetSplit,
    /// `X_trᵀX_tr / N`
    gram: DMatrix<f64>,
    /// `X_trᵀy_tr / N`
    xty: DVector<f64>,
    u_star: f64,
    u_center: f64,
}

fn gaussian_split(rng: &mut impl Rng, n: usize, w0: &DVector<f64>, noise: f64) -> Split {
    let d = w0.len();
    let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = (0..n)
        .map(|i| {
            (0..d).map(|j| x[(i, j)] * w0[j]).sum::<f64>()
                + noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Split { x, y }
}

impl RidgeProblem {
    /// `n` samples per split, `d` features, coefficients `w₀ ~ N(0, I)` and
    /// noise variance `reg_true · n`, which puts the Bayes-optimal
    /// regularizer near `reg_true`.
    pub fn new(seed: RngSeed, n: usize, d: usize, reg_true: f64) -> Result<Self> {
        if d == 0 || n < d {
            return Err(BilevelError::contract(format!(
                "ridge toy needs n >= d >= 1 (n = {n}, d = {d})"
            )));
        }
        if !(reg_true > 0.0 && reg_true.is_finite()) {
            return Err(BilevelError::contract("ridge toy needs reg_true > 0"));
        }
        let mut rng = seed.stream(2);
        let w0 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = (reg_true * n as f64).sqrt();
        let train = gaussian_split(&mut rng, n, &w0, noise);
        let val = gaussian_split(&mut rng, n, &w0, noise);
        let test = gaussian_split(&mut rng, n, &w0, noise);
        let nf = n as f64;
        let gram = train.x.transpose() * &train.x / nf;
        let xty = train.x.transpose() * DVector::from_column_slice(&train.y) / nf;
        let mut p = Self {
            data: DatasetSplit {
                train,
                val,
                test,
                flipped: vec![false; n],
            },
            gram,
            xty,
            u_star: f64::NAN,
            u_center: reg_true.ln(),
        };
        p.u_star = p.grid_optimum();
        Ok(p)
    }

    /// Closed-form `w*(u) = (XᵀX/N + e^u I)⁻¹ Xᵀy/N`.
    pub fn closed_form(&self, u: f64) -> RealVec {
        let d = self.gram.nrows();
        let m = &self.gram + DMatrix::identity(d, d) * u.exp();
        let w = m.cholesky().expect("ridge system is PD").solve(&self.xty);
        RealVec::from(w.as_slice())
    }

    /// Validation MSE at the closed-form lower solution.
    pub fn reduced_objective(&self, u: f64) -> f64 {
        self.val_mse(&self.closed_form(u))
    }

    pub fn val_mse(&self, w: &[f64]) -> f64 {
        mse(&self.data.val, w)
    }

    pub fn test_mse(&self, w: &[f64]) -> f64 {
        mse(&self.data.test, w)
    }

    /// Best `u` on a uniform 1000-point grid over `ln(reg_true) ± 6`, polished
    /// by golden-section search inside the neighbouring grid cells.
    fn grid_optimum(&self) -> f64 {
        let lo = self.u_center - GRID_HALF_WIDTH;
        let step = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
        let best = (0..GRID_POINTS)
            .map(|i| {
                let u = lo + step * i as f64;
                (u, self.reduced_objective(u))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty grid")
            .0;
        let (mut a, mut b) = (best - step, best + step);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        while b - a > 1e-10 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if self.reduced_objective(c) < self.reduced_objective(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    /// Log-regularizer minimizing the closed-form validation error.
    pub fn u_star(&self) -> f64 {
        self.u_star
    }

    pub fn into_instance(self) -> ProblemInstance {
        let u_star = self.u_star;
        let center = self.u_center;
        let d = self.gram.nrows();
        let metric: Metric = Arc::new(move |p: &Point| (p.u[0] - u_star).abs());
        ProblemInstance {
            name: "ridge".into(),
            oracle: Arc::new(self),
            metric: Some(metric),
            init: Arc::new(move |seed: RngSeed| {
                let mut rng = seed.stream(1);
                let u = center + rng.gen_range(-2.0..2.0);
                Point::new(vec![u], RealVec::zeros(d))
            }),
            bounds: None,
        }
    }
}

fn mse(split: &Split, w: &[f64]) -> f64 {
    let r = &split.x * DVector::from_column_slice(w) - DVector::from_column_slice(&split.y);
    r.norm_squared() / split.len() as f64
}

pub fn make_hyperparam_ridge(
    seed: RngSeed,
    n: usize,
    d: usize,
    reg_true: f64,
) -> Result<ProblemInstance> {
    Ok(RidgeProblem::new(seed, n, d, reg_true)?.into_instance())
}

impl BilevelOracle for RidgeProblem {
    fn dims(&self) -> Dims {
        Dims {
            u: 1,
            v: self.gram.nrows(),
            c: 0,
        }
    }
    fn f(&self, p: &Point) -> f64 {
        self.val_mse(&p.v)
    }
    fn g(&self, p: &Point) -> f64 {
        mse(&self.data.train, &p.v) + p.u[0].exp() * p.v.norm_sq()
    }
    fn grad_u_f(&self, _p: &Point) -> RealVec {
        RealVec::zeros(1)
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        let val = &self.data.val;
        let w = DVector::from_column_slice(&p.v);
        let r = &val.x * w - DVector::from_column_slice(&val.y);
        RealVec::from((val.x.transpose() * r * (2.0 / val.len() as f64)).as_slice())
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        let w = DVector::from_column_slice(&p.v);
        let g = (&self.gram * &w - &self.xty) * 2.0 + w * (2.0 * p.u[0].exp());
        RealVec::from(g.as_slice())
    }
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        let q = DVector::from_column_slice(q);
        let h = (&self.gram * &q + q * p.u[0].exp()) * 2.0;
        RealVec::from(h.as_slice())
    }
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        vec![2.0 * p.u[0].exp() * p.v.dot(q)].into()
    }
    fn hess_vv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        let d = self.gram.nrows();
        Some((&self.gram + DMatrix::identity(d, d) * p.u[0].exp()) * 2.0)
    }
    fn jac_uv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(1, p.v.dim(), &p.v) * (2.0 * p.u[0].exp()))
    }
    fn has_dense(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_check_oracle;

    #[test]
    fn oracle_matches_finite_differences() {
        let inst = make_hyperparam_ridge(RngSeed(1), 60, 8, 0.5).unwrap();
        let mut p = (inst.init)(RngSeed(3));
        p.v = RealVec::from_fn(8, |i| 0.1 * i as f64 - 0.3);
        let r = fd_check_oracle(inst.oracle.as_ref(), &p, 1e-5).unwrap();
        assert!(r.max_error() < 1e-6, "{r:?}");
    }

    #[test]
    fn closed_form_solves_lower_level() {
        let r = RidgeProblem::new(RngSeed(2), 40, 5, 1.0).unwrap();
        let w = r.closed_form(-0.7);
        let p = Point::new(vec![-0.7], w);
        assert!(r.grad_v_g(&p).norm() < 1e-12);
    }

    #[test]
    fn infinite_regularization_limit() {
        let r = RidgeProblem::new(RngSeed(3), 40, 5, 1.0).unwrap();
        let w = r.closed_form(40.0);
        assert!(w.max_abs() < 1e-15);
        let val = &r.data.val;
        let baseline = val.y.iter().map(|y| y * y).sum::<f64>() / val.len() as f64;
        assert!((r.reduced_objective(40.0) - baseline).abs() < 1e-12 * baseline);
    }

    #[test]
    fn grid_optimum_is_interior_and_stationary() {
        let r = RidgeProblem::new(RngSeed(4), 100, 10, 0.3).unwrap();
        let u = r.u_star();
        assert!((u - 0.3f64.ln()).abs() < GRID_HALF_WIDTH - 0.1, "u* = {u}");
        let h = 1e-4;
        let slope = (r.reduced_objective(u + h) - r.reduced_objective(u - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-6, "slope {slope}");
        assert!(r.reduced_objective(u) <= r.reduced_objective(u + 0.05));
        assert!(r.reduced_objective(u) <= r.reduced_objective(u - 0.05));
    }

    #[test]
    fn needs_enough_samples() {
        assert!(RidgeProblem::new(RngSeed(0), 3, 5, 1.0).is_err());
        assert!(RidgeProblem::new(RngSeed(0), 5, 5, -1.0).is_err());
    }
}
