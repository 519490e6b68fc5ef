//! Importance learning on a noisy two-class logistic regression.
//!
//! Each training example `i` carries a raw weight `u_i` mapped to
//! `u′_i = ½(tanh u_i + 1) ∈ (0, 1)`. The lower level fits
//! `w ↦ Σ u′_i ℓ_i(w) / Σ u′_i + 0.05‖w‖²` and the upper level is the
//! cross-entropy on the clean validation split.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::data::{
    fit_logistic, log_loss, logit, mean_log_loss, sigmoid, two_gaussians, DatasetSplit, Split,
    LOGISTIC_RIDGE,
};
use super::ProblemInstance;
use crate::error::{BilevelError, Result};
use crate::numeric::{RealVec, RngSeed};
use crate::oracle::{BilevelOracle, Dims, Point};

/// `u′ = ½(tanh u + 1)`
pub fn importance(u: f64) -> f64 {
    0.5 * (u.tanh() + 1.0)
}

fn importance_slope(u: f64) -> f64 {
    let t = u.tanh();
    0.5 * (1.0 - t * t)
}

#[derive(Debug, Clone)]
pub struct ImportanceProblem {
    pub data: DatasetSplit,
}

impl ImportanceProblem {
    /// Draws `n_train`, `n_val` and `n_train` test points; `noise_frac` of the
    /// training set has its label flipped, taken from class 0 only so the
    /// noise shifts the decision boundary instead of cancelling out.
    pub fn new(seed: RngSeed, n_train: usize, n_val: usize, noise_frac: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&noise_frac) {
            return Err(BilevelError::contract(format!(
                "noise_frac must lie in [0, 1), got {noise_frac}"
            )));
        }
        if n_train < 2 || n_val < 2 {
            return Err(BilevelError::contract("importance toy needs at least two points per split"));
        }
        let mut rng = seed.stream(2);
        let mut train = two_gaussians(&mut rng, n_train);
        let val = two_gaussians(&mut rng, n_val);
        let test = two_gaussians(&mut rng, n_train.max(1000));
        let mut class0: Vec<usize> = (0..n_train).filter(|&i| train.y[i] < 0.5).collect();
        class0.shuffle(&mut rng);
        let n_flip = ((noise_frac * n_train as f64).round() as usize).min(class0.len());
        let mut flipped = vec![false; n_train];
        for &i in &class0[..n_flip] {
            train.y[i] = 1.0;
            flipped[i] = true;
        }
        Ok(Self {
            data: DatasetSplit {
                train,
                val,
                test,
                flipped,
            },
        })
    }

    pub fn n_train(&self) -> usize {
        self.data.train.len()
    }

    /// Transformed importances `u′` of a raw upper iterate.
    pub fn weights(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&x| importance(x)).collect()
    }

    /// Mean `u′` over clean and over flipped training points.
    pub fn mean_importance(&self, u: &[f64]) -> (f64, f64) {
        let (mut clean, mut noisy) = ((0.0, 0usize), (0.0, 0usize));
        for (i, &x) in u.iter().enumerate() {
            let acc = if self.data.flipped[i] { &mut noisy } else { &mut clean };
            acc.0 += importance(x);
            acc.1 += 1;
        }
        let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
        (mean(clean), mean(noisy))
    }

    /// Classifier fitted with fixed per-example weights.
    pub fn retrain(&self, u: &[f64]) -> RealVec {
        fit_logistic(&self.data.train, &self.weights(u), LOGISTIC_RIDGE)
    }

    /// Classifier fitted on train and validation pooled with unit weights.
    pub fn pooled_baseline(&self) -> RealVec {
        let pooled: Split = self.data.train.concat(&self.data.val);
        fit_logistic(&pooled, &vec![1.0; pooled.len()], LOGISTIC_RIDGE)
    }

    /// `Σ a_i (σ_i − y_i) x̃_i / Σ a_i`
    fn weighted_grad(&self, a: &[f64], total: f64, w: &[f64]) -> RealVec {
        let tr = &self.data.train;
        let d = tr.features();
        let mut g = RealVec::zeros(d + 1);
        for i in 0..tr.len() {
            let r = a[i] * (sigmoid(logit(w, &tr.x, i)) - tr.y[i]) / total;
            for j in 0..d {
                g[j] += r * tr.x[(i, j)];
            }
            g[d] += r;
        }
        g
    }

    pub fn instance(self: &Arc<Self>) -> ProblemInstance {
        let n = self.n_train();
        let w0 = self.retrain(&vec![0.0; n]);
        ProblemInstance {
            name: "importance".into(),
            oracle: Arc::clone(self) as Arc<dyn BilevelOracle>,
            metric: None,
            init: Arc::new(move |_seed: RngSeed| Point::new(RealVec::zeros(n), w0.clone())),
            bounds: None,
        }
    }
}

pub fn make_importance_toy(
    seed: RngSeed,
    n_train: usize,
    n_val: usize,
    noise_frac: f64,
) -> Result<ProblemInstance> {
    Ok(Arc::new(ImportanceProblem::new(seed, n_train, n_val, noise_frac)?).instance())
}

impl BilevelOracle for ImportanceProblem {
    fn dims(&self) -> Dims {
        Dims {
            u: self.n_train(),
            v: self.data.train.features() + 1,
            c: 0,
        }
    }
    fn f(&self, p: &Point) -> f64 {
        mean_log_loss(&p.v, &self.data.val)
    }
    fn g(&self, p: &Point) -> f64 {
        let tr = &self.data.train;
        let a = self.weights(&p.u);
        let total: f64 = a.iter().sum();
        (0..tr.len())
            .map(|i| a[i] * log_loss(logit(&p.v, &tr.x, i), tr.y[i]))
            .sum::<f64>()
            / total
            + LOGISTIC_RIDGE * p.v.norm_sq()
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        RealVec::zeros(p.u.dim())
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        let val = &self.data.val;
        self.weighted_grad_on(val, &p.v)
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        let a = self.weights(&p.u);
        let total: f64 = a.iter().sum();
        let mut g = self.weighted_grad(&a, total, &p.v);
        g.axpy(2.0 * LOGISTIC_RIDGE, &p.v);
        g
    }
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        let tr = &self.data.train;
        let d = tr.features();
        let a = self.weights(&p.u);
        let total: f64 = a.iter().sum();
        let mut out = RealVec::from_fn(d + 1, |j| 2.0 * LOGISTIC_RIDGE * q[j]);
        for i in 0..tr.len() {
            let s = sigmoid(logit(&p.v, &tr.x, i));
            let r = a[i] * s * (1.0 - s) * logit(q, &tr.x, i) / total;
            for j in 0..d {
                out[j] += r * tr.x[(i, j)];
            }
            out[d] += r;
        }
        out
    }
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        let tr = &self.data.train;
        let a = self.weights(&p.u);
        let total: f64 = a.iter().sum();
        let gq = self.weighted_grad(&a, total, &p.v).dot(q);
        RealVec::from_fn(tr.len(), |i| {
            let r = sigmoid(logit(&p.v, &tr.x, i)) - tr.y[i];
            importance_slope(p.u[i]) / total * (r * logit(q, &tr.x, i) - gq)
        })
    }
    fn hess_vv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        let d = self.data.train.features() + 1;
        let cols: Vec<RealVec> = (0..d)
            .map(|j| self.hvp_vv_g(p, &RealVec::unit(d, j)))
            .collect();
        Some(DMatrix::from_fn(d, d, |i, j| cols[j][i]))
    }
    fn jac_uv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        let d = self.data.train.features() + 1;
        let cols: Vec<RealVec> = (0..d)
            .map(|j| self.jvp_uv_g(p, &RealVec::unit(d, j)))
            .collect();
        Some(DMatrix::from_fn(self.n_train(), d, |i, j| cols[j][i]))
    }
    fn has_dense(&self) -> bool {
        true
    }
}

impl ImportanceProblem {
    fn weighted_grad_on(&self, split: &Split, w: &[f64]) -> RealVec {
        let d = split.features();
        let n = split.len() as f64;
        let mut g = RealVec::zeros(d + 1);
        for i in 0..split.len() {
            let r = (sigmoid(logit(w, &split.x, i)) - split.y[i]) / n;
            for j in 0..d {
                g[j] += r * split.x[(i, j)];
            }
            g[d] += r;
        }
        g
    }
}
