//! Untargeted data poisoning of a two-class logistic regression.
//!
//! The upper variable stacks the features of `n_poison` injected points
//! (`u = (x₁, y₁, x₂, y₂, …)`) whose labels are fixed. The lower level fits
//! the classifier on clean plus poison data, and the upper level minimizes
//! the negated clean validation cross-entropy.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;

use super::data::{
    accuracy, fit_logistic, log_loss, logit, logit_of, mean_log_loss, sigmoid, two_gaussians,
    DatasetSplit, Split, LOGISTIC_RIDGE,
};
use super::ProblemInstance;
use crate::error::{BilevelError, Result};
use crate::numeric::{BoxBounds, RealVec, RngSeed};
use crate::oracle::{BilevelOracle, Dims, Point};

/// Feature box for the poison points.
pub const POISON_BOX: f64 = 5.0;

const FEATURES: usize = 2;

#[derive(Debug, Clone)]
pub struct PoisonProblem {
    pub data: DatasetSplit,
    /// Fixed labels of the poison points.
    pub poison_labels: Vec<f64>,
    /// Initial poison features: randomly chosen training points.
    pub poison_init: RealVec,
}

impl PoisonProblem {
    pub fn new(seed: RngSeed, n_train: usize, n_val: usize, n_poison: usize) -> Result<Self> {
        if n_poison == 0 {
            return Err(BilevelError::contract("poison toy needs n_poison >= 1"));
        }
        if n_poison > n_train {
            return Err(BilevelError::contract(format!(
                "n_poison = {n_poison} exceeds n_train = {n_train}"
            )));
        }
        if n_val == 0 {
            return Err(BilevelError::contract("poison toy needs n_val >= 1"));
        }
        let mut rng = seed.stream(2);
        let train = two_gaussians(&mut rng, n_train);
        let val = two_gaussians(&mut rng, n_val);
        let test = two_gaussians(&mut rng, n_train.max(1000));
        let sources = sample(&mut rng, n_train, n_poison).into_vec();
        let mut poison_init = RealVec::zeros(FEATURES * n_poison);
        let mut poison_labels = Vec::with_capacity(n_poison);
        for (k, &i) in sources.iter().enumerate() {
            for j in 0..FEATURES {
                poison_init[FEATURES * k + j] = train.x[(i, j)];
            }
            poison_labels.push(1.0 - train.y[i]);
        }
        Ok(Self {
            data: DatasetSplit {
                flipped: vec![false; n_train],
                train,
                val,
                test,
            },
            poison_labels,
            poison_init,
        })
    }

    pub fn n_poison(&self) -> usize {
        self.poison_labels.len()
    }

    fn total(&self) -> f64 {
        (self.data.train.len() + self.n_poison()) as f64
    }

    fn poison_point<'a>(&self, u: &'a [f64], k: usize) -> &'a [f64] {
        &u[FEATURES * k..FEATURES * (k + 1)]
    }

    /// Clean training set followed by the poison points at `u`.
    pub fn poisoned_train(&self, u: &[f64]) -> Split {
        let poison = Split {
            x: DMatrix::from_row_slice(self.n_poison(), FEATURES, u),
            y: self.poison_labels.clone(),
        };
        self.data.train.concat(&poison)
    }

    /// Classifier refitted on clean plus poison data.
    pub fn retrain(&self, u: &[f64]) -> RealVec {
        let split = self.poisoned_train(u);
        fit_logistic(&split, &vec![1.0; split.len()], LOGISTIC_RIDGE)
    }

    /// Clean-test accuracy of the classifier refitted with poisons `u`.
    pub fn poisoned_accuracy(&self, u: &[f64]) -> f64 {
        accuracy(&self.retrain(u), &self.data.test)
    }

    /// Clean-test accuracy under the label-flip baseline (the initial poisons).
    pub fn label_flip_accuracy(&self) -> f64 {
        self.poisoned_accuracy(&self.poison_init)
    }

    pub fn instance(self: &Arc<Self>) -> ProblemInstance {
        let u0 = self.poison_init.clone();
        let w0 = self.retrain(&u0);
        ProblemInstance {
            name: "poison".into(),
            oracle: Arc::clone(self) as Arc<dyn BilevelOracle>,
            metric: None,
            init: Arc::new(move |_seed: RngSeed| Point::new(u0.clone(), w0.clone())),
            bounds: Some(BoxBounds::symmetric(POISON_BOX).expect("valid box")),
        }
    }
}

pub fn make_poison_toy(
    seed: RngSeed,
    n_train: usize,
    n_val: usize,
    n_poison: usize,
) -> Result<ProblemInstance> {
    Ok(Arc::new(PoisonProblem::new(seed, n_train, n_val, n_poison)?).instance())
}

impl BilevelOracle for PoisonProblem {
    fn dims(&self) -> Dims {
        Dims {
            u: FEATURES * self.n_poison(),
            v: FEATURES + 1,
            c: 0,
        }
    }
    fn f(&self, p: &Point) -> f64 {
        -mean_log_loss(&p.v, &self.data.val)
    }
    fn g(&self, p: &Point) -> f64 {
        let tr = &self.data.train;
        let clean: f64 = (0..tr.len())
            .map(|i| log_loss(logit(&p.v, &tr.x, i), tr.y[i]))
            .sum();
        let poison: f64 = (0..self.n_poison())
            .map(|k| log_loss(logit_of(&p.v, self.poison_point(&p.u, k)), self.poison_labels[k]))
            .sum();
        (clean + poison) / self.total() + LOGISTIC_RIDGE * p.v.norm_sq()
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        RealVec::zeros(p.u.dim())
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        let val = &self.data.val;
        let n = val.len() as f64;
        let mut g = RealVec::zeros(FEATURES + 1);
        for i in 0..val.len() {
            let r = -(sigmoid(logit(&p.v, &val.x, i)) - val.y[i]) / n;
            for j in 0..FEATURES {
                g[j] += r * val.x[(i, j)];
            }
            g[FEATURES] += r;
        }
        g
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        let tr = &self.data.train;
        let total = self.total();
        let mut g = RealVec::from_fn(FEATURES + 1, |j| 2.0 * LOGISTIC_RIDGE * p.v[j]);
        for i in 0..tr.len() {
            let r = (sigmoid(logit(&p.v, &tr.x, i)) - tr.y[i]) / total;
            for j in 0..FEATURES {
                g[j] += r * tr.x[(i, j)];
            }
            g[FEATURES] += r;
        }
        for k in 0..self.n_poison() {
            let x = self.poison_point(&p.u, k);
            let r = (sigmoid(logit_of(&p.v, x)) - self.poison_labels[k]) / total;
            for j in 0..FEATURES {
                g[j] += r * x[j];
            }
            g[FEATURES] += r;
        }
        g
    }
    fn hvp_vv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        let tr = &self.data.train;
        let total = self.total();
        let mut out = RealVec::from_fn(FEATURES + 1, |j| 2.0 * LOGISTIC_RIDGE * q[j]);
        let mut add = |x: &[f64]| {
            let s = sigmoid(logit_of(&p.v, x));
            let r = s * (1.0 - s) * logit_of(q, x) / total;
            for j in 0..FEATURES {
                out[j] += r * x[j];
            }
            out[FEATURES] += r;
        };
        for i in 0..tr.len() {
            add(&tr.row(i));
        }
        for k in 0..self.n_poison() {
            add(self.poison_point(&p.u, k));
        }
        out
    }
    fn jvp_uv_g(&self, p: &Point, q: &[f64]) -> RealVec {
        let total = self.total();
        let mut out = RealVec::zeros(p.u.dim());
        for k in 0..self.n_poison() {
            let x = self.poison_point(&p.u, k);
            let s = sigmoid(logit_of(&p.v, x));
            let xq = logit_of(q, x);
            for j in 0..FEATURES {
                out[FEATURES * k + j] =
                    (s * (1.0 - s) * p.v[j] * xq + (s - self.poison_labels[k]) * q[j]) / total;
            }
        }
        out
    }
    fn hess_vv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        let d = FEATURES + 1;
        let cols: Vec<RealVec> = (0..d)
            .map(|j| self.hvp_vv_g(p, &RealVec::unit(d, j)))
            .collect();
        Some(DMatrix::from_fn(d, d, |i, j| cols[j][i]))
    }
    fn jac_uv_g(&self, p: &Point) -> Option<DMatrix<f64>> {
        let d = FEATURES + 1;
        let cols: Vec<RealVec> = (0..d)
            .map(|j| self.jvp_uv_g(p, &RealVec::unit(d, j)))
            .collect();
        Some(DMatrix::from_fn(p.u.dim(), d, |i, j| cols[j][i]))
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
    fn zero_poisons_is_a_contract_violation() {
        assert!(matches!(
            PoisonProblem::new(RngSeed(0), 20, 10, 0),
            Err(BilevelError::Contract(_))
        ));
    }

    #[test]
    fn oracle_matches_finite_differences() {
        let p = Arc::new(PoisonProblem::new(RngSeed(1), 30, 20, 4).unwrap());
        let inst = p.instance();
        let mut pt = (inst.init)(RngSeed(0));
        pt.v = vec![0.8, -0.3, 0.2].into();
        let r = fd_check_oracle(inst.oracle.as_ref(), &pt, 1e-5).unwrap();
        assert!(r.max_error() < 1e-6, "{r:?}");
    }

    #[test]
    fn initial_objective_is_the_label_flip_baseline() {
        let p = Arc::new(PoisonProblem::new(RngSeed(2), 60, 30, 6).unwrap());
        let inst = p.instance();
        let pt = (inst.init)(RngSeed(9));
        let baseline = p.retrain(&p.poison_init);
        assert_eq!(inst.oracle.f(&pt), -mean_log_loss(&baseline, &p.data.val));
        let gn = inst.oracle.grad_v_g(&pt).norm();
        assert!(gn < 1e-10, "{gn}");
        for k in 0..6 {
            let x = &pt.u[2 * k..2 * k + 2];
            let found = (0..60).any(|i| {
                p.data.train.row(i) == x && p.data.train.y[i] == 1.0 - p.poison_labels[k]
            });
            assert!(found, "poison {k} is not a flipped training point");
        }
    }
}
