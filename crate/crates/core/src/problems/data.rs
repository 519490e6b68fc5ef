//! Small synthetic datasets and the logistic-regression pieces shared by the
//! importance-learning and poisoning toys.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::numeric::RealVec;

/// Ridge coefficient of every logistic-regression lower level.
pub const LOGISTIC_RIDGE: f64 = 0.05;

/// Class means are `(±CLASS_OFFSET, 0)` with unit isotropic covariance.
pub const CLASS_OFFSET: f64 = 1.5;

/// Features `x` (n × d) with targets `y` (labels `0.0`/`1.0` for classification).
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Split) -> Split {
        let d = self.features();
        let n = self.len() + other.len();
        let x = DMatrix::from_fn(n, d, |i, j| {
            if i < self.len() {
                self.x[(i, j)]
            } else {
                other.x[(i - self.len(), j)]
            }
        });
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Split { x, y }
    }
}

/// Train/validation/test splits. `flipped[i]` marks training labels that
/// were corrupted (all `false` when no noise was injected).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub flipped: Vec<bool>,
}

impl DatasetSplit {
    /// Writes one CSV per split with header `x1,x2,label[,flipped]`.
    pub fn write_csv(&self, dir: &std::path::Path, stem: &str) -> std::io::Result<()> {
        for (name, split, flips) in [
            ("train", &self.train, Some(&self.flipped)),
            ("val", &self.val, None),
            ("test", &self.test, None),
        ] {
            let mut out = std::fs::File::create(dir.join(format!("{stem}_{name}.csv")))?;
            let header: Vec<String> = (1..=split.features()).map(|j| format!("x{j}")).collect();
            write!(out, "{},label", header.join(","))?;
            if flips.is_some() {
                write!(out, ",flipped")?;
            }
            writeln!(out)?;
            for i in 0..split.len() {
                let row: Vec<String> = split.row(i).iter().map(|v| format!("{v:.17e}")).collect();
                write!(out, "{},{}", row.join(","), split.y[i] as u8)?;
                if let Some(f) = flips {
                    write!(out, ",{}", f[i] as u8)?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// `n` points from two balanced 2-D Gaussian classes (labels alternate 0, 1).
pub fn two_gaussians(rng: &mut impl Rng, n: usize) -> Split {
    let mut x = DMatrix::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as f64;
        let mean = if label > 0.5 { CLASS_OFFSET } else { -CLASS_OFFSET };
        x[(i, 0)] = mean + rng.sample::<f64, _>(StandardNormal);
        x[(i, 1)] = rng.sample::<f64, _>(StandardNormal);
        y.push(label);
    }
    Split { x, y }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy `−[y ln σ(z) + (1 − y) ln(1 − σ(z))]`, computed stably.
pub fn log_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Logit `wᵀ(x, 1)` of row `i`; the bias is the last coordinate of `w`.
pub fn logit(w: &[f64], x: &DMatrix<f64>, i: usize) -> f64 {
    let d = x.ncols();
    (0..d).map(|j| w[j] * x[(i, j)]).sum::<f64>() + w[d]
}

/// Logit for an explicit feature slice.
pub fn logit_of(w: &[f64], features: &[f64]) -> f64 {
    let d = features.len();
    features.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[d]
}

pub fn mean_log_loss(w: &[f64], split: &Split) -> f64 {
    let n = split.len() as f64;
    (0..split.len())
        .map(|i| log_loss(logit(w, &split.x, i), split.y[i]))
        .sum::<f64>()
        / n
}

pub fn accuracy(w: &[f64], split: &Split) -> f64 {
    let correct = (0..split.len())
        .filter(|&i| (logit(w, &split.x, i) > 0.0) == (split.y[i] > 0.5))
        .count();
    correct as f64 / split.len() as f64
}

/// Minimizes `Σ wᵢℓᵢ / Σ wᵢ + reg·‖w‖²` by damped Newton steps.
pub fn fit_logistic(split: &Split, weights: &[f64], reg: f64) -> RealVec {
    assert_eq!(weights.len(), split.len());
    let d = split.features() + 1;
    let total: f64 = weights.iter().sum();
    let objective = |w: &DVector<f64>| {
        (0..split.len())
            .map(|i| weights[i] * log_loss(logit(w.as_slice(), &split.x, i), split.y[i]))
            .sum::<f64>()
            / total
            + reg * w.norm_squared()
    };
    let mut w = DVector::zeros(d);
    for _ in 0..100 {
        let mut grad = &w * (2.0 * reg);
        let mut hess = DMatrix::identity(d, d) * (2.0 * reg);
        for i in 0..split.len() {
            let z = logit(w.as_slice(), &split.x, i);
            let s = sigmoid(z);
            let xt = DVector::from_iterator(d - 1, split.x.row(i).iter().copied()).push(1.0);
            grad.axpy(weights[i] * (s - split.y[i]) / total, &xt, 1.0);
            hess.ger(weights[i] * s * (1.0 - s) / total, &xt, &xt, 1.0);
        }
        if grad.norm() < 1e-13 {
            break;
        }
        let step = hess.cholesky().expect("ridge keeps the Hessian PD").solve(&grad);
        if grad.norm() < 1e-6 {
            w -= step;
            continue;
        }
        let f0 = objective(&w);
        let mut t = 1.0;
        loop {
            let cand = &w - &step * t;
            if objective(&cand) <= f0 - 1e-4 * t * grad.dot(&step) || t < 1e-10 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    RealVec::from(w.as_slice())
}
