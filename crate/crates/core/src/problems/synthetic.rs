//! The four synthetic problems with known solution sets.
//!
//! * Example 1: `f = ‖u‖² + ‖v‖²`, `g = ‖1 − u − v‖²`, solution `u = v = 0.5·1`.
//! * Example 2: `f = ‖v‖² − ‖u − v‖²`, `g = ‖u − v‖²`, solution `u = v = 0`.
//! * Examples 3 and 4 replace `‖x‖²` in `g` (and in the second term of
//!   Example 2's `f`) by `xᵀAᵀAx` with a wide Gaussian `A`, so `∇²_vv g` is
//!   singular and the solutions form affine sets along `Null(A)`.

use nalgebra::DMatrix;

use super::{Metric, ProblemInstance};
use crate::error::{BilevelError, Result};
use crate::numeric::{gaussian_matrix, uniform_vec, BoxBounds, RealVec, RngSeed};
use crate::oracle::{BilevelOracle, Dims, Point};
use std::sync::Arc;

/// Box used for initialization and projection in every synthetic problem.
pub const SYNTHETIC_BOX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    /// `g = (1 − u − v)ᵀ M (1 − u − v)`, `f = ‖u‖² + ‖v‖²`
    Shifted,
    /// `g = (u − v)ᵀ M (u − v)`, `f = ‖v‖² − (u − v)ᵀ M (u − v)`
    Difference,
}

/// Symmetric PSD weight `M`, either the identity or `AᵀA`.
#[derive(Debug, Clone)]
enum Weight {
    Identity,
    /// Row-major `dim × dim`.
    Dense(Vec<f64>),
}

impl Weight {
    fn apply(&self, x: &[f64]) -> RealVec {
        self.apply_scaled(x, 1.0)
    }

    /// `alpha · M x`
    fn apply_scaled(&self, x: &[f64], alpha: f64) -> RealVec {
        match self {
            Weight::Identity => x.iter().map(|xi| alpha * xi).collect(),
            Weight::Dense(m) => {
                let n = x.len();
                RealVec::from_fn(n, |i| {
                    let row: f64 = m[i * n..(i + 1) * n]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum();
                    alpha * row
                })
            }
        }
    }

    /// [`Weight::apply_scaled`] reusing `x`'s storage when `M = I`.
    fn apply_scaled_owned(&self, mut x: RealVec, alpha: f64) -> RealVec {
        match self {
            Weight::Identity => {
                x.scale(alpha);
                x
            }
            Weight::Dense(_) => self.apply_scaled(&x, alpha),
        }
    }

    fn dense(&self, n: usize) -> DMatrix<f64> {
        match self {
            Weight::Identity => DMatrix::identity(n, n),
            Weight::Dense(m) => DMatrix::from_row_slice(n, n, m),
        }
    }
}

/// Oracle for Examples 1–4.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    id: u8,
    dim: usize,
    shape: Shape,
    weight: Weight,
    a: Option<DMatrix<f64>>,
    /// Orthogonal projector onto the row space of `A`.
    projector: Option<DMatrix<f64>>,
}

impl SyntheticProblem {
    pub fn new(id: u8, dim: usize, seed: RngSeed) -> Result<Self> {
        if dim == 0 {
            return Err(BilevelError::contract("synthetic problem needs dim >= 1"));
        }
        let shape = match id {
            1 | 3 => Shape::Shifted,
            2 | 4 => Shape::Difference,
            _ => {
                return Err(BilevelError::contract(format!(
                    "unknown synthetic example {id} (expected 1..=4)"
                )))
            }
        };
        if id <= 2 {
            return Ok(Self {
                id,
                dim,
                shape,
                weight: Weight::Identity,
                a: None,
                projector: None,
            });
        }
        if !dim.is_multiple_of(2) {
            return Err(BilevelError::contract(format!(
                "examples 3 and 4 need an even dimension, got {dim}"
            )));
        }
        let a = gaussian_matrix(dim / 2, dim, seed)?;
        let ata = a.transpose() * &a;
        let aat = &a * a.transpose();
        let inv = aat
            .clone()
            .cholesky()
            .ok_or(BilevelError::Singular { condition: f64::INFINITY })?
            .inverse();
        let projector = a.transpose() * inv * &a;
        let mut row_major = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                row_major.push(ata[(i, j)]);
            }
        }
        Ok(Self {
            id,
            dim,
            shape,
            weight: Weight::Dense(row_major),
            a: Some(a),
            projector: Some(projector),
        })
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The Gaussian factor `A` of Examples 3–4.
    pub fn a(&self) -> Option<&DMatrix<f64>> {
        self.a.as_ref()
    }

    /// `P = Aᵀ(AAᵀ)⁻¹A` of Examples 3–4.
    pub fn projector(&self) -> Option<&DMatrix<f64>> {
        self.projector.as_ref()
    }

    fn project(&self, x: &RealVec) -> f64 {
        match &self.projector {
            None => x.norm_sq(),
            Some(p) => {
                let px = p * nalgebra::DVector::from_column_slice(x);
                px.norm_squared()
            }
        }
    }

    /// Distance to the solution set (projected residual for Examples 3–4).
    pub fn distance(&self, p: &Point) -> f64 {
        match self.shape {
            Shape::Shifted => {
                let du = RealVec::from_fn(self.dim, |i| p.u[i] - 0.5);
                let dv = RealVec::from_fn(self.dim, |i| p.v[i] - 0.5);
                (self.project(&du) + self.project(&dv)).sqrt()
            }
            Shape::Difference => (self.project(&p.u) + p.v.norm_sq()).sqrt(),
        }
    }

    /// Residual `r = 1 − u − v` or difference `d = u − v`.
    fn inner(&self, p: &Point) -> RealVec {
        match self.shape {
            Shape::Shifted => RealVec::from_fn(self.dim, |i| 1.0 - p.u[i] - p.v[i]),
            Shape::Difference => p.u.sub(&p.v),
        }
    }

    /// `∂r/∂u = u_sign · I`; both shapes have `∂r/∂v = −I`.
    fn u_sign(&self) -> f64 {
        match self.shape {
            Shape::Shifted => -1.0,
            Shape::Difference => 1.0,
        }
    }

    pub fn into_instance(self) -> ProblemInstance {
        let bounds = BoxBounds::symmetric(SYNTHETIC_BOX).expect("valid box");
        let dim = self.dim;
        let name = format!("example{}", self.id);
        let problem = Arc::new(self);
        let metric_problem = Arc::clone(&problem);
        let metric: Metric = Arc::new(move |p: &Point| metric_problem.distance(p));
        ProblemInstance {
            name,
            oracle: problem,
            metric: Some(metric),
            init: Arc::new(move |seed: RngSeed| {
                let mut rng = seed.stream(1);
                let u = uniform_vec(&mut rng, dim, bounds);
                let v = uniform_vec(&mut rng, dim, bounds);
                Point { u, v }
            }),
            bounds: Some(bounds),
        }
    }
}

/// Example `id` (1–4) of dimension `dim`; `A` for Examples 3–4 is
/// `dim/2 × dim` and drawn from `seed`.
pub fn make_synthetic(id: u8, dim: usize, seed: RngSeed) -> Result<ProblemInstance> {
    Ok(SyntheticProblem::new(id, dim, seed)?.into_instance())
}

impl BilevelOracle for SyntheticProblem {
    fn dims(&self) -> Dims {
        Dims {
            u: self.dim,
            v: self.dim,
            c: 0,
        }
    }

    fn f(&self, p: &Point) -> f64 {
        match self.shape {
            Shape::Shifted => p.u.norm_sq() + p.v.norm_sq(),
            Shape::Difference => {
                let d = self.inner(p);
                p.v.norm_sq() - d.dot(&self.weight.apply(&d))
            }
        }
    }

    fn g(&self, p: &Point) -> f64 {
        let r = self.inner(p);
        r.dot(&self.weight.apply(&r))
    }

    fn grad_u_f(&self, p: &Point) -> RealVec {
        match self.shape {
            Shape::Shifted => p.u.scaled(2.0),
            Shape::Difference => self.weight.apply_scaled_owned(self.inner(p), -2.0),
        }
    }

    fn grad_v_f(&self, p: &Point) -> RealVec {
        match self.shape {
            Shape::Shifted => p.v.scaled(2.0),
            Shape::Difference => {
                let mut g = self.weight.apply_scaled_owned(self.inner(p), 2.0);
                g.axpy(2.0, &p.v);
                g
            }
        }
    }

    fn grad_v_g(&self, p: &Point) -> RealVec {
        // ∂r/∂v = −I for both shapes.
        self.weight.apply_scaled_owned(self.inner(p), -2.0)
    }

    fn grad_v_fg(&self, p: &Point) -> (RealVec, RealVec) {
        let gg = self.grad_v_g(p);
        let gf = match self.shape {
            Shape::Shifted => p.v.scaled(2.0),
            Shape::Difference => {
                let mut g = gg.scaled(-1.0);
                g.axpy(2.0, &p.v);
                g
            }
        };
        (gf, gg)
    }

    fn hvp_vv_g(&self, _p: &Point, q: &[f64]) -> RealVec {
        self.weight.apply_scaled(q, 2.0)
    }

    fn jvp_uv_g(&self, _p: &Point, q: &[f64]) -> RealVec {
        // ∂/∂u (−2 M r) = −2 M (∂r/∂u)
        self.weight.apply_scaled(q, -2.0 * self.u_sign())
    }

    fn hess_vv_g(&self, _p: &Point) -> Option<DMatrix<f64>> {
        Some(self.weight.dense(self.dim) * 2.0)
    }

    fn jac_uv_g(&self, _p: &Point) -> Option<DMatrix<f64>> {
        Some(self.weight.dense(self.dim) * (-2.0 * self.u_sign()))
    }

    fn has_dense(&self) -> bool {
        true
    }
}
