//! General quadratic bilevel problem
//! `f = ½uᵀAu + uᵀBv + ½vᵀCv + aᵀu + cᵀv`, `g = ½vᵀGv + uᵀEv + eᵀv`,
//! with `G` symmetric positive definite so `v*(u) = −G⁻¹(Eᵀu + e)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::ProblemInstance;
use crate::error::{BilevelError, Result};
use crate::numeric::{gaussian_matrix, RealVec, RngSeed};
use crate::oracle::{BilevelOracle, Dims, Point};

#[derive(Debug, Clone)]
pub struct QuadraticBilevel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub a_lin: DVector<f64>,
    pub c_lin: DVector<f64>,
    pub g: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub e_lin: DVector<f64>,
}

fn dv(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn rv(x: DVector<f64>) -> RealVec {
    RealVec::from(x.as_slice())
}

impl QuadraticBilevel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        a_lin: DVector<f64>,
        c_lin: DVector<f64>,
        g: DMatrix<f64>,
        e: DMatrix<f64>,
        e_lin: DVector<f64>,
    ) -> Result<Self> {
        let (nu, nv) = (a.nrows(), c.nrows());
        let shapes_ok = a.shape() == (nu, nu)
            && b.shape() == (nu, nv)
            && c.shape() == (nv, nv)
            && a_lin.len() == nu
            && c_lin.len() == nv
            && g.shape() == (nv, nv)
            && e.shape() == (nu, nv)
            && e_lin.len() == nv;
        if !shapes_ok {
            return Err(BilevelError::contract("quadratic bilevel: inconsistent shapes"));
        }
        Ok(Self {
            a,
            b,
            c,
            a_lin,
            c_lin,
            g,
            e,
            e_lin,
        })
    }

    /// Random instance with `G = QᵀQ/V + I` (condition number a few units)
    /// and `A`, `C` positive definite so the reduced problem has a minimizer.
    pub fn random(u_dim: usize, v_dim: usize, seed: RngSeed) -> Result<Self> {
        if u_dim == 0 || v_dim == 0 {
            return Err(BilevelError::contract("quadratic bilevel needs U, V >= 1"));
        }
        let spd = |n: usize, s: u64| -> Result<DMatrix<f64>> {
            let q = gaussian_matrix(n, n, RngSeed(seed.0 ^ s))?;
            Ok(q.transpose() * q / n as f64 + DMatrix::identity(n, n))
        };
        let scaled = |r: usize, c: usize, s: u64, k: f64| -> Result<DMatrix<f64>> {
            Ok(gaussian_matrix(r, c, RngSeed(seed.0 ^ s))? * k)
        };
        let mut rng = seed.stream(7);
        let mut vec = |n: usize| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a_lin = vec(u_dim);
        let c_lin = vec(v_dim);
        let e_lin = vec(v_dim);
        Self::new(
            spd(u_dim, 0xa1)?,
            scaled(u_dim, v_dim, 0xb2, 0.3)?,
            spd(v_dim, 0xc3)?,
            a_lin,
            c_lin,
            spd(v_dim, 0xd4)?,
            scaled(u_dim, v_dim, 0xe5, 0.5)?,
            e_lin,
        )
    }

    /// `v*(u) = −G⁻¹(Eᵀu + e)`
    pub fn lower_solution(&self, u: &[f64]) -> RealVec {
        let rhs = -(self.e.transpose() * dv(u) + &self.e_lin);
        rv(self
            .g
            .clone()
            .cholesky()
            .expect("G is positive definite")
            .solve(&rhs))
    }

    pub fn into_instance(self, name: &str) -> ProblemInstance {
        let (nu, nv) = (self.a.nrows(), self.c.nrows());
        ProblemInstance {
            name: name.to_string(),
            oracle: Arc::new(self),
            metric: None,
            init: Arc::new(move |seed: RngSeed| {
                let mut rng = seed.stream(1);
                Point::new(
                    RealVec::from_fn(nu, |_| rng.gen_range(-1.0..1.0)),
                    RealVec::from_fn(nv, |_| rng.gen_range(-1.0..1.0)),
                )
            }),
            bounds: None,
        }
    }
}

/// Random well-conditioned quadratic bilevel problem with `U = u_dim`, `V = v_dim`.
pub fn make_random_quadratic(u_dim: usize, v_dim: usize, seed: RngSeed) -> Result<ProblemInstance> {
    Ok(QuadraticBilevel::random(u_dim, v_dim, seed)?.into_instance("quadratic"))
}

impl BilevelOracle for QuadraticBilevel {
    fn dims(&self) -> Dims {
        Dims {
            u: self.a.nrows(),
            v: self.c.nrows(),
            c: 0,
        }
    }
    fn f(&self, p: &Point) -> f64 {
        let (u, v) = (dv(&p.u), dv(&p.v));
        0.5 * u.dot(&(&self.a * &u))
            + u.dot(&(&self.b * &v))
            + 0.5 * v.dot(&(&self.c * &v))
            + self.a_lin.dot(&u)
            + self.c_lin.dot(&v)
    }
    fn g(&self, p: &Point) -> f64 {
        let (u, v) = (dv(&p.u), dv(&p.v));
        0.5 * v.dot(&(&self.g * &v)) + u.dot(&(&self.e * &v)) + self.e_lin.dot(&v)
    }
    fn grad_u_f(&self, p: &Point) -> RealVec {
        let (u, v) = (dv(&p.u), dv(&p.v));
        rv(0.5 * (&self.a + self.a.transpose()) * u + &self.b * v + &self.a_lin)
    }
    fn grad_v_f(&self, p: &Point) -> RealVec {
        let (u, v) = (dv(&p.u), dv(&p.v));
        rv(self.b.transpose() * u + 0.5 * (&self.c + self.c.transpose()) * v + &self.c_lin)
    }
    fn grad_v_g(&self, p: &Point) -> RealVec {
        let (u, v) = (dv(&p.u), dv(&p.v));
        rv(&self.g * v + self.e.transpose() * u + &self.e_lin)
    }
    fn hvp_vv_g(&self, _p: &Point, q: &[f64]) -> RealVec {
        rv(&self.g * dv(q))
    }
    fn jvp_uv_g(&self, _p: &Point, q: &[f64]) -> RealVec {
        rv(&self.e * dv(q))
    }
    fn hess_vv_g(&self, _p: &Point) -> Option<DMatrix<f64>> {
        Some(self.g.clone())
    }
    fn jac_uv_g(&self, _p: &Point) -> Option<DMatrix<f64>> {
        Some(self.e.clone())
    }
    fn has_dense(&self) -> bool {
        true
    }
}
