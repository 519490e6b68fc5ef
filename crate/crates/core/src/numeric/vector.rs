use std::ops::{Deref, DerefMut};

use crate::error::{BilevelError, Result};

/// Dense vector of `f64`, used for upper/lower variables and every gradient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealVec(Vec<f64>);

impl RealVec {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self((0..dim).map(f).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        debug_assert_eq!(self.dim(), other.len());
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.0)
    }

    /// Errors with [`BilevelError::NonFinite`] naming `source` if any entry is NaN/Inf.
    pub fn ensure_finite(&self, source: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(BilevelError::non_finite(source))
        }
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) {
        debug_assert_eq!(self.dim(), x.len());
        for (s, xi) in self.0.iter_mut().zip(x) {
            *s += alpha * xi;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self(self.0.iter().map(|x| alpha * x).collect())
    }

    pub fn add(&self, other: &[f64]) -> Self {
        debug_assert_eq!(self.dim(), other.len());
        Self(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        debug_assert_eq!(self.dim(), other.len());
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &[f64]) -> f64 {
        debug_assert_eq!(self.dim(), other.len());
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn concat(&self, other: &[f64]) -> Self {
        let mut v = Vec::with_capacity(self.dim() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(other);
        Self(v)
    }

    /// Splits into `[..at]` and `[at..]`.
    pub fn split(&self, at: usize) -> (Self, Self) {
        (Self(self.0[..at].to_vec()), Self(self.0[at..].to_vec()))
    }

    /// Unit vector `e_i` of length `dim`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }
}

impl Deref for RealVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RealVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for RealVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for RealVec {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl FromIterator<f64> for RealVec {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// `x · 0` is NaN exactly for NaN and ±Inf, so the sum is zero iff every
/// entry is finite.
pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().fold(0.0, |acc, v| acc + v * 0.0) == 0.0
}

pub(crate) fn check_same_dim(what: &str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(BilevelError::contract(format!(
            "{what}: dimension mismatch ({a} vs {b})"
        )))
    }
}
