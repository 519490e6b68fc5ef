//! Deterministic numerical primitives: vectors, steppers, box projection and seeded randomness.

mod stepper;
mod vector;

pub use stepper::{adam_step, sgd_step, AdamParams, StepperKind, StepperState};
pub use vector::RealVec;
pub(crate) use vector::{all_finite, check_same_dim};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BilevelError, Result};

/// Uniform per-coordinate box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBounds {
    lo: f64,
    hi: f64,
}

impl BoxBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi && lo.is_finite() && hi.is_finite() {
            Ok(Self { lo, hi })
        } else {
            Err(BilevelError::contract(format!("invalid box [{lo}, {hi}]")))
        }
    }

    /// The symmetric box `[-r, r]`.
    pub fn symmetric(r: f64) -> Result<Self> {
        Self::new(-r, r)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&xi| xi >= self.lo && xi <= self.hi)
    }

    pub fn clamp_in_place(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|xi| *xi = xi.clamp(self.lo, self.hi));
    }
}

/// Coordinatewise clamp of `params` to `bounds`.
pub fn project_box(params: &RealVec, bounds: BoxBounds) -> RealVec {
    let mut out = params.clone();
    bounds.clamp_in_place(&mut out);
    out
}

/// Seed for every random stream in the crate.
///
/// Streams are ChaCha8 keyed by the seed; independent sub-streams are selected
/// with [`RngSeed::stream`], so e.g. problem data and initial points drawn
/// from the same seed never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        self.stream(0)
    }

    pub fn stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// Seed of the `index`-th trial derived from a base seed.
    pub fn offset(self, index: u64) -> Self {
        Self(self.0.wrapping_add(index))
    }
}

/// `rows x cols` matrix of i.i.d. standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: RngSeed) -> Result<DMatrix<f64>> {
    if rows == 0 || cols == 0 {
        return Err(BilevelError::contract("gaussian_matrix needs rows, cols >= 1"));
    }
    let mut rng = seed.rng();
    // Row-major fill so the draw order does not depend on nalgebra's storage.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(m)
}

/// Vector with entries uniform in `bounds`.
pub fn uniform_vec(rng: &mut impl Rng, dim: usize, bounds: BoxBounds) -> RealVec {
    RealVec::from_fn(dim, |_| rng.gen_range(bounds.lo..=bounds.hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn projection_examples() {
        let b = BoxBounds::symmetric(5.0).unwrap();
        let p = project_box(&vec![6.0, -7.0, 0.0].into(), b);
        assert_eq!(p.as_slice(), &[5.0, -5.0, 0.0]);
        let inside: RealVec = vec![1.0, -4.9].into();
        assert_eq!(project_box(&inside, b), inside);
        assert_eq!(project_box(&vec![5.0001].into(), b).as_slice(), &[5.0]);
        assert!(BoxBounds::new(1.0, 1.0).is_err());
    }

    #[test]
    fn gaussian_matrix_is_deterministic_and_rank_bounded() {
        let a = gaussian_matrix(5, 10, RngSeed(7)).unwrap();
        let b = gaussian_matrix(5, 10, RngSeed(7)).unwrap();
        assert_eq!(a, b);
        let c = gaussian_matrix(5, 10, RngSeed(8)).unwrap();
        assert_ne!(a, c);
        let ata = a.transpose() * &a;
        assert_eq!(ata.nrows(), 10);
        let rank = ata.rank(1e-9 * ata.norm());
        assert!(rank <= 5, "rank {rank}");
        assert!(gaussian_matrix(0, 3, RngSeed(1)).is_err());
    }

    #[test]
    fn gaussian_sample_mean_is_near_zero() {
        let m = gaussian_matrix(1000, 1000, RngSeed(2024)).unwrap();
        let mean = m.iter().sum::<f64>() / 1e6;
        let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn streams_are_independent() {
        let mut a = RngSeed(3).stream(0);
        let mut b = RngSeed(3).stream(1);
        let xa: u64 = a.gen();
        let xb: u64 = b.gen();
        assert_ne!(xa, xb);
        let mut a2 = RngSeed(3).stream(0);
        assert_eq!(xa, a2.gen::<u64>());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent(
            x in proptest::collection::vec(-100.0f64..100.0, 0..16),
            lo in -10.0f64..0.0,
            width in 0.1f64..20.0,
        ) {
            let b = BoxBounds::new(lo, lo + width).unwrap();
            let once = project_box(&x.into(), b);
            prop_assert!(b.contains(&once));
            prop_assert_eq!(project_box(&once, b), once);
        }
    }
}
