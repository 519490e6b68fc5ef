//! First-order update rules: plain gradient descent and Adam with bias correction.

use crate::error::{BilevelError, Result};

use super::vector::{all_finite, check_same_dim, RealVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepperKind {
    PlainGd,
    Adam,
}

impl std::str::FromStr for StepperKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gd" | "plain-gd" | "sgd" => Ok(Self::PlainGd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown stepper `{other}` (expected gd or adam)")),
        }
    }
}

impl std::fmt::Display for StepperKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PlainGd => "gd",
            Self::Adam => "adam",
        })
    }
}

/// Adam constants. Defaults are the usual (0.9, 0.999, 1e-8).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Mutable state of one stepper serving one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct StepperState {
    kind: StepperKind,
    first_moment: RealVec,
    second_moment: RealVec,
    step_count: u64,
    /// `(β₁ᵗ, β₂ᵗ)` after `t` steps.
    beta_powers: (f64, f64),
    adam: AdamParams,
}

impl StepperState {
    pub fn new(kind: StepperKind, dim: usize, adam: AdamParams) -> Self {
        Self {
            kind,
            first_moment: RealVec::zeros(dim),
            second_moment: RealVec::zeros(dim),
            step_count: 0,
            beta_powers: (1.0, 1.0),
            adam,
        }
    }

    pub fn adam(dim: usize) -> Self {
        Self::new(StepperKind::Adam, dim, AdamParams::default())
    }

    pub fn plain(dim: usize) -> Self {
        Self::new(StepperKind::PlainGd, dim, AdamParams::default())
    }

    pub fn kind(&self) -> StepperKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn dim(&self) -> usize {
        self.first_moment.dim()
    }

    pub fn first_moment(&self) -> &RealVec {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &RealVec {
        &self.second_moment
    }

    /// Updates `params` in place with the configured rule.
    pub fn step(&mut self, params: &mut RealVec, grad: &[f64], lr: f64) -> Result<()> {
        check_same_dim("stepper params/moments", params.dim(), self.dim())?;
        check_same_dim("stepper params/grad", params.dim(), grad.len())?;
        validate_lr(lr)?;
        if !all_finite(grad) {
            return Err(BilevelError::non_finite("stepper gradient"));
        }
        self.step_count += 1;
        match self.kind {
            StepperKind::PlainGd => {
                params.axpy(-lr, grad);
            }
            StepperKind::Adam => {
                let AdamParams {
                    beta1,
                    beta2,
                    eps_hat,
                } = self.adam;
                self.beta_powers.0 *= beta1;
                self.beta_powers.1 *= beta2;
                let bc1 = 1.0 - self.beta_powers.0;
                let bc2 = 1.0 - self.beta_powers.1;
                let step = lr / bc1;
                let inv_bc2 = 1.0 / bc2;
                let n = params.len();
                let (x, m, s) = (
                    &mut params[..n],
                    &mut self.first_moment[..n],
                    &mut self.second_moment[..n],
                );
                let g = &grad[..n];
                for i in 0..n {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    s[i] = beta2 * s[i] + (1.0 - beta2) * g[i] * g[i];
                    x[i] -= step * m[i] / ((s[i] * inv_bc2).sqrt() + eps_hat);
                }
            }
        }
        params.ensure_finite("stepper update")
    }
}

fn validate_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(BilevelError::contract(format!(
            "learning rate must be positive, got {lr}"
        )))
    }
}

/// Returns the Adam-updated copy of `params`, advancing `state`.
pub fn adam_step(
    state: &mut StepperState,
    params: &RealVec,
    grad: &RealVec,
    lr: f64,
) -> Result<RealVec> {
    if state.kind != StepperKind::Adam {
        return Err(BilevelError::contract("adam_step called on a non-Adam state"));
    }
    let mut out = params.clone();
    state.step(&mut out, grad, lr)?;
    Ok(out)
}

/// `params - lr * grad`
pub fn sgd_step(params: &RealVec, grad: &RealVec, lr: f64) -> Result<RealVec> {
    check_same_dim("sgd_step", params.dim(), grad.dim())?;
    validate_lr(lr)?;
    grad.ensure_finite("sgd_step gradient")?;
    let mut out = params.clone();
    out.axpy(-lr, grad);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Straight transcription of the published Adam recurrences on scalars,
    /// kept separate from the vectorized implementation.
    fn reference_adam_scalar(x0: f64, lr: f64, steps: usize, grad: impl Fn(f64) -> f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=steps {
            let g = grad(x);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = StepperState::adam(3);
        let p = RealVec::from(vec![1.0, -2.0, 0.5]);
        let out = adam_step(&mut st, &p, &RealVec::zeros(3), 0.1).unwrap();
        assert_eq!(out, p);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        for g in [1e-3, 0.7, -5.0, 123.0] {
            let mut st = StepperState::adam(1);
            let out = adam_step(&mut st, &RealVec::zeros(1), &RealVec::from(vec![g]), 0.1).unwrap();
            let expected = 0.1 * g.abs() / (g.abs() + 1e-8);
            assert_abs_diff_eq!(out[0].abs(), expected, epsilon = 1e-12);
            assert!((out[0].abs() - 0.1).abs() < 1e-5);
        }
    }

    #[test]
    fn quadratic_matches_reference_and_converges() {
        let oracle = reference_adam_scalar(1.0, 0.01, 1000, |x| 2.0 * x);
        let mut st = StepperState::adam(1);
        let mut x = RealVec::from(vec![1.0]);
        for _ in 0..1000 {
            let g = RealVec::from(vec![2.0 * x[0]]);
            x = adam_step(&mut st, &x, &g, 0.01).unwrap();
        }
        assert_abs_diff_eq!(x[0], oracle, epsilon = 1e-12);
        assert!(x[0].abs() < 0.05, "|x| = {}", x[0].abs());
        assert_eq!(st.step_count(), 1000);
    }

    #[test]
    fn sgd_examples() {
        let out = sgd_step(&vec![1.0, 1.0].into(), &vec![2.0, -2.0].into(), 0.5).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 2.0]);
        let p: RealVec = vec![0.3].into();
        assert_eq!(sgd_step(&p, &RealVec::zeros(1), 0.1).unwrap(), p);
        let out = sgd_step(&p, &vec![-0.4].into(), 0.1).unwrap();
        assert_abs_diff_eq!(out[0], 0.34, epsilon = 1e-15);
    }

    #[test]
    fn errors() {
        let mut st = StepperState::adam(2);
        let p = RealVec::zeros(2);
        assert!(matches!(
            adam_step(&mut st, &p, &RealVec::zeros(3), 0.1),
            Err(BilevelError::Contract(_))
        ));
        assert!(matches!(
            adam_step(&mut st, &p, &vec![f64::NAN, 0.0].into(), 0.1),
            Err(BilevelError::NonFinite { .. })
        ));
        assert!(matches!(
            sgd_step(&p, &RealVec::zeros(2), 0.0),
            Err(BilevelError::Contract(_))
        ));
        assert_eq!(st.step_count(), 0);
    }

    proptest! {
        #[test]
        fn zero_betas_give_sign_descent(
            g in proptest::collection::vec(-10.0f64..10.0, 1..8),
            lr in 1e-3f64..1.0,
        ) {
            prop_assume!(g.iter().all(|x| x.abs() > 1e-3));
            let adam = AdamParams { beta1: 0.0, beta2: 0.0, eps_hat: 1e-12 };
            let mut st = StepperState::new(StepperKind::Adam, g.len(), adam);
            let mut p = RealVec::zeros(g.len());
            st.step(&mut p, &g, lr).unwrap();
            for (pi, gi) in p.iter().zip(&g) {
                prop_assert!((pi + lr * gi.signum()).abs() < 1e-6);
            }
        }

        #[test]
        fn steppers_are_deterministic(
            g in proptest::collection::vec(-10.0f64..10.0, 1..8),
            x in -5.0f64..5.0,
        ) {
            let p = RealVec::filled(g.len(), x);
            let grad = RealVec::from(g.clone());
            let mut a = StepperState::adam(g.len());
            let mut b = StepperState::adam(g.len());
            let ra = adam_step(&mut a, &p, &grad, 0.01).unwrap();
            let rb = adam_step(&mut b, &p, &grad, 0.01).unwrap();
            prop_assert_eq!(ra, rb);
            prop_assert_eq!(a, b);
        }
    }
}
