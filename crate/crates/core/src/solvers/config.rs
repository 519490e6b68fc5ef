use std::fmt;
use std::str::FromStr;

use crate::error::{BilevelError, Result};
use crate::numeric::{BoxBounds, RngSeed, StepperKind};

/// How ApproxGrad solves `(∇²_vv g + λI) q = ∇_v f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    /// Stepper iterations on `½‖(H + λI)q − b‖²` (two Hessian-vector products each).
    Iterative,
    /// Conjugate gradients on `(H + λI)q = b` (one Hessian-vector product each,
    /// plus one for the initial residual).
    ConjugateGradient,
    /// Dense factorization of `H + λI` (needs the dense capability).
    Dense,
}

impl FromStr for LinearSolver {
    type Err = BilevelError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" | "iterative" | "gd" => Ok(LinearSolver::Iterative),
            "cg" | "conjugate-gradient" => Ok(LinearSolver::ConjugateGradient),
            "dense" | "exact" => Ok(LinearSolver::Dense),
            other => Err(BilevelError::contract(format!("unknown linear solver '{other}'"))),
        }
    }
}

impl fmt::Display for LinearSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearSolver::Iterative => "iterative",
            LinearSolver::ConjugateGradient => "cg",
            LinearSolver::Dense => "dense",
        })
    }
}

/// Settings shared by every solver.
///
/// `k` counts upper-level updates over the whole run. `sigma0` is the upper
/// step size and `rho0` the lower one (also used for the unrolled processes
/// and the ApproxGrad linear solve).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub k: usize,
    pub t: usize,
    pub sigma0: f64,
    pub rho0: f64,
    pub gamma0: f64,
    pub eps0: f64,
    pub lambda0: f64,
    /// Initial fill of the multipliers `ν` (and `ν_h`).
    pub nu0: f64,
    pub c_gamma: f64,
    pub c_eps: f64,
    pub c_lambda: f64,
    /// Upper-level updates allowed per tolerance phase before `γ` advances anyway.
    pub while_cap: usize,
    /// `γ` never grows past this value.
    pub gamma_max: f64,
    /// Whether the augmented variant applies `ν ← ν + γ∇_v g` between phases.
    pub multiplier_update: bool,
    pub stepper: StepperKind,
    pub bounds: Option<BoxBounds>,
    pub seed: RngSeed,
    pub record_every: usize,
    /// When false every recorded wall time is zero, making traces reproducible.
    pub record_timing: bool,
    /// Linear-solve iterations for ApproxGrad; `None` means `t`.
    pub t_lin: Option<usize>,
    /// Tikhonov term `λ` of the ApproxGrad linear system.
    pub approx_reg: f64,
    pub linear_solver: LinearSolver,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            k: 40_000,
            t: 10,
            sigma0: 1e-3,
            rho0: 1e-4,
            gamma0: 1.0,
            eps0: 1.0,
            lambda0: 10.0,
            nu0: 0.0,
            c_gamma: 1.1,
            c_eps: 0.9,
            c_lambda: 0.9,
            while_cap: 50,
            gamma_max: f64::INFINITY,
            multiplier_update: true,
            stepper: StepperKind::Adam,
            bounds: None,
            seed: RngSeed(0),
            record_every: 100,
            record_timing: true,
            t_lin: None,
            approx_reg: 1e-4,
            linear_solver: LinearSolver::Iterative,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(BilevelError::Contract(msg));
        if self.k == 0 || self.t == 0 {
            return fail(format!("K and T must be >= 1 (K = {}, T = {})", self.k, self.t));
        }
        if self.t_lin == Some(0) {
            return fail("t_lin must be >= 1".into());
        }
        for (name, x) in [("sigma0", self.sigma0), ("rho0", self.rho0)] {
            if !(x > 0.0 && x.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {x}"));
            }
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return fail(format!("gamma0 must be positive, got {}", self.gamma0));
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return fail(format!("eps0 must be positive, got {}", self.eps0));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return fail(format!("lambda0 must be >= 0, got {}", self.lambda0));
        }
        if !self.nu0.is_finite() {
            return fail("nu0 must be finite".into());
        }
        if !(self.c_gamma >= 1.0 && self.c_gamma.is_finite()) {
            return fail(format!("c_gamma must be >= 1, got {}", self.c_gamma));
        }
        if !(self.c_eps > 0.0 && self.c_eps <= 1.0) {
            return fail(format!("c_eps must lie in (0, 1], got {}", self.c_eps));
        }
        if !(self.c_lambda > 0.0 && self.c_lambda <= 1.0) {
            return fail(format!("c_lambda must lie in (0, 1], got {}", self.c_lambda));
        }
        if self.while_cap == 0 {
            return fail("while_cap must be >= 1".into());
        }
        if !(self.gamma_max >= self.gamma0) {
            return fail(format!("gamma_max must be >= gamma0, got {}", self.gamma_max));
        }
        if self.record_every == 0 || self.record_every > self.k {
            return fail(format!(
                "record_every must lie in [1, K] (got {}, K = {})",
                self.record_every, self.k
            ));
        }
        if !(self.approx_reg >= 0.0 && self.approx_reg.is_finite()) {
            return fail(format!("approx_reg must be >= 0, got {}", self.approx_reg));
        }
        Ok(())
    }

    pub fn t_lin(&self) -> usize {
        self.t_lin.unwrap_or(self.t)
    }
}

/// Every solver the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    /// Penalty loop without regularization or multipliers.
    Penalty,
    /// Penalty loop with the `λg` regularizer and multiplier updates.
    PenaltyAug,
    Gd,
    Rmd,
    Fmd,
    ApproxGrad,
}

impl SolverKind {
    pub const ALL: [SolverKind; 6] = [
        SolverKind::Penalty,
        SolverKind::PenaltyAug,
        SolverKind::Gd,
        SolverKind::Rmd,
        SolverKind::Fmd,
        SolverKind::ApproxGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Penalty => "penalty",
            SolverKind::PenaltyAug => "penalty-aug",
            SolverKind::Gd => "gd",
            SolverKind::Rmd => "rmd",
            SolverKind::Fmd => "fmd",
            SolverKind::ApproxGrad => "approxgrad",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = BilevelError;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = SolverKind::ALL.iter().map(|k| k.name()).collect();
                BilevelError::contract(format!(
                    "unknown solver '{s}' (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}
