//! Benchmark problems with analytic oracles and, where a solution is known,
//! a distance-to-solution metric.

use std::fmt;
use std::sync::Arc;

use crate::error::{BilevelError, Result};
use crate::numeric::{BoxBounds, RngSeed};
use crate::oracle::{BilevelOracle, Point};

pub mod constrained;
pub mod data;
pub mod importance;
pub mod poison;
pub mod quadratic;
pub mod ridge;
pub mod synthetic;

pub use constrained::{make_constrained_toy, ConstrainedToy, CONSTRAINED_OPTIMUM};
pub use data::DatasetSplit;
pub use importance::{make_importance_toy, ImportanceProblem};
pub use poison::{make_poison_toy, PoisonProblem};
pub use quadratic::{make_random_quadratic, QuadraticBilevel};
pub use ridge::{make_hyperparam_ridge, RidgeProblem};
pub use synthetic::{make_synthetic, SyntheticProblem, SYNTHETIC_BOX};

/// Distance of a point to the known solution set.
pub type Metric = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// Initial point drawn from a seed.
pub type InitSampler = Arc<dyn Fn(RngSeed) -> Point + Send + Sync>;

#[derive(Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub oracle: Arc<dyn BilevelOracle>,
    pub metric: Option<Metric>,
    pub init: InitSampler,
    /// Box applied to both `u` and `v` after every update, when present.
    pub bounds: Option<BoxBounds>,
}

impl ProblemInstance {
    pub fn distance(&self, p: &Point) -> Option<f64> {
        self.metric.as_ref().map(|m| m(p))
    }
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("name", &self.name)
            .field("dims", &self.oracle.dims())
            .field("has_metric", &self.metric.is_some())
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// A problem named by its factory together with the factory parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Synthetic { id: u8, dim: usize },
    Constrained,
    Ridge { n: usize, d: usize, reg_true: f64 },
    Importance { n_train: usize, n_val: usize, noise_frac: f64 },
    Poison { n_train: usize, n_val: usize, n_poison: usize },
    Quadratic { u_dim: usize, v_dim: usize },
}

impl ProblemSpec {
    /// Spec with default parameters for a registry name.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "example1" | "example2" | "example3" | "example4" => ProblemSpec::Synthetic {
                id: name.as_bytes()[7] - b'0',
                dim: 10,
            },
            "constrained" => ProblemSpec::Constrained,
            "ridge" => ProblemSpec::Ridge {
                n: 100,
                d: 10,
                reg_true: 0.3,
            },
            "importance" => ProblemSpec::Importance {
                n_train: 200,
                n_val: 40,
                noise_frac: 0.25,
            },
            "poison" => ProblemSpec::Poison {
                n_train: 100,
                n_val: 100,
                n_poison: 20,
            },
            "quadratic" => ProblemSpec::Quadratic { u_dim: 5, v_dim: 5 },
            other => {
                return Err(BilevelError::contract(format!(
                    "unknown problem '{other}' (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }

    pub const NAMES: [&'static str; 9] = [
        "example1",
        "example2",
        "example3",
        "example4",
        "constrained",
        "ridge",
        "importance",
        "poison",
        "quadratic",
    ];

    pub fn name(&self) -> String {
        match self {
            ProblemSpec::Synthetic { id, .. } => format!("example{id}"),
            ProblemSpec::Constrained => "constrained".into(),
            ProblemSpec::Ridge { .. } => "ridge".into(),
            ProblemSpec::Importance { .. } => "importance".into(),
            ProblemSpec::Poison { .. } => "poison".into(),
            ProblemSpec::Quadratic { .. } => "quadratic".into(),
        }
    }

    /// Sets a named factory parameter from its textual value.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| BilevelError::contract(format!("invalid value '{value}' for '{key}'")))
        }
        match (self, key) {
            (ProblemSpec::Synthetic { dim, .. }, "dim") => *dim = parse(key, value)?,
            (ProblemSpec::Ridge { n, .. }, "n") => *n = parse(key, value)?,
            (ProblemSpec::Ridge { d, .. }, "d") => *d = parse(key, value)?,
            (ProblemSpec::Ridge { reg_true, .. }, "reg_true") => *reg_true = parse(key, value)?,
            (ProblemSpec::Importance { n_train, .. }, "n_train")
            | (ProblemSpec::Poison { n_train, .. }, "n_train") => *n_train = parse(key, value)?,
            (ProblemSpec::Importance { n_val, .. }, "n_val")
            | (ProblemSpec::Poison { n_val, .. }, "n_val") => *n_val = parse(key, value)?,
            (ProblemSpec::Importance { noise_frac, .. }, "noise_frac") => {
                *noise_frac = parse(key, value)?
            }
            (ProblemSpec::Poison { n_poison, .. }, "n_poison") => *n_poison = parse(key, value)?,
            (ProblemSpec::Quadratic { u_dim, .. }, "u_dim") => *u_dim = parse(key, value)?,
            (ProblemSpec::Quadratic { v_dim, .. }, "v_dim") => *v_dim = parse(key, value)?,
            (spec, _) => {
                return Err(BilevelError::contract(format!(
                    "problem '{}' has no parameter '{key}'",
                    spec.name()
                )))
            }
        }
        Ok(())
    }

    /// Builds the instance; `seed` fixes any random data of the problem.
    pub fn build(&self, seed: RngSeed) -> Result<ProblemInstance> {
        match *self {
            ProblemSpec::Synthetic { id, dim } => make_synthetic(id, dim, seed),
            ProblemSpec::Constrained => Ok(make_constrained_toy(seed)),
            ProblemSpec::Ridge { n, d, reg_true } => make_hyperparam_ridge(seed, n, d, reg_true),
            ProblemSpec::Importance {
                n_train,
                n_val,
                noise_frac,
            } => make_importance_toy(seed, n_train, n_val, noise_frac),
            ProblemSpec::Poison {
                n_train,
                n_val,
                n_poison,
            } => make_poison_toy(seed, n_train, n_val, n_poison),
            ProblemSpec::Quadratic { u_dim, v_dim } => make_random_quadratic(u_dim, v_dim, seed),
        }
    }
}
