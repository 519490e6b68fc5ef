use thiserror::Error;

/// Errors raised by oracles, solvers and verifiers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BilevelError {
    /// A precondition of an operation was violated (dimension mismatch,
    /// invalid configuration, unsupported oracle shape).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A callback or update produced NaN or an infinity.
    #[error("non-finite value from {source_name}")]
    NonFinite { source_name: String },

    /// The oracle lacks an optional capability the operation needs.
    #[error("missing oracle capability: {0}")]
    Capability(String),

    /// The lower-level Hessian is singular or too ill-conditioned to solve with.
    #[error("lower-level Hessian is singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    /// An inner iterative solve did not reach its tolerance.
    #[error("{what} did not converge: residual {residual:.3e} after {iterations} iterations")]
    Convergence {
        what: String,
        residual: f64,
        iterations: usize,
    },
}

impl BilevelError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub(crate) fn non_finite(source: impl Into<String>) -> Self {
        Self::NonFinite {
            source_name: source.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, BilevelError>;
