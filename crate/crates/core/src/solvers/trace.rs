use std::fmt;
use std::time::Instant;

use crate::error::BilevelError;
use crate::numeric::RealVec;
use crate::oracle::{BilevelOracle, OracleCounters, Point};
use crate::problems::Metric;

/// One recorded upper-level iteration.
///
/// `gamma`, `eps` and `lambda` are NaN for solvers without a penalty schedule.
/// `grad_u_norm` is the norm of the upper search direction and `grad_v_norm`
/// the norm of the last lower-level direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub wall_seconds: f64,
    pub gamma: f64,
    pub eps: f64,
    pub lambda: f64,
    pub f: f64,
    pub g: f64,
    pub grad_u_norm: f64,
    pub grad_v_norm: f64,
    /// `‖(h; ∇_v g)‖`
    pub feas_norm: f64,
    pub distance: Option<f64>,
    pub counters: OracleCounters,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    /// Tolerance phases completed (penalty solvers only).
    pub phases: usize,
    /// Phases that ended because `while_cap` was reached.
    pub while_cap_hits: usize,
}

impl SolverTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub point: Point,
    pub trace: SolverTrace,
    /// Total wall time of the run in seconds (zero when timing is off).
    pub wall_seconds: f64,
    /// Final multipliers `ν` of the augmented penalty solver.
    pub nu: Option<RealVec>,
}

/// A run aborted by a numeric error, with the trace recorded up to that point.
#[derive(Debug, Clone)]
pub struct SolveFailure {
    pub error: BilevelError,
    /// Upper-level iteration that failed (1-based; 0 means before the first update).
    pub k: usize,
    pub trace: SolverTrace,
}

impl fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at upper iteration {}", self.error, self.k)
    }
}

impl std::error::Error for SolveFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type SolveResult = std::result::Result<Solution, SolveFailure>;

/// Schedule values written into a record.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Schedule {
    pub gamma: f64,
    pub eps: f64,
    pub lambda: f64,
}

impl Schedule {
    pub const NONE: Schedule = Schedule {
        gamma: f64::NAN,
        eps: f64::NAN,
        lambda: f64::NAN,
    };
}

/// Builds the trace. Diagnostics go through the uncounted oracle so they
/// never show up in the counters.
pub(crate) struct Recorder<'a> {
    counted: &'a dyn BilevelOracle,
    raw: &'a dyn BilevelOracle,
    metric: Option<&'a Metric>,
    every: usize,
    start: Option<Instant>,
    pub trace: SolverTrace,
}

impl<'a> Recorder<'a> {
    pub fn new(
        oracle: &'a dyn BilevelOracle,
        metric: Option<&'a Metric>,
        every: usize,
        timing: bool,
    ) -> Self {
        Self {
            counted: oracle,
            raw: oracle.uncounted().unwrap_or(oracle),
            metric,
            every,
            start: timing.then(Instant::now),
            trace: SolverTrace::default(),
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.map_or(0.0, |s| s.elapsed().as_secs_f64())
    }

    pub fn due(&self, k: usize) -> bool {
        k.is_multiple_of(self.every)
    }

    pub fn record(&mut self, k: usize, p: &Point, s: Schedule, grad_u_norm: f64, grad_v_norm: f64) {
        if !self.due(k) {
            return;
        }
        let wall_seconds = self.elapsed();
        let gv = self.raw.grad_v_g(p);
        let feas_sq = gv.norm_sq() + self.raw.h(p).map_or(0.0, |h| h.norm_sq());
        self.trace.records.push(TraceRecord {
            k,
            wall_seconds,
            gamma: s.gamma,
            eps: s.eps,
            lambda: s.lambda,
            f: self.raw.f(p),
            g: self.raw.g(p),
            grad_u_norm,
            grad_v_norm,
            feas_norm: feas_sq.sqrt(),
            distance: self.metric.map(|m| m(p)),
            counters: self.counted.counters().unwrap_or_default(),
        });
    }

    pub fn fail(self, error: BilevelError, k: usize) -> SolveFailure {
        SolveFailure {
            error,
            k,
            trace: self.trace,
        }
    }

    pub fn finish(self, point: Point) -> Solution {
        let wall_seconds = self.elapsed();
        Solution {
            point,
            trace: self.trace,
            wall_seconds,
            nu: None,
        }
    }
}
