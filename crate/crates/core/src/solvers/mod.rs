//! Bilevel solvers with oracle-call instrumentation.

mod config;
mod estimators;
mod penalty;
mod trace;

pub use config::{LinearSolver, PenaltyConfig, SolverKind};
pub use estimators::{
    approxgrad_hypergrad, approxgrad_step, fmd_hypergrad, gd_alternating, outer_loop,
    rmd_hypergrad, ApproxGradParams, ApproxGradState, Estimate, Estimator, FMD_MAX_ENTRIES,
};
pub use penalty::{penalty_aug_solve, penalty_solve};
pub use trace::{Solution, SolveFailure, SolveResult, SolverTrace, TraceRecord};

use crate::numeric::RngSeed;
use crate::oracle::{BilevelOracle, CountedOracle, OracleCounters, Point};
use crate::problems::{Metric, ProblemInstance};

/// Runs `kind` from `start`.
pub fn solve(
    kind: SolverKind,
    oracle: &dyn BilevelOracle,
    start: &Point,
    cfg: &PenaltyConfig,
    metric: Option<&Metric>,
) -> SolveResult {
    match kind {
        SolverKind::Penalty => penalty_solve(oracle, start, cfg, metric),
        SolverKind::PenaltyAug => penalty_aug_solve(oracle, start, cfg, metric),
        SolverKind::Gd => gd_alternating(oracle, start, cfg, metric),
        SolverKind::Rmd => outer_loop(oracle, start, Estimator::Rmd, cfg, metric),
        SolverKind::Fmd => outer_loop(oracle, start, Estimator::Fmd, cfg, metric),
        SolverKind::ApproxGrad => outer_loop(oracle, start, Estimator::ApproxGrad, cfg, metric),
    }
}

/// Outcome of one trial on a problem instance.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub solution: Solution,
    pub start: Point,
    pub counters: OracleCounters,
    pub final_distance: Option<f64>,
}

/// One trial: draws the start from `trial_seed`, takes the instance box
/// when the config has none, and counts every oracle call.
pub fn run_trial(
    instance: &ProblemInstance,
    kind: SolverKind,
    cfg: &PenaltyConfig,
    trial_seed: RngSeed,
) -> Result<TrialOutcome, SolveFailure> {
    let start = (instance.init)(trial_seed);
    let mut cfg = cfg.clone();
    if cfg.bounds.is_none() {
        cfg.bounds = instance.bounds;
    }
    let counted = CountedOracle::new(instance.oracle.as_ref());
    let solution = solve(kind, &counted, &start, &cfg, instance.metric.as_ref())?;
    let final_distance = instance.distance(&solution.point);
    Ok(TrialOutcome {
        solution,
        start,
        counters: counted.counters(),
        final_distance,
    })
}
