//! Trial execution and per-solver summaries.

use bilevel_core::oracle::OracleCounters;
use bilevel_core::problems::ProblemInstance;
use bilevel_core::solvers::{run_trial, SolverTrace};
use bilevel_core::BilevelError;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::SolverEntry;

/// A trial aborted by the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericAbort {
    pub label: String,
    pub trial: u64,
    pub iteration: usize,
    pub error: BilevelError,
}

impl std::fmt::Display for NumericAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "solver '{}' trial {} aborted at upper iteration {}: {}",
            self.label, self.trial, self.iteration, self.error
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrialRun {
    pub trial: u64,
    pub trace: SolverTrace,
    pub counters: OracleCounters,
    pub wall_seconds: f64,
}

impl TrialRun {
    /// Distance at the last recorded iteration, or `f` there when the
    /// problem has no metric.
    pub fn final_metric(&self) -> f64 {
        self.trace
            .last()
            .map_or(f64::NAN, |r| r.distance.unwrap_or(r.f))
    }
}

/// Thread pool sized by `BILEVEL_THREADS` (all cores when unset or invalid).
pub fn thread_pool() -> ThreadPool {
    let threads = std::env::var("BILEVEL_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Runs `trials` trials of one solver; trial `i` starts from `seed + i`.
/// Results come back in trial order whatever the scheduling.
pub fn run_entry(
    pool: &ThreadPool,
    instance: &ProblemInstance,
    entry: &SolverEntry,
    trials: u64,
    seed: bilevel_core::RngSeed,
    timing: bool,
) -> Result<Vec<TrialRun>, NumericAbort> {
    let mut cfg = entry.cfg.clone();
    cfg.record_timing = timing;
    cfg.seed = seed;
    pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                run_trial(instance, entry.kind, &cfg, seed.offset(trial))
                    .map(|o| TrialRun {
                        trial,
                        trace: o.solution.trace,
                        counters: o.counters,
                        wall_seconds: o.solution.wall_seconds,
                    })
                    .map_err(|f| NumericAbort {
                        label: entry.label.clone(),
                        trial,
                        iteration: f.k,
                        error: f.error,
                    })
            })
            .collect()
    })
}

/// Aggregate of one solver over its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub solver: String,
    pub trials: usize,
    /// `distance` or `f`.
    pub metric: &'static str,
    pub metric_mean: f64,
    pub metric_sd: f64,
    pub n_hvp: f64,
    pub n_jvp: f64,
    pub n_dense: f64,
    pub peak_stored_vecs: u64,
    pub wall_seconds: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Wall time rounded to whole milliseconds.
pub fn to_millis(seconds: f64) -> f64 {
    (seconds * 1e3).round() / 1e3
}

pub fn summarize(entry: &SolverEntry, runs: &[TrialRun]) -> Summary {
    let metric = match runs.first().and_then(|r| r.trace.last()) {
        Some(r) if r.distance.is_none() => "f",
        _ => "distance",
    };
    let finals: Vec<f64> = runs.iter().map(TrialRun::final_metric).collect();
    let (metric_mean, metric_sd) = mean_sd(&finals);
    let mean_of = |f: &dyn Fn(&TrialRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    Summary {
        label: entry.label.clone(),
        solver: entry.kind.name().to_string(),
        trials: runs.len(),
        metric,
        metric_mean,
        metric_sd,
        n_hvp: mean_of(&|r| r.counters.n_hvp as f64),
        n_jvp: mean_of(&|r| r.counters.n_jvp as f64),
        n_dense: mean_of(&|r| (r.counters.n_dense_hess + r.counters.n_dense_jac) as f64),
        peak_stored_vecs: runs.iter().map(|r| r.counters.peak_stored_vecs).max().unwrap_or(0),
        wall_seconds: mean_of(&|r| to_millis(r.wall_seconds)),
    }
}
