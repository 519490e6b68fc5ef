//! `bilevel`: run, sweep and compare bilevel solvers on the problem suite
//! and verify oracles.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 numeric abort.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod check;
mod config;
mod output;
mod runner;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bilevel_core::numeric::RngSeed;
use bilevel_core::problems::{ProblemInstance, ProblemSpec};
use clap::{Args, Parser, Subcommand};

use check::{run_check, CheckError, Level};
use config::{parse_config, parse_values, ConfigError, RunConfig, SweepAxis};
use output::{sibling_path, write_runs, write_summary, SummaryRow};
use runner::{run_entry, summarize, thread_pool, NumericAbort, Summary, TrialRun};

#[derive(Parser)]
#[command(name = "bilevel", version, about = "Bilevel solver benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials (overrides `trials` in the config).
    #[arg(long)]
    trials: Option<u64>,
    /// No progress output on stderr.
    #[arg(long)]
    quiet: bool,
    /// Write zero wall times so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the single solver of the config for every trial and write one CSV.
    Run(Common),
    /// Re-run every solver for each value of one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// t, gamma0, lambda0 or eps0 (overrides [sweep] axis).
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values (overrides [sweep] values).
        #[arg(long)]
        values: Option<String>,
    },
    /// Run two or more solvers on identical seeds and summarize side by side.
    Compare(Common),
    /// Verify a problem's oracles and the hypergradient identities.
    Check {
        /// Registered problem name.
        problem: String,
        /// oracle, hypergrad, lemma3 or kkt.
        level: String,
        /// Seed for the problem data and the test points.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config whose first [solver] sets the kkt run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

enum Failure {
    Check(String),
    Config(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Config(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<NumericAbort> for Failure {
    fn from(a: NumericAbort) -> Self {
        Failure::Numeric(a.to_string())
    }
}

fn config_failure(path: &Path, e: ConfigError) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| config_failure(&common.config, e))?;
    if let Some(seed) = common.seed {
        cfg.seed = RngSeed(seed);
    }
    if let Some(trials) = common.trials {
        if trials == 0 {
            return Err(Failure::Config("--trials must be >= 1".into()));
        }
        cfg.trials = trials;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Failure::Config("no output path: pass --out or set 'out' in the config".into()))?;
    Ok((cfg, out))
}

fn build(spec: &ProblemSpec, seed: RngSeed) -> Result<ProblemInstance, Failure> {
    spec.build(seed)
        .map_err(|e| Failure::Config(format!("problem '{}': {e}", spec.name())))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("cannot write {}: {e}", path.display()))
}

fn progress(quiet: bool, s: &Summary, extra: &str) {
    if !quiet {
        eprintln!(
            "{}{extra}: {} trials, final {} mean {:.3e} (sd {:.3e}), {:.3}s per trial",
            s.label, s.trials, s.metric, s.metric_mean, s.metric_sd, s.wall_seconds
        );
    }
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load(common)?;
    if cfg.solvers.len() != 1 {
        return Err(Failure::Config(format!(
            "run takes exactly one [solver] section, found {} (use compare)",
            cfg.solvers.len()
        )));
    }
    let inst = build(&cfg.problem, cfg.seed)?;
    let entry = &cfg.solvers[0];
    let runs = run_entry(&thread_pool(), &inst, entry, cfg.trials, cfg.seed, !common.no_timing)?;
    write_runs(&out, &runs).map_err(|e| io_failure(&out, e))?;
    progress(common.quiet, &summarize(entry, &runs), "");
    Ok(())
}

struct Batch {
    summary: Summary,
    file: PathBuf,
    axis: Option<(&'static str, f64)>,
}

fn write_batches(out: &Path, problem: &str, batches: &[Batch]) -> Result<(), Failure> {
    let rows: Vec<SummaryRow<'_>> = batches
        .iter()
        .map(|b| SummaryRow {
            summary: &b.summary,
            problem,
            axis: b.axis,
            file: &b.file,
        })
        .collect();
    write_summary(out, &rows).map_err(|e| io_failure(out, e))
}

fn run_batch(
    cfg: &RunConfig,
    inst: &ProblemInstance,
    entry: &config::SolverEntry,
    file: PathBuf,
    timing: bool,
) -> Result<(Vec<TrialRun>, PathBuf), Failure> {
    let runs = run_entry(&thread_pool(), inst, entry, cfg.trials, cfg.seed, timing)?;
    Ok((runs, file))
}

fn cmd_sweep(common: &Common, axis: Option<&str>, values: Option<&str>) -> Result<(), Failure> {
    let (cfg, out) = load(common)?;
    let cfg_path = &common.config;
    let axis = match axis {
        Some(a) => a.parse::<SweepAxis>().map_err(|e| Failure::Config(e.to_string()))?,
        None => cfg
            .sweep
            .as_ref()
            .map(|s| s.axis)
            .ok_or_else(|| Failure::Config("no sweep axis: pass --axis or add a [sweep] section".into()))?,
    };
    let values = match values {
        Some(v) => parse_values(v).map_err(|e| Failure::Config(e.to_string()))?,
        None => cfg
            .sweep
            .as_ref()
            .map(|s| s.values.clone())
            .ok_or_else(|| Failure::Config("no sweep values: pass --values or add a [sweep] section".into()))?,
    };
    let mut plan = Vec::new();
    for entry in &cfg.solvers {
        for &value in &values {
            let swept = axis
                .apply(&entry.cfg, value)
                .map_err(|e| config_failure(cfg_path, e))?;
            let tag = format!("{}.{}-{value}", entry.label, axis.name());
            let e = config::SolverEntry {
                cfg: swept,
                ..entry.clone()
            };
            plan.push((e, value, sibling_path(&out, &tag)));
        }
    }
    let inst = build(&cfg.problem, cfg.seed)?;
    let mut batches = Vec::new();
    let mut outputs = Vec::new();
    for (entry, value, file) in plan {
        let (runs, file) = run_batch(&cfg, &inst, &entry, file, !common.no_timing)?;
        let summary = summarize(&entry, &runs);
        progress(common.quiet, &summary, &format!(" {}={value}", axis.name()));
        outputs.push((file.clone(), runs));
        batches.push(Batch {
            summary,
            file,
            axis: Some((axis.name(), value)),
        });
    }
    for (file, runs) in &outputs {
        write_runs(file, runs).map_err(|e| io_failure(file, e))?;
    }
    write_batches(&out, &cfg.problem.name(), &batches)
}

fn cmd_compare(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load(common)?;
    if cfg.solvers.len() < 2 {
        return Err(Failure::Config(format!(
            "compare needs at least two [solver] sections, found {}",
            cfg.solvers.len()
        )));
    }
    let inst = build(&cfg.problem, cfg.seed)?;
    let mut batches = Vec::new();
    let mut outputs = Vec::new();
    for entry in &cfg.solvers {
        let (runs, file) = run_batch(&cfg, &inst, entry, sibling_path(&out, &entry.label), !common.no_timing)?;
        let summary = summarize(entry, &runs);
        progress(common.quiet, &summary, "");
        outputs.push((file.clone(), runs));
        batches.push(Batch {
            summary,
            file,
            axis: None,
        });
    }
    for (file, runs) in &outputs {
        write_runs(file, runs).map_err(|e| io_failure(file, e))?;
    }
    write_batches(&out, &cfg.problem.name(), &batches)
}

fn cmd_check(problem: &str, level: &str, seed: u64, config: Option<&Path>, quiet: bool) -> Result<(), Failure> {
    let spec = ProblemSpec::by_name(problem).map_err(|e| Failure::Config(e.to_string()))?;
    let level_name = level.to_ascii_lowercase();
    let level: Level = level.parse().map_err(Failure::Config)?;
    let kkt_cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            let cfg = parse_config(&text).map_err(|e| config_failure(path, e))?;
            Some(cfg.solvers[0].cfg.clone())
        }
        None => None,
    };
    let report = run_check(&spec, level, RngSeed(seed), kkt_cfg.as_ref()).map_err(|e| match e {
        CheckError::Unsupported(m) => Failure::Config(m),
        CheckError::Numeric(m) => Failure::Numeric(m),
    })?;
    if !quiet {
        for line in &report.lines {
            println!("{line}");
        }
    }
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    println!("check {problem} {level_name}: {verdict}");
    if report.passed {
        Ok(())
    } else {
        let failing: Vec<&str> = report
            .lines
            .iter()
            .filter(|l| l.starts_with("FAIL"))
            .map(String::as_str)
            .collect();
        Err(Failure::Check(failing.join("; ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep { common, axis, values } => cmd_sweep(common, axis.as_deref(), values.as_deref()),
        Command::Compare(c) => cmd_compare(c),
        Command::Check {
            problem,
            level,
            seed,
            config,
            quiet,
        } => cmd_check(problem, level, *seed, config.as_deref(), *quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
