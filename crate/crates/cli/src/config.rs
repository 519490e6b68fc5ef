//! Run configuration: flat `key = value` lines grouped under `[problem]`,
//! repeatable `[solver]` and optional `[sweep]` headers. Keys before the
//! first header are global. `#` starts a comment.
//!
//! ```text
//! trials = 20
//! seed = 0
//! out = runs/example1.csv
//!
//! [problem]
//! name = example1
//! dim = 10
//!
//! [solver]
//! name = penalty
//! t = 10
//! k = 40000
//! record_every = 100
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use bilevel_core::numeric::{BoxBounds, RngSeed, StepperKind};
use bilevel_core::problems::ProblemSpec;
use bilevel_core::solvers::{LinearSolver, PenaltyConfig, SolverKind};

/// A configuration error with the offending line when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self {
                line: Some(n),
                message,
            } => write!(f, "line {n}: {message}"),
            Self { message, .. } => f.write_str(message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverEntry {
    /// Unique name used in summaries and file names.
    pub label: String,
    pub kind: SolverKind,
    pub cfg: PenaltyConfig,
}

/// Hyperparameter varied by `sweep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    T,
    Gamma0,
    Lambda0,
    Eps0,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::T => "t",
            SweepAxis::Gamma0 => "gamma0",
            SweepAxis::Lambda0 => "lambda0",
            SweepAxis::Eps0 => "eps0",
        }
    }

    /// Copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &PenaltyConfig, value: f64) -> Result<PenaltyConfig, ConfigError> {
        let mut out = cfg.clone();
        match self {
            SweepAxis::T => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(ConfigError::general(format!(
                        "sweep values for t must be positive integers, got {value}"
                    )));
                }
                out.t = value as usize;
            }
            SweepAxis::Gamma0 => {
                out.gamma0 = value;
                out.gamma_max = out.gamma_max.max(value);
            }
            SweepAxis::Lambda0 => out.lambda0 = value,
            SweepAxis::Eps0 => out.eps0 = value,
        }
        out.validate()
            .map_err(|e| ConfigError::general(format!("{}={value}: {e}", self.name())))?;
        Ok(out)
    }
}

impl FromStr for SweepAxis {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "t" => Ok(SweepAxis::T),
            "gamma0" => Ok(SweepAxis::Gamma0),
            "lambda0" => Ok(SweepAxis::Lambda0),
            "eps0" => Ok(SweepAxis::Eps0),
            other => Err(ConfigError::general(format!(
                "unknown sweep axis '{other}' (expected t, gamma0, lambda0 or eps0)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverEntry>,
    pub trials: u64,
    pub seed: RngSeed,
    pub out: Option<PathBuf>,
    pub sweep: Option<Sweep>,
}

/// Comma-separated list of numbers; empty lists are rejected.
pub fn parse_values(text: &str) -> Result<Vec<f64>, ConfigError> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| ConfigError::general(format!("invalid sweep value '{s}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(ConfigError::general("sweep needs at least one value"));
    }
    Ok(values)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Global,
    Problem,
    Solver,
    Sweep,
}

struct PendingSolver {
    line: usize,
    kind: Option<SolverKind>,
    label: Option<String>,
    cfg: PenaltyConfig,
    record_every_set: bool,
}

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::at(line, format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::at(line, format!("invalid boolean '{value}' for '{key}'"))),
    }
}

fn parse_bounds(line: usize, value: &str) -> Result<BoxBounds, ConfigError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let result = match parts.as_slice() {
        [r] => BoxBounds::symmetric(parse_num(line, "bounds", r)?),
        [lo, hi] => BoxBounds::new(parse_num(line, "bounds", lo)?, parse_num(line, "bounds", hi)?),
        _ => return Err(ConfigError::at(line, "bounds must be 'r' or 'lo, hi'")),
    };
    result.map_err(|e| ConfigError::at(line, e.to_string()))
}

fn set_solver_key(s: &mut PendingSolver, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
    let c = &mut s.cfg;
    match key {
        "name" => {
            s.kind = Some(value.parse().map_err(|e: bilevel_core::BilevelError| {
                ConfigError::at(line, e.to_string())
            })?)
        }
        "label" => s.label = Some(value.to_string()),
        "k" => c.k = parse_num(line, key, value)?,
        "t" => c.t = parse_num(line, key, value)?,
        "sigma0" => c.sigma0 = parse_num(line, key, value)?,
        "rho0" => c.rho0 = parse_num(line, key, value)?,
        "gamma0" => c.gamma0 = parse_num(line, key, value)?,
        "eps0" => c.eps0 = parse_num(line, key, value)?,
        "lambda0" => c.lambda0 = parse_num(line, key, value)?,
        "nu0" => c.nu0 = parse_num(line, key, value)?,
        "c_gamma" => c.c_gamma = parse_num(line, key, value)?,
        "c_eps" => c.c_eps = parse_num(line, key, value)?,
        "c_lambda" => c.c_lambda = parse_num(line, key, value)?,
        "while_cap" => c.while_cap = parse_num(line, key, value)?,
        "gamma_max" => c.gamma_max = parse_num(line, key, value)?,
        "multiplier_update" => c.multiplier_update = parse_bool(line, key, value)?,
        "stepper" => {
            c.stepper = match value.to_ascii_lowercase().as_str() {
                "adam" => StepperKind::Adam,
                "gd" | "sgd" | "plain" => StepperKind::PlainGd,
                _ => return Err(ConfigError::at(line, format!("unknown stepper '{value}'"))),
            }
        }
        "bounds" => c.bounds = Some(parse_bounds(line, value)?),
        "record_every" => {
            c.record_every = parse_num(line, key, value)?;
            s.record_every_set = true;
        }
        "t_lin" => c.t_lin = Some(parse_num(line, key, value)?),
        "approx_reg" => c.approx_reg = parse_num(line, key, value)?,
        "linear_solver" => {
            c.linear_solver = value
                .parse::<LinearSolver>()
                .map_err(|e| ConfigError::at(line, e.to_string()))?
        }
        _ => return Err(ConfigError::at(line, format!("unknown key '{key}' in [solver]"))),
    }
    Ok(())
}

/// Parses and validates a configuration file's text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut section = Section::Global;
    let mut problem: Option<(usize, ProblemSpec)> = None;
    let mut problem_params: Vec<(usize, String, String)> = Vec::new();
    let mut solvers: Vec<PendingSolver> = Vec::new();
    let mut trials = 1u64;
    let mut seed = 0u64;
    let mut record_every: Option<usize> = None;
    let mut out = None;
    let (mut axis, mut values) = (None, None);
    let mut seen_problem = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, format!("malformed section header '{content}'")))?
                .trim();
            section = match name {
                "problem" if seen_problem => {
                    return Err(ConfigError::at(line, "only one [problem] section is allowed"))
                }
                "problem" => {
                    seen_problem = true;
                    Section::Problem
                }
                "solver" => {
                    solvers.push(PendingSolver {
                        line,
                        kind: None,
                        label: None,
                        cfg: PenaltyConfig::default(),
                        record_every_set: false,
                    });
                    Section::Solver
                }
                "sweep" => Section::Sweep,
                other => return Err(ConfigError::at(line, format!("unknown section [{other}]"))),
            };
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| ConfigError::at(line, format!("expected 'key = value', got '{content}'")))?;
        if key.is_empty() {
            return Err(ConfigError::at(line, "missing key before '='"));
        }
        match section {
            Section::Global => match key {
                "trials" => trials = parse_num(line, key, value)?,
                "seed" => seed = parse_num(line, key, value)?,
                "record_every" => record_every = Some(parse_num(line, key, value)?),
                "out" => out = Some(PathBuf::from(value)),
                _ => return Err(ConfigError::at(line, format!("unknown global key '{key}'"))),
            },
            Section::Problem => {
                if key == "name" {
                    let spec = ProblemSpec::by_name(value).map_err(|e| ConfigError::at(line, e.to_string()))?;
                    problem = Some((line, spec));
                } else {
                    problem_params.push((line, key.to_string(), value.to_string()));
                }
            }
            Section::Solver => {
                let s = solvers.last_mut().expect("a [solver] header was seen");
                set_solver_key(s, line, key, value)?;
            }
            Section::Sweep => match key {
                "axis" => axis = Some(value.parse::<SweepAxis>().map_err(|e| ConfigError::at(line, e.message))?),
                "values" => values = Some(parse_values(value).map_err(|e| ConfigError::at(line, e.message))?),
                _ => return Err(ConfigError::at(line, format!("unknown key '{key}' in [sweep]"))),
            },
        }
    }

    let (_, mut spec) = problem.ok_or_else(|| ConfigError::general("missing [problem] section with 'name'"))?;
    for (line, key, value) in problem_params {
        spec.set_param(&key, &value)
            .map_err(|e| ConfigError::at(line, e.to_string()))?;
    }
    if trials == 0 {
        return Err(ConfigError::general("trials must be >= 1"));
    }
    if solvers.is_empty() {
        return Err(ConfigError::general("at least one [solver] section is required"));
    }
    let mut entries = Vec::with_capacity(solvers.len());
    for mut s in solvers {
        let kind = s
            .kind
            .ok_or_else(|| ConfigError::at(s.line, "[solver] section lacks 'name'"))?;
        if let (Some(every), false) = (record_every, s.record_every_set) {
            s.cfg.record_every = every;
        }
        s.cfg
            .validate()
            .map_err(|e| ConfigError::at(s.line, format!("solver '{kind}': {e}")))?;
        let base = s.label.unwrap_or_else(|| kind.name().to_string());
        let clash = |l: &str| entries.iter().any(|e: &SolverEntry| e.label == l);
        let mut label = base.clone();
        let mut n = 2;
        while clash(&label) {
            label = format!("{base}-{n}");
            n += 1;
        }
        entries.push(SolverEntry { label, kind, cfg: s.cfg });
    }
    let sweep = match (axis, values) {
        (Some(axis), Some(values)) => Some(Sweep { axis, values }),
        (None, None) => None,
        _ => return Err(ConfigError::general("[sweep] needs both 'axis' and 'values'")),
    };
    Ok(RunConfig {
        problem: spec,
        solvers: entries,
        trials,
        seed: RngSeed(seed),
        out,
        sweep,
    })
}
