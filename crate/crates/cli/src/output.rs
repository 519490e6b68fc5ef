//! CSV writers. Floats use 17 significant digits so values round-trip.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::runner::{to_millis, Summary, TrialRun};

pub const RUN_HEADER: [&str; 15] = [
    "trial",
    "k",
    "wall_seconds",
    "gamma",
    "eps",
    "lambda",
    "f",
    "g",
    "grad_u_norm",
    "grad_v_norm",
    "feas_norm",
    "distance",
    "n_hvp",
    "n_jvp",
    "peak_stored_vecs",
];

pub const SUMMARY_HEADER: [&str; 15] = [
    "label",
    "solver",
    "problem",
    "axis",
    "value",
    "trials",
    "metric",
    "metric_mean",
    "metric_sd",
    "n_hvp_mean",
    "n_jvp_mean",
    "n_dense_mean",
    "peak_stored_vecs",
    "wall_seconds_mean",
    "file",
];

/// `x` with 17 significant digits; `NaN`, `inf` and `-inf` spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn create_parent(path: &Path) -> io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir),
        _ => Ok(()),
    }
}

fn to_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// One row per recorded iteration, trials in order.
pub fn write_runs(path: &Path, runs: &[TrialRun]) -> io::Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(RUN_HEADER).map_err(to_io)?;
    for run in runs {
        for r in &run.trace.records {
            w.write_record([
                run.trial.to_string(),
                r.k.to_string(),
                fmt_f64(to_millis(r.wall_seconds)),
                fmt_f64(r.gamma),
                fmt_f64(r.eps),
                fmt_f64(r.lambda),
                fmt_f64(r.f),
                fmt_f64(r.g),
                fmt_f64(r.grad_u_norm),
                fmt_f64(r.grad_v_norm),
                fmt_f64(r.feas_norm),
                r.distance.map(fmt_f64).unwrap_or_default(),
                r.counters.n_hvp.to_string(),
                r.counters.n_jvp.to_string(),
                r.counters.peak_stored_vecs.to_string(),
            ])
            .map_err(to_io)?;
        }
    }
    w.flush()
}

/// A summary row with its sweep coordinate and per-trial file.
pub struct SummaryRow<'a> {
    pub summary: &'a Summary,
    pub problem: &'a str,
    pub axis: Option<(&'a str, f64)>,
    pub file: &'a Path,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow<'_>]) -> io::Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(SUMMARY_HEADER).map_err(to_io)?;
    for row in rows {
        let s = row.summary;
        let (axis, value) = row
            .axis
            .map_or((String::new(), String::new()), |(a, v)| (a.to_string(), fmt_f64(v)));
        let file = row
            .file
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        w.write_record([
            s.label.clone(),
            s.solver.clone(),
            row.problem.to_string(),
            axis,
            value,
            s.trials.to_string(),
            s.metric.to_string(),
            fmt_f64(s.metric_mean),
            fmt_f64(s.metric_sd),
            fmt_f64(s.n_hvp),
            fmt_f64(s.n_jvp),
            fmt_f64(s.n_dense),
            s.peak_stored_vecs.to_string(),
            fmt_f64(s.wall_seconds),
            file,
        ])
        .map_err(to_io)?;
    }
    w.flush()
}

/// `<dir>/<stem>.<tag>.csv` beside `summary`, with `tag` reduced to
/// filename-safe characters.
pub fn sibling_path(summary: &Path, tag: &str) -> PathBuf {
    let stem = summary
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "bilevel".into());
    let safe: String = tag
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    summary.with_file_name(format!("{stem}.{safe}.csv"))
}
