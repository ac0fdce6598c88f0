//! CSV tables written by `bench` and `summarize`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::metrics::SummaryRow;
use super::plan::Method;
use super::run::{FailureRow, ResultRow, RunOutput, TimingRow};
use crate::datagen::CovariateModel;
use crate::error::{Error, Result};
use crate::estimators::EstimatorMode;

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const FAILURES_FILE: &str = "failures.csv";

/// Rows with a fixed header, so empty tables still get one.
pub trait CsvRecord: Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRecord for ResultRow {
    const HEADER: &'static [&'static str] = &[
        "scenario", "covariate_model", "n", "p", "d", "missing_prob", "snr", "tau", "replication", "seed",
        "method", "estimator", "b", "l", "lambda", "tau_hat", "variance", "ci_low", "ci_high", "converged",
    ];
}

impl CsvRecord for TimingRow {
    const HEADER: &'static [&'static str] = &["scenario", "replication", "method", "estimator", "runtime_secs"];
}

impl CsvRecord for FailureRow {
    const HEADER: &'static [&'static str] = &["scenario", "replication", "seed", "method", "estimator", "error"];
}

impl CsvRecord for SummaryRow {
    const HEADER: &'static [&'static str] = &[
        "scenario", "covariate_model", "n", "p", "d", "missing_prob", "snr", "tau", "method", "estimator",
        "completed", "failed", "mean_tau_hat", "bias", "mse", "sd", "mse_se", "mean_runtime_secs",
    ];
}

/// A point of a figure: `x` is the swept axis, one series per method and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub axis: String,
    pub x: f64,
    pub method: Method,
    pub estimator: EstimatorMode,
    pub covariate_model: CovariateModel,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub missing_prob: f64,
    pub snr: f64,
    pub tau: f64,
    pub bias: f64,
    pub mse: f64,
    pub mse_se: f64,
}

impl CsvRecord for PlotRow {
    const HEADER: &'static [&'static str] = &[
        "axis", "x", "method", "estimator", "covariate_model", "n", "p", "d", "missing_prob", "snr", "tau",
        "bias", "mse", "mse_se",
    ];
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

pub fn write_table<T: CsvRecord>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(T::HEADER).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Axes swept by the summary (each with more than one value).
const AXES: [&str; 3] = ["missing_prob", "p", "n"];

fn axis_value(row: &SummaryRow, axis: &str) -> f64 {
    match axis {
        "missing_prob" => row.missing_prob,
        "p" => row.p as f64,
        _ => row.n as f64,
    }
}

pub fn plot_rows(summary: &[SummaryRow], axis: &str) -> Vec<PlotRow> {
    summary
        .iter()
        .map(|s| PlotRow {
            axis: axis.to_string(),
            x: axis_value(s, axis),
            method: s.method,
            estimator: s.estimator,
            covariate_model: s.covariate_model,
            n: s.n,
            p: s.p,
            d: s.d,
            missing_prob: s.missing_prob,
            snr: s.snr,
            tau: s.tau,
            bias: s.bias,
            mse: s.mse,
            mse_se: s.mse_se,
        })
        .collect()
}

/// Writes the summary and one `plot_<axis>.csv` per swept axis. Returns the
/// paths written.
pub fn write_summary(summary: &[SummaryRow], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = vec![dir.join(SUMMARY_FILE)];
    write_table(&written[0], summary)?;
    for axis in AXES {
        let values: BTreeSet<u64> = summary.iter().map(|s| axis_value(s, axis).to_bits()).collect();
        if values.len() > 1 {
            let path = dir.join(format!("plot_{axis}.csv"));
            write_table(&path, &plot_rows(summary, axis))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// `results.csv`, `timings.csv`, `failures.csv`, then the summary files.
pub fn emit_outputs(run: &RunOutput, summary: &[SummaryRow], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let results = dir.join(RESULTS_FILE);
    let timings = dir.join(TIMINGS_FILE);
    let failures = dir.join(FAILURES_FILE);
    write_table(&results, &run.results)?;
    write_table(&timings, &run.timings)?;
    write_table(&failures, &run.failures)?;
    let mut written = vec![results, timings, failures];
    written.extend(write_summary(summary, dir)?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tables_have_headers() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_outputs(&RunOutput::default(), &[], dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let text = std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        assert_eq!(text.trim_end(), ResultRow::HEADER.join(","));
        let rows: Vec<ResultRow> = read_table(&dir.path().join(RESULTS_FILE)).unwrap();
        assert!(rows.is_empty());
    }
}
