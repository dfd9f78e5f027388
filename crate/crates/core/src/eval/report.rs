//! Plot-ready outputs of a run. File names carry a short hash of the run
//! configuration so runs with different settings never collide.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::experiment::{ExperimentRun, InitSummary, UpdateReport};
use super::stats::{mean, spearman, std_dev};
use crate::anomaly::{threshold_trace, AnomalyFlag, ErrorSeries};
use crate::error::Result;

/// First 12 hex digits of the SHA-256 of the JSON-encoded `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub updates: usize,
    pub init: InitSummary,
    pub mean_local_error: f64,
    pub std_local_error: f64,
    pub mean_global_error: Option<f64>,
    pub std_global_error: Option<f64>,
    pub mean_dash_seconds: f64,
    pub mean_baseline_seconds: Option<f64>,
    /// Rank correlation of update time with update index.
    pub dash_time_spearman: Option<f64>,
    pub baseline_time_spearman: Option<f64>,
}

fn trend(times: &[f64]) -> Option<f64> {
    (times.len() >= 2).then(|| {
        let idx: Vec<f64> = (1..=times.len()).map(|i| i as f64).collect();
        spearman(&idx, times)
    })
}

pub fn summarize(run: &ExperimentRun) -> RunSummary {
    let local = run.local_errors();
    let global = run.global_errors();
    let dash = run.dash_seconds();
    let baseline = run.baseline_seconds();
    RunSummary {
        updates: run.reports.len(),
        init: run.init.clone(),
        mean_local_error: mean(&local),
        std_local_error: std_dev(&local),
        mean_global_error: (!global.is_empty()).then(|| mean(&global)),
        std_global_error: (!global.is_empty()).then(|| std_dev(&global)),
        mean_dash_seconds: mean(&dash),
        mean_baseline_seconds: (!baseline.is_empty()).then(|| mean(&baseline)),
        dash_time_spearman: trend(&dash),
        baseline_time_spearman: trend(&baseline),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per update.
pub fn write_reports_csv(path: &Path, reports: &[UpdateReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "update_index",
        "dash_seconds",
        "baseline_seconds",
        "local_error",
        "global_error",
        "rows_ingested",
        "new_slices",
        "slices_updated",
    ])?;
    for r in reports {
        w.write_record([
            r.update_index.to_string(),
            r.dash_seconds.to_string(),
            opt(r.baseline_seconds),
            r.local_error.to_string(),
            opt(r.global_error),
            r.rows_ingested.to_string(),
            r.new_slices.to_string(),
            r.slices_updated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(update_index, te, threshold)` and `(update_index, slice_id, se,
/// threshold)` traces.
pub fn write_error_traces(
    tensor_path: &Path,
    slice_path: &Path,
    errors: &ErrorSeries,
    window: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_path(tensor_path)?;
    w.write_record(["update_index", "te", "threshold"])?;
    for (n, te, th) in threshold_trace(&errors.tensor, window) {
        w.write_record([n.to_string(), te.to_string(), opt(th)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(slice_path)?;
    w.write_record(["update_index", "slice_id", "se", "threshold"])?;
    for (id, series) in &errors.slices {
        for (n, se, th) in threshold_trace(series, window) {
            w.write_record([n.to_string(), id.clone(), se.to_string(), opt(th)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WrittenFiles {
    pub reports_csv: PathBuf,
    pub summary_json: PathBuf,
    pub anomalies_json: PathBuf,
    pub tensor_errors_csv: PathBuf,
    pub slice_errors_csv: PathBuf,
}

/// Writes every run output under `dir`, named after `hash`.
pub fn write_run(
    dir: &Path,
    hash: &str,
    run: &ExperimentRun,
    flags: &[AnomalyFlag],
    window: usize,
) -> Result<WrittenFiles> {
    fs::create_dir_all(dir)?;
    let files = WrittenFiles {
        reports_csv: dir.join(format!("reports_{hash}.csv")),
        summary_json: dir.join(format!("summary_{hash}.json")),
        anomalies_json: dir.join(format!("anomalies_{hash}.json")),
        tensor_errors_csv: dir.join(format!("tensor_errors_{hash}.csv")),
        slice_errors_csv: dir.join(format!("slice_errors_{hash}.csv")),
    };
    write_reports_csv(&files.reports_csv, &run.reports)?;
    fs::write(
        &files.summary_json,
        serde_json::to_string_pretty(&summarize(run))?,
    )?;
    fs::write(&files.anomalies_json, serde_json::to_string_pretty(flags)?)?;
    write_error_traces(
        &files.tensor_errors_csv,
        &files.slice_errors_csv,
        &run.errors,
        window,
    )?;
    Ok(files)
}
