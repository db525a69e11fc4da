//! Running one config: build the problem and optimizer, drive it, write the
//! CSV trace and its JSON sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use blrkit::optimizers::{drive, registry, RunStatus, RunTrace};
use serde::Serialize;
use thiserror::Error;

use crate::config::{to_pairs, ExperimentConfig};

pub const COLUMNS: [&str; 5] = ["step", "loss_at_eval_point", "lambda_norm", "residual", "wall_ms"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// The config names a combination the library rejects (bad estimator for a
    /// preset, dimension mismatch, ...).
    #[error("cannot set up run: {0}")]
    Setup(blrkit::Error),
    #[error("run failed: {0}")]
    Run(blrkit::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug)]
pub struct Outcome {
    pub trace: RunTrace,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Builds and drives the configured run without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunTrace, ExperimentError> {
    let obj = cfg.problem.build().map_err(ExperimentError::Setup)?;
    let mut opt = registry().build(&cfg.optimizer, obj.as_ref(), cfg.seed).map_err(ExperimentError::Setup)?;
    drive(opt.as_mut(), &cfg.optimizer, obj.as_ref(), cfg.steps, cfg.seed).map_err(ExperimentError::Run)
}

/// Runs the config and writes `<output>.csv` and `<output>.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let trace = execute(cfg)?;
    let (csv, json) = (cfg.csv_path(), cfg.json_path());
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io { path: dir.to_path_buf(), source })?;
    }
    write_file(&csv, trace_csv(&trace).as_bytes())?;
    write_file(&json, sidecar_json(cfg, &trace).as_bytes())?;
    Ok(Outcome { trace, csv, json })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

/// CSV with [`COLUMNS`]; floats use the shortest representation that reads
/// back to the same bits.
pub fn trace_csv(trace: &RunTrace) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).expect("writing to memory");
    for r in &trace.records {
        let row = [r.step.to_string(), r.loss.to_string(), r.lambda_norm.to_string(), r.residual.to_string(), r.wall_ms.to_string()];
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("ascii output")
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: serde_json::Map<String, serde_json::Value>,
    status: &'a str,
    steps_run: usize,
    collapsed: bool,
    final_loss: Option<f64>,
    final_residual: Option<f64>,
}

pub fn sidecar_json(cfg: &ExperimentConfig, trace: &RunTrace) -> String {
    let last = trace.records.last();
    let s = Sidecar {
        config: to_pairs(cfg).into_iter().collect(),
        status: trace.status.as_str(),
        steps_run: trace.records.len(),
        collapsed: trace.collapsed,
        final_loss: last.map(|r| r.loss).filter(|x| x.is_finite()),
        final_residual: last.map(|r| r.residual).filter(|x| x.is_finite()),
    };
    let mut text = serde_json::to_string_pretty(&s).expect("plain data serializes");
    text.push('\n');
    text
}

/// CLI exit status of a finished run: a failed step is a convergence failure.
pub fn exit_code(trace: &RunTrace) -> i32 {
    match trace.status {
        RunStatus::Converged | RunStatus::MaxSteps => 0,
        RunStatus::StepFailure => 1,
    }
}
