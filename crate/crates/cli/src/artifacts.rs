//! On-disk layout of one run: `<out>/<dataset>/<backend>/<label>/`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use llmclf::eval::report::RunSummary;
use llmclf::eval::runner::RunFailure;
use llmclf::eval::{ExperimentResult, FoldResult, MetricsReport, PredictionRecord};
use serde::{Deserialize, Serialize};

use crate::{io_error, CliError, ErrorKind};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const FOLDS_FILE: &str = "folds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PROMPTS_FILE: &str = "prompts.jsonl";

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSummary {
    pub dataset: String,
    /// Column name in comparison tables.
    pub config: String,
    pub label: String,
    pub backend: String,
    pub method: String,
    pub probabilistic: bool,
    pub macro_report: Option<MetricsReport>,
    pub micro_auprc: Option<f64>,
    pub fallbacks: usize,
    pub unrecognized: usize,
    pub failure: Option<RunFailure>,
}

impl StoredSummary {
    pub fn to_run_summary(&self) -> Option<RunSummary> {
        Some(RunSummary {
            dataset: self.dataset.clone(),
            config: self.config.clone(),
            macro_report: self.macro_report.clone()?,
            micro_auprc: self.micro_auprc,
            probabilistic: self.probabilistic,
        })
    }
}

pub fn run_dir(out: &Path, dataset: &str, backend: &str, label: &str) -> PathBuf {
    out.join(dataset).join(backend).join(label)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn folds_csv(folds: &[FoldResult]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["fold", "train_size", "test_size"];
    header.extend(MetricsReport::METRICS);
    header.extend(["n", "fallbacks", "unrecognized", "coverage_pct", "error"]);
    w.write_record(&header)?;
    for f in folds {
        let mut row = vec![
            f.fold_index.to_string(),
            f.train_size.to_string(),
            f.test_size.to_string(),
        ];
        for m in MetricsReport::METRICS {
            row.push(opt(f.report.as_ref().and_then(|r| r.metric(m))));
        }
        row.push(
            f.report
                .as_ref()
                .map(|r| r.n.to_string())
                .unwrap_or_default(),
        );
        row.push(f.fallbacks.to_string());
        row.push(f.unrecognized.to_string());
        row.push(opt(f.coverage));
        row.push(f.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

/// Writes the prediction log, per-fold table and summary of one run.
pub fn write_run(
    dir: &Path,
    summary: &StoredSummary,
    result: &ExperimentResult,
) -> Result<(), CliError> {
    write_jsonl(&dir.join(PREDICTIONS_FILE), &result.predictions)?;
    let csv = folds_csv(&result.folds).map_err(|e| io_error(&dir.join(FOLDS_FILE), e))?;
    write_file(&dir.join(FOLDS_FILE), &csv)?;
    let mut json = serde_json::to_vec_pretty(summary).expect("summary serializes");
    json.push(b'\n');
    write_file(&dir.join(SUMMARY_FILE), &json)
}

/// Every `summary.json` below `root`, in path order.
pub fn find_summaries(root: &Path) -> Result<Vec<(PathBuf, StoredSummary)>, CliError> {
    if !root.is_dir() {
        return Err(CliError::new(
            ErrorKind::NoResults,
            format!("{} is not a results directory", root.display()),
        ));
    }
    let mut paths = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| io_error(&dir, e))? {
            let path = entry.map_err(|e| io_error(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == SUMMARY_FILE) {
                paths.push(path);
            }
        }
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| io_error(&p, e))?;
            let s: StoredSummary = serde_json::from_str(&text)
                .map_err(|e| CliError::new(ErrorKind::Input, format!("{}: {e}", p.display())))?;
            Ok((p, s))
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                CliError::new(
                    ErrorKind::Input,
                    format!("{} line {}: {e}", path.display(), i + 1),
                )
            })
        })
        .collect()
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                ErrorKind::Locked,
                format!(
                    "{} is in use by another run (remove {} if it is stale)",
                    dir.display(),
                    path.display()
                ),
            )),
            Err(e) => Err(io_error(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
