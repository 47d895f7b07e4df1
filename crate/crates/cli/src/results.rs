use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use llmclf::corpus::Label;
use llmclf::eval::report::{
    build_table, curve_points_csv, render_pr_svg, table_csv, Grouping, RunSummary,
};
use llmclf::eval::{micro_pr_curve, MetricsReport, PrCurve};

use crate::artifacts::{find_summaries, read_predictions, PREDICTIONS_FILE};
use crate::{io_error, CliError, ErrorKind, GroupingArg, PlotArgs, ReportArgs};

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn no_results(root: &Path) -> CliError {
    CliError::new(
        ErrorKind::NoResults,
        format!("no completed runs under {}", root.display()),
    )
}

pub fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let runs: Vec<RunSummary> = find_summaries(&a.results)?
        .iter()
        .filter_map(|(_, s)| s.to_run_summary())
        .collect();
    if runs.is_empty() {
        return Err(no_results(&a.results));
    }
    let metrics: Vec<&str> = match &a.metric {
        Some(m) => {
            if !MetricsReport::METRICS.contains(&m.as_str()) {
                return Err(CliError::new(
                    ErrorKind::Usage,
                    format!(
                        "unknown metric `{m}` (expected one of {})",
                        MetricsReport::METRICS.join(", ")
                    ),
                ));
            }
            vec![m.as_str()]
        }
        None => MetricsReport::METRICS.to_vec(),
    };
    let grouping = match a.grouping {
        GroupingArg::ByDataset => Grouping::ByDataset,
        GroupingArg::ByConfig => Grouping::ByConfig,
    };
    let out = a.out.as_deref().unwrap_or(&a.results);
    for m in metrics {
        let table = build_table(&runs, m, grouping)
            .map_err(|e| CliError::new(ErrorKind::Input, e.to_string()))?;
        let path = out.join(format!("table_{m}.csv"));
        write(&path, &table_csv(&table))?;
        println!("{}", path.display());
    }
    Ok(())
}

/// Pools a run's logged predictions across folds.
pub fn pooled_curve(predictions_path: &Path) -> Result<PrCurve, CliError> {
    let records = read_predictions(predictions_path)?;
    let mut folds: BTreeMap<usize, (Vec<Label>, Vec<f64>)> = BTreeMap::new();
    for r in &records {
        let e = folds.entry(r.fold).or_default();
        e.0.push(r.truth());
        e.1.push(r.score_used);
    }
    let per_fold: Vec<(Vec<Label>, Vec<f64>)> = folds.into_values().collect();
    micro_pr_curve(&per_fold).map_err(|e| {
        CliError::new(
            ErrorKind::Input,
            format!("{}: {e}", predictions_path.display()),
        )
    })
}

pub fn cmd_plot(a: &PlotArgs) -> Result<(), CliError> {
    let summaries = find_summaries(&a.results)?;
    if summaries.iter().all(|(_, s)| s.macro_report.is_none()) {
        return Err(no_results(&a.results));
    }
    let mut by_dataset: BTreeMap<String, Vec<(String, PrCurve)>> = BTreeMap::new();
    for (path, s) in &summaries {
        if !s.probabilistic || s.macro_report.is_none() {
            continue;
        }
        let dir = path.parent().expect("summary inside a run directory");
        let curve = pooled_curve(&dir.join(PREDICTIONS_FILE))?;
        by_dataset
            .entry(s.dataset.clone())
            .or_default()
            .push((s.config.clone(), curve));
    }
    if by_dataset.is_empty() {
        return Err(CliError::new(
            ErrorKind::NoProbabilisticRuns,
            "no completed run produced probabilities; hard-label methods give degenerate curves",
        ));
    }
    let out = a.out.as_deref().unwrap_or(&a.results);
    for (dataset, curves) in &by_dataset {
        let stem = format!("pr_{}", file_safe(dataset));
        let svg = out.join(format!("{stem}.svg"));
        write(&svg, &render_pr_svg(dataset, curves))?;
        write(&out.join(format!("{stem}.csv")), &curve_points_csv(curves))?;
        println!("{}", svg.display());
    }
    Ok(())
}
