//! Comparison tables and precision-recall plots.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsReport, PrCurve};
use super::EvalError;

/// Macro-averaged outcome of one (dataset, configuration) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub config: String,
    pub macro_report: MetricsReport,
    #[serde(default)]
    pub micro_auprc: Option<f64>,
    #[serde(default)]
    pub probabilistic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// Rows are datasets, columns configurations.
    ByDataset,
    /// Rows are configurations, columns datasets.
    ByConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
    /// Best value per dataset (and for the average), ties included.
    pub best: Vec<Vec<bool>>,
}

pub const AVERAGE: &str = "Average";

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

fn mark_max(values: &[Option<f64>]) -> Vec<bool> {
    let max = values
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|v| v.is_some_and(|x| x == max)).collect()
}

fn transpose<T: Copy>(g: &[Vec<T>]) -> Vec<Vec<T>> {
    let cols = g.first().map_or(0, Vec::len);
    (0..cols)
        .map(|c| g.iter().map(|row| row[c]).collect())
        .collect()
}

/// Builds the comparison table for one metric. Datasets and configurations
/// keep first-seen order; an average over datasets is appended.
pub fn build_table(
    runs: &[RunSummary],
    metric: &str,
    grouping: Grouping,
) -> Result<Table, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoResults);
    }
    if MetricsReport::METRICS.iter().all(|m| *m != metric) {
        return Err(EvalError::InvalidConfig(format!(
            "unknown metric `{metric}`"
        )));
    }
    let (mut datasets, mut configs) = (Vec::new(), Vec::new());
    for r in runs {
        push_unique(&mut datasets, &r.dataset);
        push_unique(&mut configs, &r.config);
    }
    let value = |d: &str, c: &str| {
        runs.iter()
            .rev()
            .find(|r| r.dataset == d && r.config == c)
            .and_then(|r| r.macro_report.metric(metric))
    };
    // grid[d][c], datasets plus the average row
    let mut grid: Vec<Vec<Option<f64>>> = datasets
        .iter()
        .map(|d| configs.iter().map(|c| value(d, c)).collect())
        .collect();
    let avg: Vec<Option<f64>> = (0..configs.len())
        .map(|c| {
            let vals: Vec<f64> = grid.iter().filter_map(|row| row[c]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    grid.push(avg);
    let marks: Vec<Vec<bool>> = grid.iter().map(|row| mark_max(row)).collect();
    let mut dataset_names = datasets;
    dataset_names.push(AVERAGE.to_string());
    Ok(match grouping {
        Grouping::ByDataset => Table {
            corner: "dataset".into(),
            columns: configs,
            rows: dataset_names,
            cells: grid,
            best: marks,
        },
        Grouping::ByConfig => Table {
            corner: "config".into(),
            cells: transpose(&grid),
            best: transpose(&marks),
            columns: dataset_names,
            rows: configs.clone(),
        },
    })
}

/// CSV rendering; best cells carry a trailing `*`, missing cells are empty.
pub fn table_csv(t: &Table) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![t.corner.clone()];
    header.extend(t.columns.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (i, row) in t.rows.iter().enumerate() {
        let mut rec = vec![row.clone()];
        for (j, cell) in t.cells[i].iter().enumerate() {
            rec.push(match cell {
                Some(v) if t.best[i][j] => format!("{v:.3}*"),
                Some(v) => format!("{v:.3}"),
                None => String::new(),
            });
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// `label,recall,precision,threshold` rows for every curve.
pub fn curve_points_csv(curves: &[(String, PrCurve)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["config", "recall", "precision", "threshold"])
        .expect("in-memory write");
    for (label, c) in curves {
        for p in &c.points {
            w.write_record([
                label.clone(),
                format!("{}", p.recall),
                format!("{}", p.precision),
                format!("{}", p.threshold),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Step-wise precision-recall curves on shared axes, with each curve's
/// AUPRC in the legend.
pub fn render_pr_svg(title: &str, curves: &[(String, PrCurve)]) -> String {
    let (w, h) = (560.0, 420.0);
    let (left, right, top, bottom) = (56.0, 20.0, 36.0, 48.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x = |r: f64| left + r * pw;
    let y = |p: f64| top + (1.0 - p) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{l}" y1="{yy:.1}" x2="{r}" y2="{yy:.1}" stroke="#ddd"/><line x1="{xx:.1}" y1="{t}" x2="{xx:.1}" y2="{b}" stroke="#ddd"/>"##,
            l = left,
            r = left + pw,
            t = top,
            b = top + ph,
            xx = x(v),
            yy = y(v)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text><text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            left - 6.0,
            y(v) + 4.0,
            x(v),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Recall</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">Precision</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = Vec::new();
        let mut prev_r = 0.0;
        if let Some(first) = c.points.first() {
            pts.push((0.0, first.precision));
        }
        for p in &c.points {
            pts.push((prev_r, p.precision));
            pts.push((p.recall, p.precision));
            prev_r = p.recall;
        }
        let path: Vec<String> = pts
            .iter()
            .map(|(r, p)| format!("{:.2},{:.2}", x(*r), y(*p)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 16.0 * i as f64;
        let lx = left + pw - 200.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{ly:.1}">{} (AUPRC {:.3})</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 24.0,
            escape(label),
            c.auprc
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::eval::metrics::pr_curve;

    fn rep(mcc: f64) -> MetricsReport {
        MetricsReport {
            accuracy: 0.9,
            recall: 0.5,
            precision: 0.5,
            f1: 0.5,
            mcc,
            auprc: 0.5,
            n: 10,
            fold_index: None,
        }
    }

    fn run(d: &str, c: &str, mcc: f64) -> RunSummary {
        RunSummary {
            dataset: d.into(),
            config: c.into(),
            macro_report: rep(mcc),
            micro_auprc: None,
            probabilistic: false,
        }
    }

    #[test]
    fn two_runs_one_dataset() {
        let t = build_table(
            &[run("D", "a", 0.2), run("D", "b", 0.4)],
            "mcc",
            Grouping::ByDataset,
        )
        .unwrap();
        assert_eq!(t.columns, ["a", "b"]);
        assert_eq!(t.best[0], [false, true]);
        let csv = table_csv(&t);
        assert_eq!(csv.lines().nth(1).unwrap(), "D,0.200,0.400*");
        assert!(matches!(
            build_table(&[], "mcc", Grouping::ByDataset),
            Err(EvalError::NoResults)
        ));
    }

    #[test]
    fn by_config_transposes() {
        let runs = [
            run("D1", "a", 0.2),
            run("D2", "a", 0.6),
            run("D1", "b", 0.3),
        ];
        let t = build_table(&runs, "mcc", Grouping::ByConfig).unwrap();
        assert_eq!(t.rows, ["a", "b"]);
        assert_eq!(t.columns, ["D1", "D2", AVERAGE]);
        assert_eq!(t.cells[1][1], None);
        assert!(t.best[1][0] && !t.best[0][0]);
    }

    #[test]
    fn svg_has_legend() {
        let c = pr_curve(&[Label::Include, Label::Exclude], &[0.9, 0.1]).unwrap();
        let svg = render_pr_svg("T <1>", &[("cfg".into(), c)]);
        assert!(svg.contains("cfg (AUPRC 1.000)"));
        assert!(svg.contains("T &lt;1&gt;"));
    }
}
