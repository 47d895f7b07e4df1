use serde::{Deserialize, Serialize};

use crate::corpus::Label;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        ratio(2.0 * p * r, p + r)
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (
            self.tp as f64,
            self.fp as f64,
            self.tn as f64,
            self.fn_ as f64,
        );
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        ratio(tp * tn - fp * fn_, den)
    }
}

pub fn confusion(truth: &[Label], pred: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut m = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(pred) {
        match (t.is_positive(), p.is_positive()) {
            (true, true) => m.tp += 1,
            (false, true) => m.fp += 1,
            (false, false) => m.tn += 1,
            (true, false) => m.fn_ += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, thresholds descending, so recall is
    /// non-decreasing along the list.
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

/// Threshold sweep over distinct scores (predict positive when score >=
/// threshold). AUPRC is the step sum `sum (R_i - R_{i-1}) * P_i`.
pub fn pr_curve(truth: &[Label], scores: &[f64]) -> Result<PrCurve, EvalError> {
    if truth.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            left: truth.len(),
            right: scores.len(),
        });
    }
    if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(EvalError::InvalidScore(s));
    }
    let positives = truth.iter().filter(|l| l.is_positive()).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut auprc, mut prev_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if truth[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            recall,
            precision,
        });
    }
    Ok(PrCurve { points, auprc })
}

/// Pools every fold's labels and scores into one curve.
pub fn micro_pr_curve(folds: &[(Vec<Label>, Vec<f64>)]) -> Result<PrCurve, EvalError> {
    let truth: Vec<Label> = folds.iter().flat_map(|f| f.0.iter().copied()).collect();
    let scores: Vec<f64> = folds.iter().flat_map(|f| f.1.iter().copied()).collect();
    pr_curve(&truth, &scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub mcc: f64,
    pub auprc: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_index: Option<usize>,
}

impl MetricsReport {
    pub const METRICS: [&'static str; 6] =
        ["accuracy", "recall", "precision", "f1", "mcc", "auprc"];

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "accuracy" => self.accuracy,
            "recall" => self.recall,
            "precision" => self.precision,
            "f1" => self.f1,
            "mcc" => self.mcc,
            "auprc" => self.auprc,
            _ => return None,
        })
    }
}

/// Hard-label metrics from `pred`, AUPRC from `scores`.
pub fn evaluate(
    truth: &[Label],
    pred: &[Label],
    scores: &[f64],
    fold_index: Option<usize>,
) -> Result<MetricsReport, EvalError> {
    let m = confusion(truth, pred)?;
    let curve = pr_curve(truth, scores)?;
    Ok(MetricsReport {
        accuracy: m.accuracy(),
        recall: m.recall(),
        precision: m.precision(),
        f1: m.f1(),
        mcc: m.mcc(),
        auprc: curve.auprc,
        n: m.total(),
        fold_index,
    })
}

/// Unweighted mean of each metric; `n` is the total sample count.
pub fn macro_average(reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let k = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    Ok(MetricsReport {
        accuracy: mean(|r| r.accuracy),
        recall: mean(|r| r.recall),
        precision: mean(|r| r.precision),
        f1: mean(|r| r.f1),
        mcc: mean(|r| r.mcc),
        auprc: mean(|r| r.auprc),
        n: reports.iter().map(|r| r.n).sum(),
        fold_index: None,
    })
}
