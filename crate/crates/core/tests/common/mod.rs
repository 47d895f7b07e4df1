//! Brute-force oracles and golden-file helpers shared by the integration
//! tests and the acceptance suite. Everything here is written directly from
//! the metric definitions, without reusing library code paths.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use llmclf::corpus::{FoldSplit, Label};
use llmclf::prompt::RenderedPrompt;
use serde::Deserialize;

pub struct Brute {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Hard-label metrics by counting sample pairs one at a time.
pub fn brute_hard(truth: &[bool], pred: &[bool]) -> Brute {
    let count = |t: bool, p: bool| {
        truth
            .iter()
            .zip(pred)
            .filter(|(a, b)| **a == t && **b == p)
            .count() as f64
    };
    let (tp, fp, fn_) = (count(true, true), count(false, true), count(true, false));
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    let f1 = div(2.0 * tp, 2.0 * tp + fp + fn_);
    let n = truth.len() as f64;
    // Correlation of the two 0/1 indicator vectors.
    let mean = |v: &[bool]| v.iter().filter(|b| **b).count() as f64 / n;
    let (mt, mp) = (mean(truth), mean(pred));
    let (mut cov, mut vt, mut vp) = (0.0, 0.0, 0.0);
    for (t, p) in truth.iter().zip(pred) {
        let (x, y) = (f64::from(u8::from(*t)) - mt, f64::from(u8::from(*p)) - mp);
        cov += x * y;
        vt += x * x;
        vp += y * y;
    }
    Brute {
        precision,
        recall,
        f1,
        mcc: div(cov, (vt * vp).sqrt()),
    }
}

/// Average precision as the mean, over positives, of the precision at
/// that positive's own score (every sample scoring at least as high counts).
pub fn brute_auprc(truth: &[bool], scores: &[f64]) -> f64 {
    let positives: Vec<usize> = (0..truth.len()).filter(|&i| truth[i]).collect();
    let mut sum = 0.0;
    for &i in &positives {
        let at_or_above: Vec<usize> = (0..truth.len())
            .filter(|&j| scores[j] >= scores[i])
            .collect();
        let hits = at_or_above.iter().filter(|&&j| truth[j]).count();
        sum += hits as f64 / at_or_above.len() as f64;
    }
    sum / positives.len() as f64
}

pub fn labels(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|b| Label::from_bool(*b)).collect()
}

/// Checks that folds partition `ids` and that each class's per-fold counts
/// differ by at most one. Returns a description of the first violation.
pub fn check_folds(ids: &[(String, bool)], folds: &[FoldSplit]) -> Result<(), String> {
    let label: BTreeMap<&str, bool> = ids.iter().map(|(i, l)| (i.as_str(), *l)).collect();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for f in folds {
        if f.train_ids.len() + f.test_ids.len() != ids.len() {
            return Err(format!("fold {} does not cover the dataset", f.fold_index));
        }
        for id in &f.test_ids {
            *seen.entry(id.as_str()).or_default() += 1;
            if f.train_ids.contains(id) {
                return Err(format!(
                    "{id} is in both train and test of fold {}",
                    f.fold_index
                ));
            }
        }
    }
    if seen.len() != ids.len() || seen.values().any(|&n| n != 1) {
        return Err("test sets are not a partition".into());
    }
    for class in [true, false] {
        let counts: Vec<usize> = folds
            .iter()
            .map(|f| {
                f.test_ids
                    .iter()
                    .filter(|id| label[id.as_str()] == class)
                    .count()
            })
            .collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        if hi - lo > 1 {
            return Err(format!("class {class} fold counts {counts:?}"));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct GoldenInput {
    pub topic: String,
    pub text: String,
    pub examples: Vec<(String, String)>,
    pub last_gen: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct GoldenMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Deserialize)]
pub struct Golden {
    pub template: String,
    pub input: GoldenInput,
    pub prefill: Option<String>,
    pub messages: Vec<GoldenMessage>,
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Every golden file, sorted by template name.
pub fn goldens() -> Vec<Golden> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(golden_dir())
        .expect("golden dir")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap())
        .collect()
}

pub fn golden(name: &str) -> Golden {
    goldens()
        .into_iter()
        .find(|g| g.template == name)
        .unwrap_or_else(|| panic!("no golden for {name}"))
}

/// Byte comparison of a rendered prompt against a golden file.
pub fn compare(g: &Golden, p: &RenderedPrompt) -> Result<(), String> {
    if p.prefill != g.prefill {
        return Err(format!(
            "{}: prefill {:?} != {:?}",
            g.template, p.prefill, g.prefill
        ));
    }
    if p.messages.len() != g.messages.len() {
        return Err(format!(
            "{}: {} messages, golden has {}",
            g.template,
            p.messages.len(),
            g.messages.len()
        ));
    }
    for (i, (m, e)) in p.messages.iter().zip(&g.messages).enumerate() {
        if m.role.to_string() != e.role || m.content.as_bytes() != e.content.as_bytes() {
            return Err(format!(
                "{} message {i}:\n  got      {}: {:?}\n  expected {}: {:?}",
                g.template, m.role, m.content, e.role, e.content
            ));
        }
    }
    Ok(())
}
