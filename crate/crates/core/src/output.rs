//! Turning raw model output into class predictions.
//!
//! Five processing methods are supported: plain-word search, JSON boolean
//! search, 0-5 integer scores, and two first-token-probability methods that
//! sum the probability mass of tokens prefixing each expected answer.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMethod {
    Word,
    Json,
    Score,
    TokenWord,
    TokenJson,
}

impl OutputMethod {
    pub const ALL: [OutputMethod; 5] = [
        OutputMethod::Word,
        OutputMethod::Json,
        OutputMethod::Score,
        OutputMethod::TokenWord,
        OutputMethod::TokenJson,
    ];

    pub fn uses_token_distribution(self) -> bool {
        matches!(self, OutputMethod::TokenWord | OutputMethod::TokenJson)
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputMethod::Word => "word",
            OutputMethod::Json => "json",
            OutputMethod::Score => "score",
            OutputMethod::TokenWord => "token_word",
            OutputMethod::TokenJson => "token_json",
        }
    }
}

/// Predicted class of a single model answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictedLabel {
    Negative,
    Positive,
    Unrecognized,
}

impl PredictedLabel {
    fn from_probability(p_pos: f64) -> Self {
        if p_pos > 0.5 {
            PredictedLabel::Positive
        } else {
            PredictedLabel::Negative
        }
    }
}

impl From<Label> for PredictedLabel {
    fn from(l: Label) -> Self {
        if l.is_positive() {
            PredictedLabel::Positive
        } else {
            PredictedLabel::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: PredictedLabel,
    pub p_pos: Option<f64>,
    pub method: OutputMethod,
    pub raw_text: String,
    /// Set when a token method found no matching token and fell back to 0.5.
    #[serde(default)]
    pub fallback: bool,
}

impl Prediction {
    pub fn unrecognized(method: OutputMethod, raw_text: impl Into<String>) -> Self {
        Prediction {
            label: PredictedLabel::Unrecognized,
            p_pos: None,
            method,
            raw_text: raw_text.into(),
            fallback: false,
        }
    }

    /// Hard class used for confusion-matrix metrics: probabilities are
    /// thresholded with `> 0.5`, unrecognized answers count as negative.
    pub fn hard_label(&self) -> Label {
        match self.p_pos {
            Some(p) => Label::from_bool(p > 0.5),
            None => Label::from_bool(self.label == PredictedLabel::Positive),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnswersError {
    #[error("expected answers must be non-empty")]
    Empty,
    #[error("expected answers `{0}` and `{1}` overlap (one is a prefix of the other)")]
    Overlapping(String, String),
}

/// The pair of phrases the model is asked to answer with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpectedAnswers {
    negative: String,
    positive: String,
}

impl ExpectedAnswers {
    pub fn new(
        negative: impl Into<String>,
        positive: impl Into<String>,
    ) -> Result<Self, AnswersError> {
        let (negative, positive) = (negative.into(), positive.into());
        if negative.is_empty() || positive.is_empty() {
            return Err(AnswersError::Empty);
        }
        let (n, p) = (negative.to_lowercase(), positive.to_lowercase());
        if n.starts_with(&p) || p.starts_with(&n) {
            return Err(AnswersError::Overlapping(negative, positive));
        }
        Ok(ExpectedAnswers { negative, positive })
    }

    /// `no` / `yes`.
    pub fn yes_no() -> Self {
        ExpectedAnswers::new("no", "yes").expect("valid pair")
    }

    /// `false` / `true`.
    pub fn false_true() -> Self {
        ExpectedAnswers::new("false", "true").expect("valid pair")
    }

    pub fn negative(&self) -> &str {
        &self.negative
    }

    pub fn positive(&self) -> &str {
        &self.positive
    }

    pub fn phrase(&self, label: Label) -> &str {
        if label.is_positive() {
            &self.positive
        } else {
            &self.negative
        }
    }

    pub fn swapped(&self) -> Self {
        ExpectedAnswers {
            negative: self.positive.clone(),
            positive: self.negative.clone(),
        }
    }

    /// Which phrase (if any) the token could be the start of. Leading
    /// whitespace is stripped first; empty tokens match nothing.
    pub fn token_class(&self, token: &str) -> Option<Label> {
        let t = token.trim_start().to_lowercase();
        if t.is_empty() {
            return None;
        }
        if self.positive.to_lowercase().starts_with(&t) {
            Some(Label::Include)
        } else if self.negative.to_lowercase().starts_with(&t) {
            Some(Label::Exclude)
        } else {
            None
        }
    }
}

/// One entry of a first-position token distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub prob: f64,
}

impl TokenProb {
    pub fn new(token: impl Into<String>, prob: f64) -> Self {
        TokenProb {
            token: token.into(),
            prob,
        }
    }
}

/// Case-insensitive search for the expected phrases. When both appear the
/// earlier occurrence wins.
pub fn parse_word(text: &str, answers: &ExpectedAnswers) -> Prediction {
    let hay = text.to_lowercase();
    let pos = hay.find(&answers.positive.to_lowercase());
    let neg = hay.find(&answers.negative.to_lowercase());
    let label = match (pos, neg) {
        (Some(p), Some(n)) if n < p => PredictedLabel::Negative,
        (Some(_), _) => PredictedLabel::Positive,
        (None, Some(_)) => PredictedLabel::Negative,
        (None, None) => PredictedLabel::Unrecognized,
    };
    Prediction {
        label,
        p_pos: None,
        method: OutputMethod::Word,
        raw_text: text.to_string(),
        fallback: false,
    }
}

/// Looks for `"key": true|false`, tolerating missing braces, optional
/// quoting of key and value, and arbitrary whitespace. First match wins.
pub fn parse_json(text: &str, key: &str) -> Prediction {
    let pattern = format!(r#"(?i)"?{}"?\s*:\s*"?(true|false)\b"#, regex::escape(key));
    let re = Regex::new(&pattern).expect("escaped key yields a valid pattern");
    let label = match re.captures(text) {
        Some(c) if c[1].eq_ignore_ascii_case("true") => PredictedLabel::Positive,
        Some(_) => PredictedLabel::Negative,
        None => PredictedLabel::Unrecognized,
    };
    Prediction {
        label,
        p_pos: None,
        method: OutputMethod::Json,
        raw_text: text.to_string(),
        fallback: false,
    }
}

fn digit_runs() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[0-9]+").expect("static pattern"))
}

/// First integer in 0..=`max` appearing in the text, as a whole digit run.
pub fn first_integer_in_range(text: &str, max: u32) -> Option<u32> {
    digit_runs()
        .find_iter(text)
        .filter_map(|m| m.as_str().parse::<u32>().ok())
        .find(|v| *v <= max)
}

/// First integer 0-5 becomes `p_pos = value / 5`.
pub fn parse_score(text: &str) -> Prediction {
    match first_integer_in_range(text, 5) {
        Some(v) => {
            let p = f64::from(v) / 5.0;
            Prediction {
                label: PredictedLabel::from_probability(p),
                p_pos: Some(p),
                method: OutputMethod::Score,
                raw_text: text.to_string(),
                fallback: false,
            }
        }
        None => Prediction::unrecognized(OutputMethod::Score, text),
    }
}

/// Sums probabilities of tokens that are case-insensitive prefixes of each
/// expected phrase and normalizes the two sums. With no matching token the
/// result falls back to `p_pos = 0.5` (negative under the strict threshold)
/// and is flagged.
pub fn token_probabilities(
    dist: &[TokenProb],
    answers: &ExpectedAnswers,
    method: OutputMethod,
    raw_text: &str,
) -> Prediction {
    let (mut pos, mut neg) = (0.0f64, 0.0f64);
    for tp in dist {
        match answers.token_class(&tp.token) {
            Some(Label::Include) => pos += tp.prob,
            Some(Label::Exclude) => neg += tp.prob,
            None => {}
        }
    }
    let total = pos + neg;
    let (p, fallback) = if total > 0.0 {
        (pos / total, false)
    } else {
        (0.5, true)
    };
    Prediction {
        label: PredictedLabel::from_probability(p),
        p_pos: Some(p),
        method,
        raw_text: raw_text.to_string(),
        fallback,
    }
}

/// Score used for ranking metrics: the probability when there is one,
/// otherwise 0 / 1 / 0.5 for negative / positive / unrecognized.
pub fn to_auprc_score(p: &Prediction) -> f64 {
    match (p.p_pos, p.label) {
        (Some(v), _) => v,
        (None, PredictedLabel::Negative) => 0.0,
        (None, PredictedLabel::Positive) => 1.0,
        (None, PredictedLabel::Unrecognized) => 0.5,
    }
}
