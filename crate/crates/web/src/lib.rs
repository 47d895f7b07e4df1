//! Browser demo bindings. Each export takes and returns JSON text so the
//! page needs no generated type glue beyond strings.

use llmclf::corpus::Label;
use llmclf::eval::{confusion, pr_curve};
use llmclf::output::{
    token_probabilities, ExpectedAnswers, OutputMethod, PredictedLabel, TokenProb,
};
use llmclf::prompt::{registry, render, RenderInput};
use llmclf::strategy::split_chunks;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn parse<'a, T: Deserialize<'a>>(input: &'a str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("bad request: {e}"))
}

#[derive(Deserialize)]
struct CurveRequest {
    labels: Vec<u8>,
    scores: Vec<f64>,
    #[serde(default = "half")]
    threshold: f64,
}

fn half() -> f64 {
    0.5
}

/// PR curve plus hard-label metrics at `threshold` (positive when the
/// score is strictly above it).
pub fn curve(input: &str) -> Result<String, String> {
    let req: CurveRequest = parse(input)?;
    let truth: Vec<Label> = req
        .labels
        .iter()
        .map(|l| Label::from_bool(*l != 0))
        .collect();
    let c = pr_curve(&truth, &req.scores).map_err(|e| e.to_string())?;
    let pred: Vec<Label> = req
        .scores
        .iter()
        .map(|s| Label::from_bool(*s > req.threshold))
        .collect();
    let m = confusion(&truth, &pred).map_err(|e| e.to_string())?;
    Ok(json!({
        "points": c.points,
        "auprc": c.auprc,
        "confusion": m,
        "accuracy": m.accuracy(),
        "precision": m.precision(),
        "recall": m.recall(),
        "f1": m.f1(),
        "mcc": m.mcc(),
    })
    .to_string())
}

#[derive(Deserialize)]
struct TokenRequest {
    distribution: Vec<(String, f64)>,
    negative: String,
    positive: String,
}

#[derive(Serialize)]
struct TokenRow {
    token: String,
    prob: f64,
    class: Option<&'static str>,
}

/// Class probability from a first-token distribution, with each token's
/// matched class.
pub fn tokens(input: &str) -> Result<String, String> {
    let req: TokenRequest = parse(input)?;
    let answers = ExpectedAnswers::new(req.negative, req.positive).map_err(|e| e.to_string())?;
    if let Some((t, p)) = req
        .distribution
        .iter()
        .find(|(_, p)| !p.is_finite() || *p < 0.0)
    {
        return Err(format!(
            "probability of `{t}` must be non-negative, got {p}"
        ));
    }
    let dist: Vec<TokenProb> = req
        .distribution
        .iter()
        .map(|(t, p)| TokenProb::new(t.as_str(), *p))
        .collect();
    let pred = token_probabilities(&dist, &answers, OutputMethod::TokenWord, "");
    let rows: Vec<TokenRow> = dist
        .iter()
        .map(|t| TokenRow {
            token: t.token.clone(),
            prob: t.prob,
            class: answers.token_class(&t.token).map(|l| {
                if l.is_positive() {
                    "positive"
                } else {
                    "negative"
                }
            }),
        })
        .collect();
    Ok(json!({
        "p_pos": pred.p_pos,
        "label": match pred.label {
            PredictedLabel::Positive => "positive",
            PredictedLabel::Negative => "negative",
            PredictedLabel::Unrecognized => "unrecognized",
        },
        "fallback": pred.fallback,
        "tokens": rows,
    })
    .to_string())
}

#[derive(Deserialize)]
struct PromptRequest {
    template: String,
    topic: String,
    text: String,
    #[serde(default)]
    examples: Vec<(String, String)>,
    #[serde(default)]
    last_gen: Option<String>,
    #[serde(default = "max_chars")]
    max_chars: usize,
}

fn max_chars() -> usize {
    llmclf::strategy::DEFAULT_MAX_CHARS
}

/// Rendered messages for a template, plus the chunk split of the text.
pub fn prompt(input: &str) -> Result<String, String> {
    let req: PromptRequest = parse(input)?;
    let reg = registry();
    let t = reg
        .get(&req.template)
        .ok_or_else(|| format!("unknown template `{}`", req.template))?;
    let p = render(
        t,
        RenderInput {
            topic: &req.topic,
            text: &req.text,
            examples: &req.examples,
            last_gen: req.last_gen.as_deref(),
        },
    )
    .map_err(|e| e.to_string())?;
    let chunks = split_chunks(&req.text, req.max_chars).map_err(|e| e.to_string())?;
    Ok(json!({
        "messages": p.messages,
        "prefill": p.prefill,
        "supports_examples": t.supports_examples(),
        "chunks": chunks,
    })
    .to_string())
}

/// Template names with whether each takes examples or a previous generation.
pub fn template_list() -> String {
    let rows: Vec<_> = registry()
        .values()
        .map(|t| {
            json!({
                "name": t.name,
                "supports_examples": t.supports_examples(),
                "uses_last_gen": t.uses_tag(llmclf::prompt::Tag::LastGen),
            })
        })
        .collect();
    serde_json::Value::from(rows).to_string()
}

#[wasm_bindgen(js_name = prCurve)]
pub fn pr_curve_js(input: &str) -> Result<String, JsError> {
    curve(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = tokenProbabilities)]
pub fn token_probabilities_js(input: &str) -> Result<String, JsError> {
    tokens(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = renderPrompt)]
pub fn render_prompt_js(input: &str) -> Result<String, JsError> {
    prompt(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = templates)]
pub fn templates_js() -> String {
    template_list()
}
