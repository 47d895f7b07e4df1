use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::llm::{Client, GenerationParams};
use crate::output::{parse_json, OutputMethod, Prediction};
use crate::prompt::{render, template, AnswerFormat, RenderInput};

use super::StrategyError;

const COT_MAX_TOKENS: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no JSON list of strings found")]
pub struct NoListFound;

fn list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let item = r#""(?:[^"\\]|\\.)*""#;
        Regex::new(&format!(r"\[\s*(?:{item}\s*(?:,\s*{item}\s*)*)?\]")).expect("static pattern")
    })
}

/// First bracketed list of double-quoted strings in `text`. Callers pass
/// the prefill (`["`) together with the generated continuation.
pub fn extract_json_list(text: &str) -> Result<Vec<String>, NoListFound> {
    let m = list_re().find(text).ok_or(NoListFound)?;
    serde_json::from_str(m.as_str()).map_err(|_| NoListFound)
}

/// Renders a phrase list as `["a", "b"]`.
pub fn format_list(items: &[String]) -> String {
    let quoted: Vec<String> = items
        .iter()
        .map(|s| serde_json::to_string(s).expect("strings serialize"))
        .collect();
    format!("[{}]", quoted.join(", "))
}

/// The list as a continuation of a prompt that already opened it with `["`.
pub(crate) fn list_continuation(items: &[String]) -> String {
    if items.is_empty() {
        "\"]".to_string()
    } else {
        format_list(items)[2..].to_string()
    }
}

fn params() -> GenerationParams {
    GenerationParams {
        max_tokens: COT_MAX_TOKENS,
        ..Default::default()
    }
}

fn json_key(format: &AnswerFormat) -> &str {
    match format {
        AnswerFormat::Json { key } => key,
        _ => "included",
    }
}

/// Reasoning then a JSON answer in one request.
pub fn classify_cot1(
    text: &str,
    topic: &str,
    client: &Client<'_>,
) -> Result<Prediction, StrategyError> {
    let t = template("CoT1")?;
    let prompt = render(
        &t,
        RenderInput {
            topic,
            text,
            examples: &[],
            last_gen: None,
        },
    )?;
    let resp = client.complete(&prompt, &params())?;
    let full = format!("{}{}", prompt.prefill.as_deref().unwrap_or(""), resp.text);
    Ok(parse_json(&full, json_key(&t.format)))
}

/// Phrase extraction, then classification conditioned on the phrases.
pub fn classify_cot2(
    text: &str,
    topic: &str,
    client: &Client<'_>,
) -> Result<Prediction, StrategyError> {
    let extract = template("CoT2-Extract")?;
    let prompt = render(
        &extract,
        RenderInput {
            topic,
            text,
            examples: &[],
            last_gen: None,
        },
    )?;
    let resp = client.complete(&prompt, &params())?;
    let full = format!("{}{}", prompt.prefill.as_deref().unwrap_or(""), resp.text);
    let Ok(phrases) = extract_json_list(&full) else {
        return Ok(Prediction::unrecognized(OutputMethod::Json, full));
    };
    let classify = template("CoT2-Classify")?;
    let last_gen = list_continuation(&phrases);
    let prompt = render(
        &classify,
        RenderInput {
            topic,
            text,
            examples: &[],
            last_gen: Some(&last_gen),
        },
    )?;
    let resp = client.complete(&prompt, &params())?;
    let full = format!("{}{}", prompt.prefill.as_deref().unwrap_or(""), resp.text);
    Ok(parse_json(&full, json_key(&classify.format)))
}
