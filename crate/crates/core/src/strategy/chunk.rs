use crate::llm::{Client, GenerationParams};
use crate::output::{ExpectedAnswers, OutputMethod, PredictedLabel, Prediction};
use crate::prompt::{render, template, RenderInput};

use super::StrategyError;

pub const CHUNK_TEMPLATE: &str = "Chunking";
pub const DEFAULT_MAX_CHARS: usize = 800;

/// Supplies `(text, answer)` example pairs for chunk `index`.
pub type ExampleSource<'a> =
    dyn FnMut(usize, &str) -> Result<Vec<(String, String)>, StrategyError> + 'a;

/// Greedily packs whitespace-separated words into chunks of at most
/// `max_chars` characters, joined by single spaces.
pub fn split_chunks(text: &str, max_chars: usize) -> Result<Vec<String>, StrategyError> {
    let mut chunks = Vec::new();
    let mut cur = String::new();
    let mut cur_len = 0;
    for word in text.split_whitespace() {
        let len = word.chars().count();
        if len > max_chars {
            return Err(StrategyError::WordTooLong {
                word: word.to_string(),
                len,
                max_chars,
            });
        }
        if cur_len == 0 {
            cur.push_str(word);
            cur_len = len;
        } else if cur_len + 1 + len <= max_chars {
            cur.push(' ');
            cur.push_str(word);
            cur_len += 1 + len;
        } else {
            chunks.push(std::mem::take(&mut cur));
            cur.push_str(word);
            cur_len = len;
        }
    }
    if cur_len > 0 {
        chunks.push(cur);
    }
    Ok(chunks)
}

/// Classifies each chunk with its first token constrained to the expected
/// answers and averages the hard outcomes into `p_pos`.
///
/// `examples_for(index, chunk)` supplies the few-shot pairs for a chunk.
pub fn classify_chunked(
    text: &str,
    topic: &str,
    max_chars: usize,
    examples_for: &mut ExampleSource<'_>,
    client: &Client<'_>,
) -> Result<Prediction, StrategyError> {
    let t = template(CHUNK_TEMPLATE)?;
    let answers = t.answers.clone().unwrap_or_else(ExpectedAnswers::yes_no);
    let params = GenerationParams {
        max_tokens: 1,
        allowed_first_tokens: Some(vec![
            answers.negative().to_string(),
            answers.positive().to_string(),
        ]),
        ..Default::default()
    };
    let chunks = split_chunks(text, max_chars)?;
    let mut outcomes = Vec::with_capacity(chunks.len());
    let mut fallback = false;
    for (index, chunk) in chunks.iter().enumerate() {
        let mut run = || -> Result<(String, bool), StrategyError> {
            let examples = examples_for(index, chunk)?;
            let prompt = render(
                &t,
                RenderInput {
                    topic,
                    text: chunk,
                    examples: &examples,
                    last_gen: None,
                },
            )?;
            let resp = client.complete(&prompt, &params)?;
            let unmatched = resp
                .first_token_distribution
                .as_ref()
                .is_none_or(|d| d.is_empty());
            Ok((resp.text, unmatched))
        };
        let (answer, unmatched) = run().map_err(|e| StrategyError::ChunkFailure {
            index,
            source: Box::new(e),
        })?;
        fallback |= unmatched;
        outcomes.push(answer);
    }
    if outcomes.is_empty() {
        return Ok(Prediction::unrecognized(OutputMethod::TokenWord, ""));
    }
    let positives = outcomes
        .iter()
        .filter(|a| a.as_str() == answers.positive())
        .count();
    let p = positives as f64 / outcomes.len() as f64;
    Ok(Prediction {
        label: if p > 0.5 {
            PredictedLabel::Positive
        } else {
            PredictedLabel::Negative
        },
        p_pos: Some(p),
        method: OutputMethod::TokenWord,
        raw_text: outcomes.join(" "),
        fallback,
    })
}
