//! Chat-completion and embedding backends.
//!
//! [`complete`] wraps any [`ChatBackend`] and applies the client-side
//! contract uniformly: stop-sequence truncation, first-token distribution
//! checks, and first-token constraints. [`Client`] adds response caching
//! and system-message folding on top.

pub mod cache;
pub mod hashing;
pub mod mock;
#[cfg(feature = "http")]
pub mod openai;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::output::TokenProb;
use crate::prompt::RenderedPrompt;

pub use cache::{CacheKey, EmbeddingCache, ResponseCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_p: Option<f64>,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub capture_first_token_distribution: bool,
    /// Answers the first generated token must be a prefix of.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_first_tokens: Option<Vec<String>>,
    /// Sampling seed; distinct seeds make repeated sampled calls distinct
    /// cache entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.0,
            top_k: None,
            top_p: None,
            min_p: None,
            max_tokens: 256,
            stop_sequences: Vec::new(),
            capture_first_token_distribution: false,
            allowed_first_tokens: None,
            seed: None,
        }
    }
}

impl GenerationParams {
    /// Sampled decoding used by tree-of-thoughts generation.
    pub fn sampled(max_tokens: u32) -> Self {
        GenerationParams {
            temperature: 0.8,
            top_k: Some(40),
            top_p: Some(0.95),
            min_p: Some(0.05),
            max_tokens,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidParams(m.to_string()));
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.top_k == Some(0) {
            return bad("top_k must be positive");
        }
        for (name, v) in [("top_p", self.top_p), ("min_p", self.min_p)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return bad(&format!("{name} must be in [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    StopSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_distribution: Option<Vec<TokenProb>>,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("network error: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("backend refused request (HTTP {status}): {body}")]
    BackendRefusal { status: u16, body: String },
    #[error("backend did not return first-token probabilities")]
    MissingLogprobs,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("empty input")]
    EmptyInput,
    #[error("mock script exhausted after {0} calls")]
    ScriptExhausted(usize),
    #[error(transparent)]
    Cache(#[from] cache::CacheError),
}

impl LlmError {
    /// Transport failures worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Network(_) | LlmError::Timeout => true,
            LlmError::BackendRefusal { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Something that answers chat requests. Implementations send the messages
/// as given; [`complete`] handles the uniform post-processing.
pub trait ChatBackend: Send + Sync {
    fn model_name(&self) -> &str;

    /// Whether a trailing assistant message is continued rather than rejected.
    fn supports_prefill(&self) -> bool {
        true
    }

    fn generate(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ChatResponse, LlmError>;
}

pub trait Embedder: Send + Sync {
    fn model_name(&self) -> &str;

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
}

/// Exponential backoff schedule for transport retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent.
    pub fn run<T, E>(
        &self,
        retryable: impl Fn(&E) -> bool,
        mut op: impl FnMut() -> Result<T, E>,
    ) -> Result<T, E> {
        let mut delay = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if attempt < self.attempts.max(1) && retryable(&e) => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Cuts the text right after the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> Option<String> {
    stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|i| i + s.len()))
        .min()
        .map(|end| text[..end].to_string())
}

/// Restricts a distribution to tokens that prefix one of the allowed
/// answers (case-insensitive, leading whitespace ignored).
pub fn restrict_distribution(dist: &[TokenProb], allowed: &[String]) -> Vec<(TokenProb, usize)> {
    dist.iter()
        .filter_map(|tp| {
            let t = tp.token.trim_start().to_lowercase();
            if t.is_empty() {
                return None;
            }
            allowed
                .iter()
                .position(|a| a.to_lowercase().starts_with(&t))
                .map(|i| (tp.clone(), i))
        })
        .collect()
}

/// Sends a prompt and applies stop sequences and first-token constraints.
///
/// With `allowed_first_tokens` set, a distribution is always requested; the
/// most probable allowed token is taken and the text becomes the full
/// answer that token starts, with other tokens' probabilities zeroed. When
/// no reported token fits, the first allowed answer is used.
pub fn complete(
    prompt: &RenderedPrompt,
    params: &GenerationParams,
    backend: &dyn ChatBackend,
) -> Result<ChatResponse, LlmError> {
    if prompt.messages.is_empty() {
        return Err(LlmError::EmptyInput);
    }
    params.validate()?;
    let mut params = params.clone();
    if params.allowed_first_tokens.is_some() {
        params.capture_first_token_distribution = true;
    }
    let mut resp = backend.generate(prompt, &params)?;
    if params.capture_first_token_distribution {
        match &resp.first_token_distribution {
            Some(d) if !d.is_empty() => {}
            _ => return Err(LlmError::MissingLogprobs),
        }
    }
    if let Some(cut) = truncate_at_stop(&resp.text, &params.stop_sequences) {
        resp.text = cut;
        resp.finish_reason = FinishReason::StopSequence;
    }
    if let Some(allowed) = params
        .allowed_first_tokens
        .as_deref()
        .filter(|a| !a.is_empty())
    {
        let dist = resp.first_token_distribution.take().unwrap_or_default();
        let kept = restrict_distribution(&dist, allowed);
        let choice = kept
            .iter()
            .fold(None::<&(TokenProb, usize)>, |best, cand| match best {
                Some(b) if b.0.prob >= cand.0.prob => Some(b),
                _ => Some(cand),
            })
            .map(|(_, i)| *i)
            .unwrap_or(0);
        resp.text = allowed[choice].clone();
        resp.finish_reason = FinishReason::Stop;
        resp.first_token_distribution = Some(kept.into_iter().map(|(tp, _)| tp).collect());
    }
    Ok(resp)
}

/// Embeds texts and normalizes every vector to unit length.
pub fn embed(texts: &[String], backend: &dyn Embedder) -> Result<Vec<Vec<f64>>, LlmError> {
    if texts.is_empty() {
        return Err(LlmError::EmptyInput);
    }
    let mut vecs = backend.embed_raw(texts)?;
    if vecs.len() != texts.len() {
        return Err(LlmError::MalformedResponse(format!(
            "{} embeddings for {} inputs",
            vecs.len(),
            texts.len()
        )));
    }
    let dim = vecs[0].len();
    for v in &mut vecs {
        if v.len() != dim {
            return Err(LlmError::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        normalize(v);
    }
    Ok(vecs)
}

pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// A backend plus the per-model options the pipeline needs.
#[derive(Clone, Copy)]
pub struct Client<'a> {
    pub backend: &'a dyn ChatBackend,
    pub cache: Option<&'a ResponseCache>,
    /// Models without system messages get it folded into the first user turn.
    pub system_messages: bool,
}

impl<'a> Client<'a> {
    pub fn new(backend: &'a dyn ChatBackend) -> Self {
        Client {
            backend,
            cache: None,
            system_messages: true,
        }
    }

    pub fn with_cache(mut self, cache: &'a ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ChatResponse, LlmError> {
        let folded;
        let prompt = if self.system_messages {
            prompt
        } else {
            folded = prompt.clone().fold_system_into_user();
            &folded
        };
        match self.cache {
            Some(cache) => cache::cached_complete(prompt, params, self.backend, cache),
            None => complete(prompt, params, self.backend),
        }
    }
}
