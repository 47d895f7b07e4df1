//! In-process backends: scripted chat replies, closure-driven replies,
//! and fixed embeddings. Used by tests, the demo, and dry runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChatBackend, ChatResponse, Embedder, FinishReason, GenerationParams, LlmError};
use crate::output::TokenProb;
use crate::prompt::RenderedPrompt;

/// One scripted generation: output tokens and/or a first-position
/// distribution. When only a distribution is given, the emitted token is
/// the argmax (temperature 0) or a seeded sample from it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScriptedReply {
    pub tokens: Option<Vec<String>>,
    pub distribution: Option<Vec<TokenProb>>,
}

impl ScriptedReply {
    pub fn text(text: &str) -> Self {
        ScriptedReply {
            tokens: Some(vec![text.to_string()]),
            distribution: None,
        }
    }

    pub fn tokens(tokens: &[&str]) -> Self {
        ScriptedReply {
            tokens: Some(tokens.iter().map(|t| t.to_string()).collect()),
            distribution: None,
        }
    }

    pub fn distribution(dist: Vec<TokenProb>) -> Self {
        ScriptedReply {
            tokens: None,
            distribution: Some(dist),
        }
    }

    pub fn with_distribution(mut self, dist: Vec<TokenProb>) -> Self {
        self.distribution = Some(dist);
        self
    }
}

/// Shared mock behavior: token budget, top-N truncation of reported
/// distributions, and sampling.
#[derive(Debug, Clone, Copy)]
struct MockCaps {
    logprobs: bool,
    top_logprobs: usize,
    prefill: bool,
}

impl Default for MockCaps {
    fn default() -> Self {
        MockCaps {
            logprobs: true,
            top_logprobs: 20,
            prefill: true,
        }
    }
}

fn sample_token(dist: &[TokenProb], params: &GenerationParams, call: usize) -> String {
    if dist.is_empty() {
        return String::new();
    }
    if params.temperature == 0.0 {
        let mut best = &dist[0];
        for tp in dist {
            if tp.prob > best.prob {
                best = tp;
            }
        }
        return best.token.clone();
    }
    let seed = params.seed.unwrap_or(0) ^ (call as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = dist.iter().map(|t| t.prob).sum();
    let mut x = rng.random::<f64>() * total;
    for tp in dist {
        x -= tp.prob;
        if x <= 0.0 {
            return tp.token.clone();
        }
    }
    dist[dist.len() - 1].token.clone()
}

fn realize(
    reply: ScriptedReply,
    params: &GenerationParams,
    caps: MockCaps,
    call: usize,
) -> ChatResponse {
    let tokens = match reply.tokens {
        Some(t) => t,
        None => vec![sample_token(
            reply.distribution.as_deref().unwrap_or(&[]),
            params,
            call,
        )],
    };
    let budget = params.max_tokens as usize;
    let finish_reason = if tokens.len() > budget {
        FinishReason::Length
    } else {
        FinishReason::Stop
    };
    let text: String = tokens.into_iter().take(budget).collect();
    let first_token_distribution = if params.capture_first_token_distribution && caps.logprobs {
        reply.distribution.map(|mut d| {
            d.sort_by(|a, b| {
                b.prob
                    .partial_cmp(&a.prob)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            d.truncate(caps.top_logprobs);
            d
        })
    } else {
        None
    };
    ChatResponse {
        text,
        first_token_distribution,
        finish_reason,
    }
}

/// Replays a fixed queue of replies and records every prompt it receives.
pub struct ScriptedBackend {
    name: String,
    script: Mutex<VecDeque<ScriptedReply>>,
    calls: AtomicUsize,
    log: Mutex<Vec<RenderedPrompt>>,
    caps: MockCaps,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<ScriptedReply>) -> Self {
        ScriptedBackend {
            name: "scripted".into(),
            script: Mutex::new(replies.into()),
            calls: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
            caps: MockCaps::default(),
        }
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_top_logprobs(mut self, n: usize) -> Self {
        self.caps.top_logprobs = n;
        self
    }

    pub fn without_logprobs(mut self) -> Self {
        self.caps.logprobs = false;
        self
    }

    pub fn without_prefill(mut self) -> Self {
        self.caps.prefill = false;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<RenderedPrompt> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script lock").len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn supports_prefill(&self) -> bool {
        self.caps.prefill
    }

    fn generate(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ChatResponse, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("log lock").push(prompt.clone());
        let reply = self
            .script
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(LlmError::ScriptExhausted(call))?;
        Ok(realize(reply, params, self.caps, call))
    }
}

type ReplyFn = dyn Fn(&RenderedPrompt, &GenerationParams) -> ScriptedReply + Send + Sync;

/// Computes each reply from the prompt, e.g. an oracle that answers from
/// markers embedded in the sample text.
pub struct FnBackend {
    name: String,
    reply: Box<ReplyFn>,
    calls: AtomicUsize,
    caps: MockCaps,
}

impl FnBackend {
    pub fn new(
        name: &str,
        reply: impl Fn(&RenderedPrompt, &GenerationParams) -> ScriptedReply + Send + Sync + 'static,
    ) -> Self {
        FnBackend {
            name: name.into(),
            reply: Box::new(reply),
            calls: AtomicUsize::new(0),
            caps: MockCaps::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for FnBackend {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn generate(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ChatResponse, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(realize(
            (self.reply)(prompt, params),
            params,
            self.caps,
            call,
        ))
    }
}

/// Records prompts and answers with an empty generation whose first-token
/// distribution matches nothing. Backs `--dry-run`.
#[derive(Default)]
pub struct RecordingBackend {
    log: Mutex<Vec<RenderedPrompt>>,
}

impl RecordingBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&self) -> Vec<RenderedPrompt> {
        std::mem::take(&mut *self.log.lock().expect("log lock"))
    }
}

impl ChatBackend for RecordingBackend {
    fn model_name(&self) -> &str {
        "dry-run"
    }

    fn generate(
        &self,
        prompt: &RenderedPrompt,
        _params: &GenerationParams,
    ) -> Result<ChatResponse, LlmError> {
        self.log.lock().expect("log lock").push(prompt.clone());
        Ok(ChatResponse {
            text: String::new(),
            first_token_distribution: Some(vec![TokenProb::new("", 1.0)]),
            finish_reason: FinishReason::Stop,
        })
    }
}

/// Returns preconfigured vectors in order, cycling when exhausted.
pub struct StaticEmbedder {
    vectors: Vec<Vec<f64>>,
}

impl StaticEmbedder {
    pub fn new(vectors: Vec<Vec<f64>>) -> Self {
        StaticEmbedder { vectors }
    }
}

impl Embedder for StaticEmbedder {
    fn model_name(&self) -> &str {
        "static"
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if self.vectors.is_empty() {
            return Err(LlmError::EmptyInput);
        }
        Ok((0..texts.len())
            .map(|i| self.vectors[i % self.vectors.len()].clone())
            .collect())
    }
}

/// Embeds by looking texts up in a table; unknown texts are an error.
pub struct TableEmbedder {
    table: Vec<(String, Vec<f64>)>,
}

impl TableEmbedder {
    pub fn new(table: Vec<(String, Vec<f64>)>) -> Self {
        TableEmbedder { table }
    }
}

impl Embedder for TableEmbedder {
    fn model_name(&self) -> &str {
        "table"
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .iter()
                    .find(|(k, _)| k == t)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| LlmError::MalformedResponse(format!("no vector for `{t}`")))
            })
            .collect()
    }
}
