//! OpenAI-compatible HTTP client (`/v1/chat/completions`, `/v1/embeddings`).
//!
//! Works against hosted APIs and local llama.cpp-style servers. First-token
//! distributions come from `logprobs` + `top_logprobs`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ChatBackend, ChatResponse, Embedder, FinishReason, GenerationParams, LlmError, RetryPolicy,
};
use crate::output::TokenProb;
use crate::prompt::{Message, RenderedPrompt};

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub concurrency: usize,
    pub top_logprobs: u32,
    /// Send a trailing assistant message for prefill.
    pub prefill: bool,
    /// Forward stop sequences to the server. Off by default because servers
    /// drop the matched sequence from the returned text.
    pub send_stop: bool,
    pub retry: RetryPolicy,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        OpenAiConfig {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(120),
            concurrency: 4,
            top_logprobs: 20,
            prefill: true,
            send_stop: false,
            retry: RetryPolicy::default(),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub(crate) fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().expect("semaphore lock");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore lock");
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn transport_error(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout,
        other => LlmError::Network(other.to_string()),
    }
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    agent: ureq::Agent,
    limit: Semaphore,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: String,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct TopLogprob {
    token: String,
    logprob: f64,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Self {
        OpenAiBackend {
            agent: agent(config.timeout),
            limit: Semaphore::new(config.concurrency),
            config,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// Request body for a prompt; exposed for wire-format tests.
    pub fn request_body(&self, prompt: &RenderedPrompt, params: &GenerationParams) -> Value {
        let msgs: Vec<Message> = if self.config.prefill {
            prompt.messages.clone()
        } else {
            prompt.without_prefill()
        };
        let wire: Vec<WireMessage> = msgs
            .iter()
            .map(|m| WireMessage {
                role: m.role.to_string(),
                content: &m.content,
            })
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": wire,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        let obj = body.as_object_mut().expect("object literal");
        if let Some(v) = params.top_p {
            obj.insert("top_p".into(), json!(v));
        }
        if let Some(v) = params.top_k {
            obj.insert("top_k".into(), json!(v));
        }
        if let Some(v) = params.min_p {
            obj.insert("min_p".into(), json!(v));
        }
        if let Some(v) = params.seed {
            obj.insert("seed".into(), json!(v));
        }
        if self.config.send_stop && !params.stop_sequences.is_empty() {
            obj.insert("stop".into(), json!(params.stop_sequences));
        }
        if params.capture_first_token_distribution || params.allowed_first_tokens.is_some() {
            obj.insert("logprobs".into(), json!(true));
            obj.insert("top_logprobs".into(), json!(self.config.top_logprobs));
        }
        body
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let _permit = self.limit.acquire();
        self.config.retry.run(LlmError::is_retryable, || {
            let mut req = self.agent.post(&self.url(path));
            if let Some(key) = &self.config.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req.send_json(body).map_err(transport_error)?;
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().map_err(transport_error)?;
            if !(200..300).contains(&status) {
                return Err(LlmError::BackendRefusal { status, body: text });
            }
            serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse(e.to_string()))
        })
    }
}

fn parse_completion(v: Value) -> Result<ChatResponse, LlmError> {
    let c: ChatCompletion =
        serde_json::from_value(v).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let choice = c
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    let first_token_distribution = choice
        .logprobs
        .and_then(|l| l.content)
        .and_then(|c| c.into_iter().next())
        .map(|first| {
            if first.top_logprobs.is_empty() {
                vec![TokenProb::new(first.token, first.logprob.exp())]
            } else {
                first
                    .top_logprobs
                    .into_iter()
                    .map(|t| TokenProb::new(t.token, t.logprob.exp()))
                    .collect()
            }
        });
    Ok(ChatResponse {
        text: choice.message.content.unwrap_or_default(),
        first_token_distribution,
        finish_reason,
    })
}

impl ChatBackend for OpenAiBackend {
    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn supports_prefill(&self) -> bool {
        self.config.prefill
    }

    fn generate(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<ChatResponse, LlmError> {
        let body = self.request_body(prompt, params);
        parse_completion(self.post("/v1/chat/completions", &body)?)
    }
}

pub struct OpenAiEmbedder {
    backend: OpenAiBackend,
}

impl OpenAiEmbedder {
    pub fn new(config: OpenAiConfig) -> Self {
        OpenAiEmbedder {
            backend: OpenAiBackend::new(config),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f64>,
}

impl Embedder for OpenAiEmbedder {
    fn model_name(&self) -> &str {
        &self.backend.config.model
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let body = json!({ "model": self.backend.config.model, "input": texts });
        let v = self.backend.post("/v1/embeddings", &body)?;
        let mut list: EmbeddingList =
            serde_json::from_value(v).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        list.data.sort_by_key(|d| d.index);
        Ok(list.data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{render, template, RenderInput};

    #[test]
    fn request_body_shape() {
        let mut cfg = OpenAiConfig::new("http://localhost:1", "m");
        let p = render(
            &template("B-Token-JSON").unwrap(),
            RenderInput {
                topic: "X",
                text: "T",
                examples: &[],
                last_gen: None,
            },
        )
        .unwrap();
        let params = GenerationParams {
            capture_first_token_distribution: true,
            max_tokens: 1,
            stop_sequences: vec!["no".into()],
            ..Default::default()
        };
        let b = OpenAiBackend::new(cfg.clone());
        let body = b.request_body(&p, &params);
        assert_eq!(body["messages"].as_array().unwrap().len(), 3);
        assert_eq!(body["messages"][2]["role"], "assistant");
        assert_eq!(body["logprobs"], true);
        assert_eq!(body["top_logprobs"], 20);
        assert!(body.get("stop").is_none());

        cfg.prefill = false;
        cfg.send_stop = true;
        let body = OpenAiBackend::new(cfg).request_body(&p, &params);
        assert_eq!(body["messages"].as_array().unwrap().len(), 2);
        assert_eq!(body["stop"][0], "no");
    }

    #[test]
    fn parses_logprobs() {
        let v = json!({
            "choices": [{
                "message": {"role": "assistant", "content": "Yes"},
                "finish_reason": "length",
                "logprobs": {"content": [{
                    "token": "Yes", "logprob": -0.1,
                    "top_logprobs": [
                        {"token": "Yes", "logprob": (0.75f64).ln()},
                        {"token": "No", "logprob": (0.25f64).ln()}
                    ]
                }]}
            }]
        });
        let r = parse_completion(v).unwrap();
        assert_eq!(r.finish_reason, FinishReason::Length);
        let d = r.first_token_distribution.unwrap();
        assert!((d[0].prob - 0.75).abs() < 1e-12);
    }
}
