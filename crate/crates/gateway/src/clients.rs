//! Blocking HTTP clients for chat-completions and embedding servers.

use std::time::Duration;

use log::warn;
use memroute_core::backends::{BackendError, ChatBackend, ChatRequest, ChatResponse};
use memroute_core::embed::{EmbedError, Embedder};
use memroute_core::text::estimate_tokens;
use memroute_core::{ModelSpec, TokenLogprob};
use reqwest::blocking::Client;
use serde::Deserialize;
use serde_json::{json, Value};

fn client(timeout: Duration) -> Client {
    Client::builder()
        .timeout(timeout)
        .build()
        .expect("HTTP client builds")
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}

/// Talks to any server exposing `POST {endpoint}/chat/completions`.
pub struct OpenAiCompatBackend {
    http: Client,
    api_key: Option<String>,
}

impl OpenAiCompatBackend {
    pub fn new(timeout: Duration, api_key: Option<String>) -> Self {
        Self {
            http: client(timeout),
            api_key,
        }
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        let text = resp.text().map_err(transport)?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    content: Option<Vec<TokenEntry>>,
}

#[derive(Deserialize)]
struct TokenEntry {
    token: String,
    logprob: f64,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Parses a chat-completions response body.
pub fn parse_completion(body: Value, prompt_estimate: u64) -> Result<ChatResponse, BackendError> {
    let c: Completion = serde_json::from_value(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let choice = c
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Malformed("no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let tokens = choice
        .logprobs
        .and_then(|l| l.content)
        .map(|v| v.into_iter().map(|t| TokenLogprob::new(t.token, t.logprob)).collect::<Vec<_>>());
    let (prompt_tokens, completion_tokens) = match c.usage {
        Some(u) => (u.prompt_tokens, u.completion_tokens),
        None => (
            prompt_estimate,
            tokens
                .as_ref()
                .map(|t| t.len() as u64)
                .unwrap_or_else(|| estimate_tokens(&text) as u64),
        ),
    };
    Ok(ChatResponse {
        text,
        tokens,
        prompt_token_count: prompt_tokens,
        completion_token_count: completion_tokens,
    })
}

impl ChatBackend for OpenAiCompatBackend {
    fn complete(&self, model: &ModelSpec, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut body = json!({
            "model": model.name,
            "messages": req.prompt.messages(),
            "max_tokens": req.max_output_tokens,
            "temperature": 0,
        });
        if req.want_logprobs {
            body["logprobs"] = json!(true);
        }
        let url = join(&model.endpoint, "chat/completions");
        let value = match self.post_once(&url, &body) {
            Err(e) if e.is_transient() || matches!(e, BackendError::Status { status, .. } if status >= 500) => {
                warn!("{} failed, retrying once: {e}", model.name);
                self.post_once(&url, &body)?
            }
            other => other?,
        };
        let prompt_estimate = estimate_tokens(&req.prompt.render()) as u64;
        parse_completion(value, prompt_estimate)
    }
}

/// Client for an OpenAI-style `POST {endpoint}/embeddings` server.
pub struct RemoteEmbedder {
    http: Client,
    endpoint: String,
    model: String,
    dim: usize,
    truncate: bool,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, model: &str, dim: usize, truncate: bool, timeout: Duration) -> Self {
        Self {
            http: client(timeout),
            endpoint: join(endpoint, "embeddings"),
            model: model.to_string(),
            dim,
            truncate,
        }
    }

    fn fetch(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let resp = self
            .http
            .post(&self.endpoint)
            .json(&json!({ "model": self.model, "input": text }))
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Transport(format!("status {status}")));
        }
        let body: Value = resp.json().map_err(|e| EmbedError::Malformed(e.to_string()))?;
        body.pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Malformed("missing data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| EmbedError::Malformed("non-numeric component".into())))
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut v = self.fetch(text)?;
        if v.len() > self.dim && self.truncate {
            v.truncate(self.dim);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        if v.len() != self.dim {
            return Err(EmbedError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(v)
    }
}
