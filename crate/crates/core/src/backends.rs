//! Chat-completion backends.
//!
//! [`ChatBackend`] is the seam between the router and inference servers. The
//! HTTP client lives in the gateway crate; this module provides the request
//! and response types plus [`MockBackend`], a deterministic scripted backend
//! used by tests and desk-scale evaluation.

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::TokenLogprob;
use crate::router::ModelSpec;

pub const MEMORY_HEADER: &str = "Relevant memories from earlier conversations:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("backend did not return token logprobs")]
    NoLogprobs,
    #[error("invalid backend script: {0}")]
    Script(String),
}

impl BackendError {
    /// Errors that say nothing about the request itself and may be retried.
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::Timeout)
    }
}

/// A prompt kept as distinct segments: instruction preamble, retrieved
/// memories (best first) and the user query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub preamble: String,
    pub memories: Vec<String>,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl Prompt {
    pub fn memory_block(&self) -> Option<String> {
        if self.memories.is_empty() {
            return None;
        }
        let mut block = String::from(MEMORY_HEADER);
        for m in &self.memories {
            block.push('\n');
            block.push_str(m);
        }
        Some(block)
    }

    /// Messages in wire order: system preamble, system memory block (when
    /// there are memories), user query.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut out = vec![ChatMessage {
            role: "system".into(),
            content: self.preamble.clone(),
        }];
        if let Some(block) = self.memory_block() {
            out.push(ChatMessage {
                role: "system".into(),
                content: block,
            });
        }
        out.push(ChatMessage {
            role: "user".into(),
            content: self.query.clone(),
        });
        out
    }

    pub fn segment_count(&self) -> usize {
        self.messages().len()
    }

    /// Flat text of every segment, joined by blank lines.
    pub fn render(&self) -> String {
        self.messages()
            .into_iter()
            .map(|m| m.content)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: Prompt,
    pub want_logprobs: bool,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    /// Present iff logprobs were requested and returned.
    pub tokens: Option<Vec<TokenLogprob>>,
    pub prompt_token_count: u64,
    pub completion_token_count: u64,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, model: &ModelSpec, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

// ---------------------------------------------------------------------------
// Scripted mock

/// Conditions a request must meet for a scripted rule to fire. Unset fields
/// match anything; substring tests are case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchRule {
    pub model: Option<String>,
    pub query_contains: Option<String>,
    /// Regular expression over the user query.
    pub query_pattern: Option<String>,
    /// Substring of the injected memory block.
    pub context_contains: Option<String>,
    pub has_memories: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogprobScript {
    /// Same logprob for every whitespace token of the reply.
    Uniform(f64),
    /// One logprob per whitespace token of the reply.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Transport,
    Timeout,
    Malformed,
    NoLogprobs,
}

/// One scripted rule. `reply` may contain `{query}` and `{segments}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedBehavior {
    #[serde(default)]
    pub when: MatchRule,
    #[serde(default)]
    pub reply: String,
    #[serde(default = "default_logprob")]
    pub logprob: LogprobScript,
    #[serde(default)]
    pub fail: Option<MockFailure>,
}

fn default_logprob() -> LogprobScript {
    LogprobScript::Uniform(-0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockScript {
    pub rules: Vec<ScriptedBehavior>,
    pub fallback_reply: String,
    pub fallback_logprob: f64,
    /// When false every logprob request fails with [`BackendError::NoLogprobs`].
    pub supports_logprobs: bool,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            fallback_reply: "I don't know.".into(),
            fallback_logprob: -2.0,
            supports_logprobs: true,
        }
    }
}

struct CompiledRule {
    behavior: ScriptedBehavior,
    pattern: Option<Regex>,
    query_lc: Option<String>,
    context_lc: Option<String>,
}

/// Deterministic backend driven by a [`MockScript`]; the first matching rule
/// answers. Tokenization is a whitespace split of the reply, one
/// [`TokenLogprob`] per word, and prompt tokens are the whitespace words of all
/// segments.
pub struct MockBackend {
    rules: Vec<CompiledRule>,
    fallback_reply: String,
    fallback_logprob: f64,
    supports_logprobs: bool,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, BackendError> {
        let mut rules = Vec::with_capacity(script.rules.len());
        for (i, b) in script.rules.into_iter().enumerate() {
            let pattern = b
                .when
                .query_pattern
                .as_deref()
                .map(Regex::new)
                .transpose()
                .map_err(|e| BackendError::Script(format!("rules[{i}].when.query_pattern: {e}")))?;
            match &b.logprob {
                LogprobScript::Uniform(l) if *l > 0.0 => {
                    return Err(BackendError::Script(format!("rules[{i}].logprob must be <= 0")))
                }
                LogprobScript::Explicit(v) => {
                    if v.iter().any(|l| *l > 0.0) {
                        return Err(BackendError::Script(format!("rules[{i}].logprob must be <= 0")));
                    }
                    // placeholders make the length unknowable up front
                    let n = b.reply.split_whitespace().count();
                    if !b.reply.contains('{') && v.len() != n {
                        return Err(BackendError::Script(format!(
                            "rules[{i}].logprob has {} values for {n} reply tokens",
                            v.len()
                        )));
                    }
                }
                _ => {}
            }
            rules.push(CompiledRule {
                query_lc: b.when.query_contains.as_ref().map(|s| s.to_lowercase()),
                context_lc: b.when.context_contains.as_ref().map(|s| s.to_lowercase()),
                pattern,
                behavior: b,
            });
        }
        if script.fallback_logprob > 0.0 {
            return Err(BackendError::Script("fallback_logprob must be <= 0".into()));
        }
        Ok(Self {
            rules,
            fallback_reply: script.fallback_reply,
            fallback_logprob: script.fallback_logprob,
            supports_logprobs: script.supports_logprobs,
        })
    }

    pub fn from_rules(rules: Vec<ScriptedBehavior>) -> Result<Self, BackendError> {
        Self::new(MockScript {
            rules,
            ..Default::default()
        })
    }

    fn matches(rule: &CompiledRule, model: &str, req: &ChatRequest) -> bool {
        let w = &rule.behavior.when;
        if w.model.as_deref().is_some_and(|m| m != model) {
            return false;
        }
        if let Some(q) = &rule.query_lc {
            if !req.prompt.query.to_lowercase().contains(q.as_str()) {
                return false;
            }
        }
        if let Some(p) = &rule.pattern {
            if !p.is_match(&req.prompt.query) {
                return false;
            }
        }
        if let Some(flag) = w.has_memories {
            if flag == req.prompt.memories.is_empty() {
                return false;
            }
        }
        if let Some(c) = &rule.context_lc {
            let block = req.prompt.memory_block().unwrap_or_default().to_lowercase();
            if !block.contains(c.as_str()) {
                return false;
            }
        }
        true
    }
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl ChatBackend for MockBackend {
    fn complete(&self, model: &ModelSpec, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let rule = self.rules.iter().find(|r| Self::matches(r, &model.name, req));
        let (template, logprob) = match rule {
            Some(r) => {
                if let Some(f) = r.behavior.fail {
                    return Err(match f {
                        MockFailure::Transport => BackendError::Transport("scripted failure".into()),
                        MockFailure::Timeout => BackendError::Timeout,
                        MockFailure::Malformed => BackendError::Malformed("scripted failure".into()),
                        MockFailure::NoLogprobs => BackendError::NoLogprobs,
                    });
                }
                (r.behavior.reply.as_str(), r.behavior.logprob.clone())
            }
            None => (
                self.fallback_reply.as_str(),
                LogprobScript::Uniform(self.fallback_logprob),
            ),
        };
        if req.want_logprobs && !self.supports_logprobs {
            return Err(BackendError::NoLogprobs);
        }

        let text = template
            .replace("{query}", &req.prompt.query)
            .replace("{segments}", &req.prompt.segment_count().to_string());
        let words: Vec<&str> = text.split_whitespace().collect();
        let tokens = req.want_logprobs.then(|| {
            words
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let lp = match &logprob {
                        LogprobScript::Uniform(l) => *l,
                        LogprobScript::Explicit(v) if v.is_empty() => self.fallback_logprob,
                        LogprobScript::Explicit(v) => v[i.min(v.len() - 1)],
                    };
                    TokenLogprob::new(*w, lp)
                })
                .collect::<Vec<_>>()
        });
        let prompt_tokens = req.prompt.messages().iter().map(|m| word_count(&m.content)).sum();
        Ok(ChatResponse {
            completion_token_count: words.len() as u64,
            text,
            tokens,
            prompt_token_count: prompt_tokens,
        })
    }
}
