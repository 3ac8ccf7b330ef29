//! Probe-then-escalate routing over a memory-augmented prompt.
//!
//! One request runs: retrieve memories, build the probe prompt, ask the
//! cheapest model with logprobs, accept it when its confidence reaches `tau`,
//! otherwise walk up the cascade. The accepted turn-pair is then written back
//! to the user's memory partition, whichever model produced it.

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatRequest, ChatResponse, Prompt};
use crate::confidence::{ConfidenceScore, DEFAULT_FLOOR, DEFAULT_TAU};
use crate::cost::{eff_cost, LedgerEntry};
use crate::embed::Embedder;
use crate::memory_store::{MemoryRecord, MemoryStore, NewMemory, RecordId};
use crate::retrieval::{self, RetrievalConfig, RetrievalMode, ScoredHit};
use crate::text::{estimate_tokens, today};

pub const DEFAULT_PREAMBLE: &str = "You are a helpful assistant. Memories of earlier conversations with this user may follow; use them when they are relevant and answer concisely.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Parameter count in billions, the `P` of the cost formula.
    pub params_billion: f64,
    /// Base URL of a chat-completions server; unused by the mock backend.
    #[serde(default)]
    pub endpoint: String,
    /// Largest prompt the model accepts, in tokens.
    #[serde(default = "default_context_budget")]
    pub context_budget: usize,
}

fn default_context_budget() -> usize {
    32_768
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, params_billion: f64) -> Self {
        Self {
            name: name.into(),
            params_billion,
            endpoint: String::new(),
            context_budget: default_context_budget(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Cascade members, cheapest first.
    pub models: Vec<ModelSpec>,
    pub tau: f64,
    pub floor: f64,
    pub memory_enabled: bool,
    /// When false the first model is called directly, without a probe.
    pub routing_enabled: bool,
    pub top_k: usize,
    pub probe_memory_token_budget: usize,
    pub full_memory_token_budget: usize,
    pub max_output_tokens: u32,
}

impl CascadeConfig {
    pub fn new(models: Vec<ModelSpec>) -> Self {
        Self {
            models,
            tau: DEFAULT_TAU,
            floor: DEFAULT_FLOOR,
            memory_enabled: true,
            routing_enabled: true,
            top_k: 5,
            probe_memory_token_budget: 512,
            full_memory_token_budget: 8192,
            max_output_tokens: 256,
        }
    }

    /// `tau` is not capped at 1 so a request can force escalation.
    pub fn validate(&self) -> Result<(), RouteError> {
        let bad = |m: String| Err(RouteError::Config(m));
        if self.models.is_empty() {
            return bad("models: cascade needs at least one model".into());
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.name.is_empty() {
                return bad(format!("models[{i}].name must not be empty"));
            }
            if !(m.params_billion > 0.0 && m.params_billion.is_finite()) {
                return bad(format!("models[{i}].params_billion must be positive, got {}", m.params_billion));
            }
            if i > 0 && m.params_billion <= self.models[i - 1].params_billion {
                return bad(format!(
                    "models[{i}]: cascade must be sorted by strictly increasing params_billion"
                ));
            }
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return bad(format!("models[{i}].name {:?} is duplicated", m.name));
            }
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be a finite nonnegative number, got {}", self.tau));
        }
        if !(self.floor < 0.0 && self.floor.is_finite()) {
            return bad(format!("ell_min must be negative, got {}", self.floor));
        }
        if self.probe_memory_token_budget > self.full_memory_token_budget {
            return bad("probe_memory_token_budget must not exceed full_memory_token_budget".into());
        }
        Ok(())
    }
}

/// One backend call made while serving a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub model: String,
    pub params_billion: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub eff_cost: f64,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl Invocation {
    pub fn ledger_entry(&self, request_id: &str) -> LedgerEntry {
        LedgerEntry {
            request_id: request_id.to_string(),
            model: self.model.clone(),
            params_billion: self.params_billion,
            input_tokens: self.prompt_tokens,
            output_tokens: self.completion_tokens,
            eff_cost: self.eff_cost,
            accepted: self.accepted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub chosen_model: String,
    /// Confidence of the probe on the cheapest model; `None` when routing is
    /// disabled.
    pub confidence: Option<ConfidenceScore>,
    pub tau: f64,
    pub floor: f64,
    pub escalated: bool,
    /// The last cascade member was accepted after a below-threshold probe.
    pub forced_accept: bool,
    /// Why the probe produced no usable confidence, when it did not.
    pub probe_error: Option<String>,
    pub retrieval_error: Option<String>,
    /// Top-k retrieval result, best first.
    pub retrieved_ids: Vec<RecordId>,
    /// Memories that fit into the probe prompt (or the direct prompt when
    /// routing is disabled).
    pub injected_memory_ids: Vec<RecordId>,
    pub invocations: Vec<Invocation>,
    pub eff_cost: f64,
    pub stored_memory_id: Option<RecordId>,
    pub memory_write_failed: bool,
}

#[derive(Debug, Clone)]
pub struct RouteRequest {
    pub user_id: String,
    pub query: String,
    /// Defaults to today's date.
    pub session_timestamp: Option<String>,
    /// Write the accepted turn-pair back to memory.
    pub store_turn_pair: bool,
    /// Replaces retrieval with a fixed context (all lines, no budget).
    pub inline_context: Option<Vec<String>>,
}

impl RouteRequest {
    pub fn new(user_id: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            query: query.into(),
            session_timestamp: None,
            store_turn_pair: true,
            inline_context: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RouteOutcome {
    pub response: String,
    pub decision: RouteDecision,
    /// The probe prompt (or direct prompt) as sent.
    pub prompt: Prompt,
}

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("invalid cascade config: {0}")]
    Config(String),
    #[error("model {model} unavailable: {source}")]
    Backend {
        model: String,
        #[source]
        source: BackendError,
        /// Calls made before the failure, for cost accounting.
        invocations: Vec<Invocation>,
    },
}

/// Builds a prompt from ranked memories, taking whole memories greedily
/// until the next one would exceed `token_budget`.
pub fn build_augmented_prompt(
    preamble: &str,
    query: &str,
    memories: &[Arc<MemoryRecord>],
    token_budget: usize,
) -> (Prompt, Vec<RecordId>) {
    let mut used = 0usize;
    let mut lines = Vec::new();
    let mut ids = Vec::new();
    for m in memories {
        let cost = estimate_tokens(&m.rendered_text);
        if used + cost > token_budget {
            break;
        }
        used += cost;
        lines.push(m.rendered_text.clone());
        ids.push(m.id);
    }
    let prompt = Prompt {
        preamble: preamble.to_string(),
        memories: lines,
        query: query.to_string(),
    };
    (prompt, ids)
}

pub struct Router {
    store: Arc<MemoryStore>,
    embedder: Arc<dyn Embedder>,
    backend: Arc<dyn ChatBackend>,
    retrieval: RetrievalConfig,
    preamble: String,
}

impl Router {
    pub fn new(
        store: Arc<MemoryStore>,
        embedder: Arc<dyn Embedder>,
        backend: Arc<dyn ChatBackend>,
        retrieval: RetrievalConfig,
    ) -> Self {
        Self {
            store,
            embedder,
            backend,
            retrieval,
            preamble: DEFAULT_PREAMBLE.to_string(),
        }
    }

    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.preamble = preamble.into();
        self
    }

    pub fn store(&self) -> &Arc<MemoryStore> {
        &self.store
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn retrieval_config(&self) -> &RetrievalConfig {
        &self.retrieval
    }

    /// Retrieval as the router performs it. If the query cannot be embedded,
    /// dense-dependent modes fall back to BM25 and the error is returned
    /// alongside the hits.
    pub fn retrieve(
        &self,
        user_id: &str,
        query: &str,
        k: usize,
        cfg: &RetrievalConfig,
    ) -> (Vec<(ScoredHit, Arc<MemoryRecord>)>, Option<String>) {
        let records = self.store.scan(user_id);
        if records.is_empty() || k == 0 {
            return (Vec::new(), None);
        }
        let mut cfg = *cfg;
        let mut note = None;
        let embedding = if cfg.mode == RetrievalMode::Sparse {
            None
        } else {
            match self.embedder.embed(query) {
                Ok(e) => Some(e),
                Err(e) => {
                    note = Some(format!("query embedding failed, using sparse retrieval: {e}"));
                    cfg.mode = RetrievalMode::Sparse;
                    None
                }
            }
        };
        let hits = match retrieval::search_records(&records, query, embedding.as_deref(), k, &cfg) {
            Ok(h) => h,
            Err(e) => {
                note = Some(format!("retrieval failed: {e}"));
                Vec::new()
            }
        };
        let resolved = hits
            .into_iter()
            .filter_map(|h| {
                let rec = records
                    .binary_search_by_key(&h.record_id, |r| r.id)
                    .ok()
                    .map(|i| Arc::clone(&records[i]))?;
                Some((h, rec))
            })
            .collect();
        (resolved, note)
    }

    fn prompt_for(
        &self,
        model: &ModelSpec,
        query: &str,
        memories: &[Arc<MemoryRecord>],
        budget: usize,
        cfg: &CascadeConfig,
    ) -> (Prompt, Vec<RecordId>) {
        let base = estimate_tokens(&self.preamble) + estimate_tokens(query) + cfg.max_output_tokens as usize;
        let budget = budget.min(model.context_budget.saturating_sub(base));
        build_augmented_prompt(&self.preamble, query, memories, budget)
    }

    fn call(
        &self,
        model: &ModelSpec,
        prompt: &Prompt,
        want_logprobs: bool,
        cfg: &CascadeConfig,
        invocations: &mut Vec<Invocation>,
    ) -> Result<ChatResponse, BackendError> {
        let req = ChatRequest {
            model: model.name.clone(),
            prompt: prompt.clone(),
            want_logprobs,
            max_output_tokens: cfg.max_output_tokens,
        };
        match self.backend.complete(model, &req) {
            Ok(resp) => {
                invocations.push(Invocation {
                    model: model.name.clone(),
                    params_billion: model.params_billion,
                    prompt_tokens: resp.prompt_token_count,
                    completion_tokens: resp.completion_token_count,
                    eff_cost: eff_cost(resp.prompt_token_count, resp.completion_token_count, model.params_billion)
                        .unwrap_or(0.0),
                    accepted: false,
                    error: None,
                });
                Ok(resp)
            }
            Err(e) => {
                invocations.push(Invocation {
                    model: model.name.clone(),
                    params_billion: model.params_billion,
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    eff_cost: 0.0,
                    accepted: false,
                    error: Some(e.to_string()),
                });
                Err(e)
            }
        }
    }

    pub fn route(&self, req: &RouteRequest, cfg: &CascadeConfig) -> Result<RouteOutcome, RouteError> {
        cfg.validate()?;

        let (memories, retrieved_ids, retrieval_error) = match &req.inline_context {
            Some(_) => (Vec::new(), Vec::new(), None),
            None if cfg.memory_enabled => {
                let (hits, note) = self.retrieve(&req.user_id, &req.query, cfg.top_k, &self.retrieval);
                let ids = hits.iter().map(|(h, _)| h.record_id).collect();
                (hits.into_iter().map(|(_, r)| r).collect::<Vec<_>>(), ids, note)
            }
            None => (Vec::new(), Vec::new(), None),
        };
        let build = |model: &ModelSpec, budget: usize| match &req.inline_context {
            Some(lines) => (
                Prompt {
                    preamble: self.preamble.clone(),
                    memories: lines.clone(),
                    query: req.query.clone(),
                },
                Vec::new(),
            ),
            None => self.prompt_for(model, &req.query, &memories, budget, cfg),
        };

        let mut invocations = Vec::new();
        let first = &cfg.models[0];
        let last_index = cfg.models.len() - 1;

        let mut decision = RouteDecision {
            chosen_model: String::new(),
            confidence: None,
            tau: cfg.tau,
            floor: cfg.floor,
            escalated: false,
            forced_accept: false,
            probe_error: None,
            retrieval_error,
            retrieved_ids,
            injected_memory_ids: Vec::new(),
            invocations: Vec::new(),
            eff_cost: 0.0,
            stored_memory_id: None,
            memory_write_failed: false,
        };

        let (response, accepted_index, probe_prompt) = if !cfg.routing_enabled {
            let (prompt, ids) = build(first, cfg.full_memory_token_budget);
            decision.injected_memory_ids = ids;
            let resp = self
                .call(first, &prompt, false, cfg, &mut invocations)
                .map_err(|source| RouteError::Backend {
                    model: first.name.clone(),
                    source,
                    invocations: invocations.clone(),
                })?;
            (resp.text, 0, prompt)
        } else {
            let (probe_prompt, ids) = build(first, cfg.probe_memory_token_budget);
            decision.injected_memory_ids = ids;
            let probe = self.call(first, &probe_prompt, true, cfg, &mut invocations);
            let (confidence, probe_text) = match &probe {
                Ok(resp) => match resp.tokens.as_deref() {
                    Some(tokens) if !tokens.is_empty() => (
                        ConfidenceScore::from_tokens(tokens, cfg.floor)
                            .map_err(|e| RouteError::Config(e.to_string()))?,
                        Some(resp.text.clone()),
                    ),
                    Some(_) => {
                        decision.probe_error = Some("probe returned no tokens".into());
                        (ConfidenceScore::zero(cfg.floor), Some(resp.text.clone()))
                    }
                    None => {
                        decision.probe_error = Some(BackendError::NoLogprobs.to_string());
                        (ConfidenceScore::zero(cfg.floor), Some(resp.text.clone()))
                    }
                },
                Err(e) => {
                    decision.probe_error = Some(e.to_string());
                    (ConfidenceScore::zero(cfg.floor), None)
                }
            };
            decision.confidence = Some(confidence);
            let confident = confidence.value >= cfg.tau;

            match probe_text {
                Some(text) if confident || last_index == 0 => {
                    decision.forced_accept = !confident;
                    (text, 0, probe_prompt)
                }
                None if last_index == 0 => {
                    return Err(RouteError::Backend {
                        model: first.name.clone(),
                        source: probe.err().expect("probe failed"),
                        invocations,
                    });
                }
                _ => {
                    decision.escalated = true;
                    let mut served = None;
                    for (i, model) in cfg.models.iter().enumerate().skip(1) {
                        let (prompt, _) = build(model, cfg.full_memory_token_budget);
                        match self.call(model, &prompt, false, cfg, &mut invocations) {
                            Ok(resp) => {
                                served = Some((resp.text, i));
                                break;
                            }
                            Err(source) if i == last_index => {
                                return Err(RouteError::Backend {
                                    model: model.name.clone(),
                                    source,
                                    invocations,
                                });
                            }
                            Err(e) => warn!("escalation to {} failed, trying next: {e}", model.name),
                        }
                    }
                    let (text, i) = served.expect("last cascade member either answers or errors");
                    decision.forced_accept = i == last_index;
                    (text, i, probe_prompt)
                }
            }
        };

        let chosen = &cfg.models[accepted_index];
        if let Some(inv) = invocations
            .iter_mut()
            .rev()
            .find(|inv| inv.model == chosen.name && inv.error.is_none())
        {
            inv.accepted = true;
        }
        decision.chosen_model = chosen.name.clone();
        decision.eff_cost = invocations.iter().map(|i| i.eff_cost).sum();
        decision.invocations = invocations;

        if req.store_turn_pair {
            let ts = req.session_timestamp.clone().unwrap_or_else(today);
            match self.store_interaction(&req.user_id, &req.query, &response, &ts, &chosen.name) {
                Ok(id) => decision.stored_memory_id = Some(id),
                Err(e) => {
                    warn!("memory write lost for user {}: {e}", req.user_id);
                    decision.memory_write_failed = true;
                }
            }
        }

        Ok(RouteOutcome {
            response,
            decision,
            prompt: probe_prompt,
        })
    }

    /// Embeds and stores an accepted turn-pair, retrying once.
    pub fn store_interaction(
        &self,
        user_id: &str,
        query: &str,
        response: &str,
        session_timestamp: &str,
        source_model: &str,
    ) -> Result<RecordId, String> {
        let attempt = || -> Result<RecordId, String> {
            let rendered = crate::memory_store::render_turn_pair(session_timestamp, query, response);
            let embedding = self.embedder.embed(&rendered).map_err(|e| e.to_string())?;
            self.store
                .insert(NewMemory {
                    user_id,
                    session_timestamp,
                    question: query,
                    answer: response,
                    source_model,
                    embedding,
                })
                .map_err(|e| e.to_string())
        };
        attempt().or_else(|first| {
            warn!("memory write failed, retrying: {first}");
            attempt()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{LogprobScript, MatchRule, MockBackend, MockFailure, MockScript, ScriptedBehavior};
    use crate::embed::HashEmbedder;

    const DIM: usize = 64;

    fn small() -> ModelSpec {
        ModelSpec::new("small-8b", 8.0)
    }
    fn large() -> ModelSpec {
        ModelSpec::new("large-235b", 235.0)
    }

    fn behavior(model: &str, reply: &str, logprob: f64) -> ScriptedBehavior {
        ScriptedBehavior {
            when: MatchRule {
                model: Some(model.into()),
                ..Default::default()
            },
            reply: reply.into(),
            logprob: LogprobScript::Uniform(logprob),
            fail: None,
        }
    }

    fn router(rules: Vec<ScriptedBehavior>) -> Router {
        let store = Arc::new(MemoryStore::in_memory(DIM).unwrap());
        Router::new(
            store,
            Arc::new(HashEmbedder::new(DIM)),
            Arc::new(MockBackend::from_rules(rules).unwrap()),
            RetrievalConfig::default(),
        )
    }

    fn record(id: RecordId, text: &str) -> Arc<MemoryRecord> {
        Arc::new(MemoryRecord {
            id,
            user_id: "u".into(),
            session_timestamp: "1 Jan 2024".into(),
            question_text: text.into(),
            answer_text: "ok".into(),
            rendered_text: crate::memory_store::render_turn_pair("1 Jan 2024", text, "ok"),
            embedding: vec![1.0; 2],
            source_model: "m".into(),
        })
    }

    #[test]
    fn prompt_without_memories_is_query_only() {
        let (p, ids) = build_augmented_prompt("pre", "q?", &[], 100);
        assert!(p.memories.is_empty() && ids.is_empty());
        assert_eq!(p.render(), "pre\n\nq?");
    }

    #[test]
    fn prompt_takes_whole_memories_greedily() {
        // each rendered memory is "[1 Jan 2024] Q: w w w / A: ok" = 10 words -> 13 tokens
        let mems: Vec<_> = (1..=5).map(|i| record(i, "w w w")).collect();
        let (p, ids) = build_augmented_prompt("pre", "q", &mems, 26);
        assert_eq!(ids, vec![1, 2]);
        assert_eq!(p.memories.len(), 2);
        let (p, ids) = build_augmented_prompt("pre", "q", &mems, 25);
        assert_eq!(ids, vec![1]);
        assert_eq!(p.memories[0], mems[0].rendered_text);
        let (_, ids) = build_augmented_prompt("pre", "q", &mems, 0);
        assert!(ids.is_empty());
    }

    #[test]
    fn confident_probe_is_accepted() {
        let r = router(vec![behavior("small-8b", "small answer", -1.0), behavior("large-235b", "large answer", -0.1)]);
        let cfg = CascadeConfig::new(vec![small(), large()]);
        let out = r.route(&RouteRequest::new("u", "anything"), &cfg).unwrap();
        let d = &out.decision;
        assert_eq!(d.chosen_model, "small-8b");
        assert!(!d.escalated && !d.forced_accept);
        assert!((d.confidence.unwrap().value - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.invocations.len(), 1);
        assert_eq!(d.eff_cost, d.invocations[0].eff_cost);
        assert_eq!(out.response, "small answer");
    }

    #[test]
    fn unconfident_probe_escalates() {
        let r = router(vec![behavior("small-8b", "unsure", -2.4), behavior("large-235b", "large answer", -0.1)]);
        let cfg = CascadeConfig::new(vec![small(), large()]);
        let out = r.route(&RouteRequest::new("u", "anything"), &cfg).unwrap();
        let d = &out.decision;
        assert_eq!(d.chosen_model, "large-235b");
        assert!(d.escalated);
        assert!((d.confidence.unwrap().value - 0.2).abs() < 1e-12);
        assert_eq!(out.response, "large answer");
        assert_eq!(d.invocations.len(), 2);
        assert!(!d.invocations[0].accepted && d.invocations[1].accepted);
        let total: f64 = d.invocations.iter().map(|i| i.eff_cost).sum();
        assert_eq!(d.eff_cost, total);
    }

    #[test]
    fn single_model_cascade_forces_accept() {
        let r = router(vec![behavior("small-8b", "unsure", -2.4)]);
        let cfg = CascadeConfig::new(vec![small()]);
        let out = r.route(&RouteRequest::new("u", "q"), &cfg).unwrap();
        assert_eq!(out.decision.chosen_model, "small-8b");
        assert!(out.decision.forced_accept);
        assert!(!out.decision.escalated);
    }

    #[test]
    fn probe_failure_escalates_with_zero_confidence() {
        let mut failing = behavior("small-8b", "", -0.1);
        failing.fail = Some(MockFailure::Transport);
        let r = router(vec![failing, behavior("large-235b", "large answer", -0.1)]);
        let cfg = CascadeConfig::new(vec![small(), large()]);
        let out = r.route(&RouteRequest::new("u", "q"), &cfg).unwrap();
        assert!(out.decision.escalated);
        assert_eq!(out.decision.confidence.unwrap().value, 0.0);
        assert!(out.decision.probe_error.is_some());
        assert_eq!(out.decision.invocations[0].eff_cost, 0.0);
    }

    #[test]
    fn missing_logprobs_and_empty_probe_escalate() {
        let r = router(vec![behavior("small-8b", "", -0.1), behavior("large-235b", "big", -0.1)]);
        let cfg = CascadeConfig::new(vec![small(), large()]);
        let out = r.route(&RouteRequest::new("u", "q"), &cfg).unwrap();
        assert!(out.decision.escalated);
        assert_eq!(out.decision.probe_error.as_deref(), Some("probe returned no tokens"));

        let store = Arc::new(MemoryStore::in_memory(DIM).unwrap());
        let no_lp = Router::new(
            store,
            Arc::new(HashEmbedder::new(DIM)),
            Arc::new(
                MockBackend::new(MockScript {
                    supports_logprobs: false,
                    ..Default::default()
                })
                .unwrap(),
            ),
            RetrievalConfig::default(),
        );
        let out = no_lp.route(&RouteRequest::new("u", "q"), &cfg).unwrap();
        assert!(out.decision.escalated);
        assert_eq!(out.decision.confidence.unwrap().value, 0.0);
    }

    #[test]
    fn final_model_failure_fails_request() {
        let mut failing = behavior("large-235b", "", -0.1);
        failing.fail = Some(MockFailure::Timeout);
        let r = router(vec![behavior("small-8b", "unsure", -2.9), failing]);
        let cfg = CascadeConfig::new(vec![small(), large()]);
        match r.route(&RouteRequest::new("u", "q"), &cfg) {
            Err(RouteError::Backend { model, invocations, .. }) => {
                assert_eq!(model, "large-235b");
                assert_eq!(invocations.len(), 2);
            }
            other => panic!("expected backend error, got {other:?}"),
        }
        assert_eq!(r.store().count("u"), 0);
    }

    #[test]
    fn stored_turn_pair_is_injected_next_time() {
        let r = router(vec![behavior("small-8b", "It is blue", -0.2)]);
        let cfg = CascadeConfig::new(vec![small(), large()]);
        let mut req = RouteRequest::new("u", "What colour is the sky?");
        req.session_timestamp = Some("2 Feb 2024".into());
        let first = r.route(&req, &cfg).unwrap();
        let id = first.decision.stored_memory_id.unwrap();
        let stored = r.store().get("u", id).unwrap();
        assert_eq!(stored.rendered_text, "[2 Feb 2024] Q: What colour is the sky? / A: It is blue");
        assert_eq!(stored.source_model, "small-8b");

        let second = r.route(&req, &cfg).unwrap();
        assert_eq!(second.decision.injected_memory_ids, vec![id]);
        assert!(second.prompt.render().contains(&stored.rendered_text));
    }

    #[test]
    fn memory_switch_does_not_stop_storage() {
        let r = router(vec![behavior("small-8b", "fine", -0.2)]);
        let mut cfg = CascadeConfig::new(vec![small()]);
        cfg.memory_enabled = false;
        r.route(&RouteRequest::new("u", "hello"), &cfg).unwrap();
        let out = r.route(&RouteRequest::new("u", "hello"), &cfg).unwrap();
        assert_eq!(r.store().count("u"), 2);
        assert!(out.decision.injected_memory_ids.is_empty());
        assert!(out.prompt.memories.is_empty());
    }

    #[test]
    fn routing_disabled_calls_first_model_directly() {
        let r = router(vec![behavior("small-8b", "direct", -2.9), behavior("large-235b", "big", -0.1)]);
        let mut cfg = CascadeConfig::new(vec![small(), large()]);
        cfg.routing_enabled = false;
        let out = r.route(&RouteRequest::new("u", "q"), &cfg).unwrap();
        assert_eq!(out.decision.chosen_model, "small-8b");
        assert!(out.decision.confidence.is_none());
        assert!(!out.decision.escalated);
    }

    #[test]
    fn tau_above_one_always_escalates() {
        let r = router(vec![behavior("small-8b", "sure", 0.0), behavior("large-235b", "big", -0.1)]);
        let mut cfg = CascadeConfig::new(vec![small(), large()]);
        cfg.tau = 1.01;
        let out = r.route(&RouteRequest::new("u", "q"), &cfg).unwrap();
        assert_eq!(out.decision.confidence.unwrap().value, 1.0);
        assert!(out.decision.escalated);
    }

    #[test]
    fn cascade_validation() {
        assert!(CascadeConfig::new(vec![]).validate().is_err());
        assert!(CascadeConfig::new(vec![large(), small()]).validate().is_err());
        let mut cfg = CascadeConfig::new(vec![small(), large()]);
        cfg.floor = 0.0;
        assert!(cfg.validate().is_err());
        cfg.floor = -3.0;
        cfg.probe_memory_token_budget = 10_000;
        assert!(cfg.validate().is_err());
    }
}
