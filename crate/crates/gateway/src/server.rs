//! HTTP surface: an extended chat-completions endpoint plus memory and
//! metrics endpoints.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router as HttpRouter};
use log::{error, info};
use memroute_core::cost::{aggregate, CostLedger, ModelTotals};
use memroute_core::retrieval::{FusionStrategy, RetrievalConfig, RetrievalMode};
use memroute_core::router::{RouteError, RouteOutcome};
use memroute_core::{CascadeConfig, RouteRequest, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub struct AppState {
    pub router: Arc<Router>,
    pub ledger: Arc<CostLedger>,
    pub cascade: CascadeConfig,
    request_seq: AtomicU64,
    id_prefix: String,
    failed: AtomicU64,
    escalations: AtomicU64,
    forced_accepts: AtomicU64,
}

impl AppState {
    pub fn new(router: Router, ledger: CostLedger, cascade: CascadeConfig) -> Self {
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        Self {
            router: Arc::new(router),
            ledger: Arc::new(ledger),
            cascade,
            request_seq: AtomicU64::new(0),
            id_prefix: format!("req-{started:x}"),
            failed: AtomicU64::new(0),
            escalations: AtomicU64::new(0),
            forced_accepts: AtomicU64::new(0),
        }
    }

    fn next_request_id(&self) -> String {
        let n = self.request_seq.fetch_add(1, Ordering::Relaxed) + 1;
        format!("{}-{n}", self.id_prefix)
    }
}

pub fn app(state: Arc<AppState>) -> HttpRouter {
    HttpRouter::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/memories", post(add_memory))
        .route("/v1/memories/search", get(search_memories))
        .route("/v1/metrics", get(metrics))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let kind = if self.0.is_client_error() {
            "invalid_request_error"
        } else {
            "backend_error"
        };
        (self.0, Json(json!({ "error": { "message": self.1, "type": kind } }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
}

// ---------------------------------------------------------------------------
// Chat

#[derive(Debug, Deserialize)]
struct InMessage {
    role: String,
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    memory: Option<bool>,
    routing: Option<bool>,
    tau: Option<f64>,
    k: Option<usize>,
    store: Option<bool>,
    session_timestamp: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatBody {
    messages: Vec<InMessage>,
    user: Option<String>,
    #[serde(default)]
    memroute: Overrides,
}

#[derive(Debug, Serialize)]
struct Extension {
    request_id: String,
    chosen_model: String,
    confidence: Option<f64>,
    mean_logprob: Option<f64>,
    tau: f64,
    escalated: bool,
    forced_accept: bool,
    memory_ids: Vec<u64>,
    retrieved_ids: Vec<u64>,
    eff_cost: f64,
    stored_memory_id: Option<u64>,
    probe_error: Option<String>,
    retrieval_error: Option<String>,
}

fn merged_cascade(base: &CascadeConfig, o: &Overrides) -> Result<CascadeConfig, ApiError> {
    let mut c = base.clone();
    if let Some(m) = o.memory {
        c.memory_enabled = m;
    }
    if let Some(r) = o.routing {
        c.routing_enabled = r;
    }
    if let Some(t) = o.tau {
        if !(t.is_finite() && t >= 0.0) {
            return Err(bad_request("memroute.tau must be a nonnegative number"));
        }
        c.tau = t;
    }
    if let Some(k) = o.k {
        if k == 0 {
            return Err(bad_request("memroute.k must be at least 1"));
        }
        c.top_k = k;
    }
    Ok(c)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn chat_response(request_id: String, out: RouteOutcome) -> Value {
    let d = out.decision;
    let served = d.invocations.iter().rev().find(|i| i.accepted);
    let (prompt_tokens, completion_tokens) = served.map(|i| (i.prompt_tokens, i.completion_tokens)).unwrap_or((0, 0));
    let ext = Extension {
        request_id: request_id.clone(),
        chosen_model: d.chosen_model.clone(),
        confidence: d.confidence.map(|c| c.value),
        mean_logprob: d.confidence.map(|c| c.mean_logprob),
        tau: d.tau,
        escalated: d.escalated,
        forced_accept: d.forced_accept,
        memory_ids: d.injected_memory_ids,
        retrieved_ids: d.retrieved_ids,
        eff_cost: d.eff_cost,
        stored_memory_id: d.stored_memory_id,
        probe_error: d.probe_error,
        retrieval_error: d.retrieval_error,
    };
    json!({
        "id": request_id,
        "object": "chat.completion",
        "created": unix_now(),
        "model": d.chosen_model,
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": out.response },
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens
        },
        "memroute": ext
    })
}

async fn chat(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let body: ChatBody = parse_body(&body)?;
    let user = body
        .user
        .filter(|u| !u.trim().is_empty())
        .ok_or_else(|| bad_request("`user` is required: it selects the memory partition"))?;
    let query = body
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user")
        .and_then(|m| m.content.clone())
        .filter(|c| !c.trim().is_empty())
        .ok_or_else(|| bad_request("`messages` must contain a non-empty user message"))?;
    let cascade = merged_cascade(&state.cascade, &body.memroute)?;

    let mut req = RouteRequest::new(user, query);
    req.session_timestamp = body.memroute.session_timestamp.clone();
    req.store_turn_pair = body.memroute.store.unwrap_or(true);
    let request_id = state.next_request_id();

    let st = Arc::clone(&state);
    let rid = request_id.clone();
    blocking(move || {
        let result = st.router.route(&req, &cascade);
        let invocations = match &result {
            Ok(out) => out.decision.invocations.clone(),
            Err(RouteError::Backend { invocations, .. }) => invocations.clone(),
            Err(_) => Vec::new(),
        };
        for inv in &invocations {
            if let Err(e) = st.ledger.append(inv.ledger_entry(&rid)) {
                error!("ledger write failed for {rid}: {e}");
            }
        }
        match result {
            Ok(out) => {
                st.escalations.fetch_add(out.decision.escalated as u64, Ordering::Relaxed);
                st.forced_accepts.fetch_add(out.decision.forced_accept as u64, Ordering::Relaxed);
                info!(
                    "{rid}: {} (c={:?}, escalated={})",
                    out.decision.chosen_model,
                    out.decision.confidence.map(|c| c.value),
                    out.decision.escalated
                );
                Ok(Json(chat_response(rid, out)))
            }
            Err(RouteError::Config(msg)) => Err(bad_request(msg)),
            Err(e) => {
                st.failed.fetch_add(1, Ordering::Relaxed);
                error!("{rid}: {e}");
                Err(ApiError(StatusCode::BAD_GATEWAY, e.to_string()))
            }
        }
    })
    .await?
}

// ---------------------------------------------------------------------------
// Memories

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewMemoryBody {
    user: String,
    question: String,
    #[serde(default)]
    answer: String,
    session_timestamp: Option<String>,
    source_model: Option<String>,
}

async fn add_memory(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let m: NewMemoryBody = parse_body(&body)?;
    if m.user.trim().is_empty() {
        return Err(bad_request("`user` must not be empty"));
    }
    let st = Arc::clone(&state);
    blocking(move || {
        let ts = m.session_timestamp.unwrap_or_else(memroute_core::text::today);
        let source = m.source_model.unwrap_or_else(|| "client".into());
        match st.router.store_interaction(&m.user, &m.question, &m.answer, &ts, &source) {
            Ok(id) => {
                let rec = st.router.store().get(&m.user, id);
                Ok((
                    StatusCode::CREATED,
                    Json(json!({
                        "id": id,
                        "user": m.user,
                        "rendered_text": rec.map(|r| r.rendered_text.clone()),
                    })),
                )
                    .into_response())
            }
            Err(e) => Err(ApiError(StatusCode::BAD_GATEWAY, format!("memory not stored: {e}"))),
        }
    })
    .await?
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    user: String,
    q: String,
    k: Option<usize>,
    strategy: Option<String>,
}

/// `dense`, `sparse` and `hybrid` pick the mode; a fusion name implies
/// hybrid with that fusion.
fn strategy_config(base: RetrievalConfig, strategy: Option<&str>) -> Result<RetrievalConfig, ApiError> {
    let Some(s) = strategy else { return Ok(base) };
    if let Ok(mode) = s.parse::<RetrievalMode>() {
        return Ok(RetrievalConfig { mode, ..base });
    }
    let fusion: FusionStrategy = s
        .parse()
        .map_err(|_| bad_request(format!("unknown strategy {s:?}")))?;
    let mut cfg = base;
    cfg.mode = RetrievalMode::Hybrid;
    cfg.fusion.strategy = fusion;
    Ok(cfg)
}

async fn search_memories(
    State(state): State<Arc<AppState>>,
    params: Result<Query<SearchParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(p) = params.map_err(|e| bad_request(e.body_text()))?;
    let k = p.k.unwrap_or(state.cascade.top_k);
    if k == 0 {
        return Err(bad_request("k must be at least 1"));
    }
    let cfg = strategy_config(*state.router.retrieval_config(), p.strategy.as_deref())?;
    let st = Arc::clone(&state);
    blocking(move || {
        let (hits, note) = st.router.retrieve(&p.user, &p.q, k, &cfg);
        let hits: Vec<Value> = hits
            .into_iter()
            .map(|(h, r)| {
                json!({
                    "id": h.record_id,
                    "rendered_text": r.rendered_text,
                    "session_timestamp": r.session_timestamp,
                    "fused_score": h.fused_score,
                    "dense_score": h.dense_score,
                    "sparse_score": h.sparse_score,
                    "dense_rank": h.dense_rank,
                    "sparse_rank": h.sparse_rank,
                })
            })
            .collect();
        Json(json!({
            "user": p.user,
            "query": p.q,
            "mode": cfg.mode,
            "fusion": cfg.fusion.strategy,
            "hits": hits,
            "note": note,
        }))
    })
    .await
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub failed_requests: u64,
    pub escalations: u64,
    pub forced_accepts: u64,
    pub small_model_share: Option<f64>,
    pub eff_cost: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub per_model: BTreeMap<String, ModelTotals>,
    pub memories: BTreeMap<String, usize>,
    pub memory_total: usize,
}

pub fn snapshot(state: &AppState) -> MetricsSnapshot {
    let summary = aggregate(&state.ledger.snapshot(), &state.cascade.models[0].name);
    let memories = state.router.store().counts();
    MetricsSnapshot {
        requests: state.request_seq.load(Ordering::Relaxed),
        failed_requests: state.failed.load(Ordering::Relaxed),
        escalations: state.escalations.load(Ordering::Relaxed),
        forced_accepts: state.forced_accepts.load(Ordering::Relaxed),
        small_model_share: summary.small_model_share,
        eff_cost: summary.eff_cost,
        input_tokens: summary.input_tokens,
        output_tokens: summary.output_tokens,
        per_model: summary.per_model,
        memory_total: memories.values().sum(),
        memories,
    }
}

async fn metrics(State(state): State<Arc<AppState>>) -> Json<MetricsSnapshot> {
    Json(snapshot(&state))
}
