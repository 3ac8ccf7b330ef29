//! Runs benchmark questions through the router under one experimental
//! condition and aggregates the results.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{bleu1, retrieval_recall, token_f1};
use super::{EvalDataset, Partition, QAItem};
use crate::backends::ChatBackend;
use crate::cost::{aggregate, round1, CostSummary, LedgerEntry};
use crate::embed::Embedder;
use crate::memory_store::{MemoryStore, NewMemory, RecordId};
use crate::retrieval::{RetrievalConfig, RetrievalMode};
use crate::router::{CascadeConfig, ModelSpec, RouteDecision, RouteError, RouteRequest, Router};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("condition {name}: {reason}")]
    Condition { name: String, reason: String },
    #[error("building memory for {user}: {reason}")]
    Preload { user: String, reason: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCondition {
    pub name: String,
    /// Warm conditions pre-load every turn-pair and retrieve from them.
    pub memory_enabled: bool,
    pub routing_enabled: bool,
    /// Cheapest first. Routing needs at least two.
    pub models: Vec<ModelSpec>,
    pub retrieval: RetrievalMode,
    /// Inline the whole conversation instead of retrieving.
    #[serde(default)]
    pub full_context: bool,
}

impl EvalCondition {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| {
            Err(EvalError::Condition {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.models.is_empty() {
            return bad("needs at least one model");
        }
        if self.routing_enabled && self.models.len() < 2 {
            return bad("routing needs a cascade of at least two models");
        }
        if !self.routing_enabled && self.models.len() > 1 {
            return bad("a single-model condition takes exactly one model");
        }
        if self.full_context && self.memory_enabled {
            return bad("full context replaces retrieval; disable memory");
        }
        Ok(())
    }
}

/// The 2x2 memory/routing grid plus the two large-model baselines.
pub fn standard_conditions(small: &ModelSpec, large: &ModelSpec) -> Vec<EvalCondition> {
    let cond = |name: &str, memory: bool, routing: bool, models: Vec<ModelSpec>, full: bool| EvalCondition {
        name: name.into(),
        memory_enabled: memory,
        routing_enabled: routing,
        models,
        retrieval: RetrievalMode::Hybrid,
        full_context: full,
    };
    let pair = vec![small.clone(), large.clone()];
    vec![
        cond("cold-small", false, false, vec![small.clone()], false),
        cond("cold-compound", false, true, pair.clone(), false),
        cond("warm-memory", true, false, vec![small.clone()], false),
        cond("warm-compound", true, true, pair, false),
        cond("cold-large", false, false, vec![large.clone()], false),
        cond("full-context", false, false, vec![large.clone()], true),
    ]
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Thresholds, budgets and top-k; `models`, `memory_enabled` and
    /// `routing_enabled` come from the condition.
    pub cascade: CascadeConfig,
    pub retrieval: RetrievalConfig,
    pub parallelism: usize,
    pub brevity_penalty: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cascade: CascadeConfig::new(Vec::new()),
            retrieval: RetrievalConfig::default(),
            parallelism: 4,
            brevity_penalty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub category: String,
    pub question: String,
    pub gold: String,
    pub prediction: String,
    pub f1: f64,
    pub bleu1: f64,
    /// Evidence sessions found in the retrieved top-k; absent without
    /// evidence labels or without retrieval.
    pub recall: Option<f64>,
    pub decision: Option<RouteDecision>,
    pub error: Option<String>,
    /// Backend calls, including those of a failed request.
    pub ledger: Vec<LedgerEntry>,
}

/// Scores in percent, one decimal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub f1: f64,
    pub bleu1: f64,
    pub recall: Option<f64>,
    pub recall_count: usize,
}

impl MetricSummary {
    fn from_records<'a>(records: impl Iterator<Item = &'a QuestionRecord>) -> Self {
        let mut s = Self::default();
        let (mut f1, mut bleu, mut recall) = (0.0, 0.0, 0.0);
        for r in records.filter(|r| r.error.is_none()) {
            s.count += 1;
            f1 += r.f1;
            bleu += r.bleu1;
            if let Some(x) = r.recall {
                s.recall_count += 1;
                recall += x;
            }
        }
        if s.count > 0 {
            s.f1 = round1(100.0 * f1 / s.count as f64);
            s.bleu1 = round1(100.0 * bleu / s.count as f64);
        }
        if s.recall_count > 0 {
            s.recall = Some(round1(100.0 * recall / s.recall_count as f64));
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingSummary {
    /// Answered questions per serving model.
    pub served: BTreeMap<String, usize>,
    /// Percent served by the cheapest model, one decimal.
    pub small_model_share: Option<f64>,
    pub escalations: usize,
    pub forced_accepts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: EvalCondition,
    pub dataset: String,
    pub questions: usize,
    pub failed: usize,
    pub incomplete: bool,
    pub overall: MetricSummary,
    pub per_category: BTreeMap<String, MetricSummary>,
    pub routing: RoutingSummary,
    pub cost: CostSummary,
    /// Sorted by question id.
    pub records: Vec<QuestionRecord>,
}

struct Prepared {
    router: Router,
    /// Record id to source session, for recall.
    sessions: HashMap<RecordId, String>,
}

fn preload(
    dataset: &EvalDataset,
    embedder: &Arc<dyn Embedder>,
) -> Result<(MemoryStore, HashMap<RecordId, String>), EvalError> {
    let store = MemoryStore::in_memory(embedder.dim()).map_err(|e| EvalError::Preload {
        user: String::new(),
        reason: e.to_string(),
    })?;
    let mut sessions = HashMap::new();
    for p in &dataset.partitions {
        let fail = |reason: String| EvalError::Preload {
            user: p.user_id.clone(),
            reason,
        };
        let embeddings = p
            .pairs
            .par_iter()
            .map(|pair| embedder.embed(&pair.rendered()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| fail(e.to_string()))?;
        for (pair, embedding) in p.pairs.iter().zip(embeddings) {
            let id = store
                .insert(NewMemory {
                    user_id: &p.user_id,
                    session_timestamp: &pair.session_timestamp,
                    question: &pair.question,
                    answer: &pair.answer,
                    source_model: "dataset",
                    embedding,
                })
                .map_err(|e| fail(e.to_string()))?;
            sessions.insert(id, pair.session_id.clone());
        }
    }
    Ok((store, sessions))
}

fn prepare(
    cond: &EvalCondition,
    dataset: &EvalDataset,
    cfg: &EvalConfig,
    backend: &Arc<dyn ChatBackend>,
    embedder: &Arc<dyn Embedder>,
) -> Result<Prepared, EvalError> {
    let (store, sessions) = if cond.memory_enabled {
        preload(dataset, embedder)?
    } else {
        let store = MemoryStore::in_memory(embedder.dim()).map_err(|e| EvalError::Preload {
            user: String::new(),
            reason: e.to_string(),
        })?;
        (store, HashMap::new())
    };
    let retrieval = RetrievalConfig {
        mode: cond.retrieval,
        ..cfg.retrieval
    };
    retrieval.validate().map_err(|e| EvalError::Condition {
        name: cond.name.clone(),
        reason: e.to_string(),
    })?;
    Ok(Prepared {
        router: Router::new(Arc::new(store), Arc::clone(embedder), Arc::clone(backend), retrieval),
        sessions,
    })
}

fn ask(
    prep: &Prepared,
    cond: &EvalCondition,
    cascade: &CascadeConfig,
    partition: &Partition,
    qa: &QAItem,
    brevity_penalty: bool,
) -> QuestionRecord {
    let mut req = RouteRequest::new(partition.user_id.clone(), qa.question.clone());
    // Answers are not written back: questions stay independent of each
    // other and of evaluation order.
    req.store_turn_pair = false;
    if cond.full_context {
        req.inline_context = Some(partition.pairs.iter().map(|p| p.rendered()).collect());
    }
    let mut record = QuestionRecord {
        question_id: qa.question_id.clone(),
        category: qa.category.clone(),
        question: qa.question.clone(),
        gold: qa.answer.clone(),
        prediction: String::new(),
        f1: 0.0,
        bleu1: 0.0,
        recall: None,
        decision: None,
        error: None,
        ledger: Vec::new(),
    };
    match prep.router.route(&req, cascade) {
        Ok(out) => {
            record.f1 = token_f1(&out.response, &qa.answer);
            record.bleu1 = bleu1(&out.response, &qa.answer, brevity_penalty);
            if cond.memory_enabled {
                if let Some(evidence) = &qa.evidence {
                    let hits: Vec<String> = out
                        .decision
                        .retrieved_ids
                        .iter()
                        .filter_map(|id| prep.sessions.get(id).cloned())
                        .collect();
                    record.recall = retrieval_recall(&hits, evidence);
                }
            }
            record.ledger = out
                .decision
                .invocations
                .iter()
                .map(|i| i.ledger_entry(&qa.question_id))
                .collect();
            record.prediction = out.response;
            record.decision = Some(out.decision);
        }
        Err(RouteError::Backend {
            model,
            source,
            invocations,
        }) => {
            record.error = Some(format!("model {model} unavailable: {source}"));
            record.ledger = invocations.iter().map(|i| i.ledger_entry(&qa.question_id)).collect();
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Routes every question of `dataset` under `cond`.
///
/// Backend failures are recorded on the question and mark the report
/// incomplete; failed questions are left out of the score means.
pub fn run_condition(
    cond: &EvalCondition,
    dataset: &EvalDataset,
    cfg: &EvalConfig,
    backend: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
) -> Result<EvalReport, EvalError> {
    cond.validate()?;
    let mut cascade = cfg.cascade.clone();
    cascade.models = cond.models.clone();
    cascade.memory_enabled = cond.memory_enabled;
    cascade.routing_enabled = cond.routing_enabled;
    cascade.validate().map_err(|e| EvalError::Condition {
        name: cond.name.clone(),
        reason: e.to_string(),
    })?;

    let prep = prepare(cond, dataset, cfg, &backend, &embedder)?;
    let jobs: Vec<(&Partition, &QAItem)> = dataset
        .partitions
        .iter()
        .flat_map(|p| p.questions.iter().map(move |q| (p, q)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let mut records: Vec<QuestionRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|(p, q)| ask(&prep, cond, &cascade, p, q, cfg.brevity_penalty))
            .collect()
    });
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    // "small" means the cheapest model of the deployment, so a large-only
    // condition reports 0% rather than 100%
    let cheapest = cfg
        .cascade
        .models
        .first()
        .unwrap_or(&cond.models[0])
        .name
        .clone();
    Ok(summarize(cond.clone(), &dataset.name, &cheapest, records))
}

fn summarize(cond: EvalCondition, dataset: &str, cheapest: &str, records: Vec<QuestionRecord>) -> EvalReport {
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let mut categories: BTreeMap<String, Vec<&QuestionRecord>> = BTreeMap::new();
    for r in &records {
        categories.entry(r.category.clone()).or_default().push(r);
    }
    let per_category = categories
        .into_iter()
        .map(|(k, rs)| (k, MetricSummary::from_records(rs.into_iter())))
        .collect();

    let mut routing = RoutingSummary::default();
    let mut answered = 0usize;
    for d in records.iter().filter_map(|r| r.decision.as_ref()) {
        answered += 1;
        *routing.served.entry(d.chosen_model.clone()).or_insert(0) += 1;
        routing.escalations += d.escalated as usize;
        routing.forced_accepts += d.forced_accept as usize;
    }
    if answered > 0 {
        let on_small = routing.served.get(cheapest).copied().unwrap_or(0);
        routing.small_model_share = Some(round1(100.0 * on_small as f64 / answered as f64));
    }
    let ledger: Vec<LedgerEntry> = records.iter().flat_map(|r| r.ledger.iter().cloned()).collect();

    EvalReport {
        dataset: dataset.to_string(),
        questions: records.len(),
        failed,
        incomplete: failed > 0,
        overall: MetricSummary::from_records(records.iter()),
        per_category,
        routing,
        cost: aggregate(&ledger, cheapest),
        condition: cond,
        records,
    }
}

/// One row of a per-type comparison, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub category: String,
    pub n: usize,
    pub base_f1: f64,
    pub other_f1: f64,
    pub delta_f1: f64,
    pub base_recall: Option<f64>,
    pub other_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalComparison {
    pub base: EvalReport,
    pub other: EvalReport,
    pub rows: Vec<DeltaRow>,
    pub overall: DeltaRow,
}

fn delta_row(category: &str, a: &MetricSummary, b: &MetricSummary) -> DeltaRow {
    DeltaRow {
        category: category.to_string(),
        n: a.count.max(b.count),
        base_f1: a.f1,
        other_f1: b.f1,
        delta_f1: round1(b.f1 - a.f1),
        base_recall: a.recall,
        other_recall: b.recall,
    }
}

/// Runs two conditions over the same questions and backends.
pub fn compare_conditions(
    base: &EvalCondition,
    other: &EvalCondition,
    dataset: &EvalDataset,
    cfg: &EvalConfig,
    backend: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
) -> Result<RetrievalComparison, EvalError> {
    let a = run_condition(base, dataset, cfg, Arc::clone(&backend), Arc::clone(&embedder))?;
    let b = run_condition(other, dataset, cfg, backend, embedder)?;
    let empty = MetricSummary::default();
    let mut labels: Vec<&String> = a.per_category.keys().chain(b.per_category.keys()).collect();
    labels.sort();
    labels.dedup();
    let rows = labels
        .into_iter()
        .map(|k| {
            delta_row(
                k,
                a.per_category.get(k).unwrap_or(&empty),
                b.per_category.get(k).unwrap_or(&empty),
            )
        })
        .collect();
    let overall = delta_row("ALL", &a.overall, &b.overall);
    Ok(RetrievalComparison {
        base: a,
        other: b,
        rows,
        overall,
    })
}

/// Dense-only against hybrid retrieval on otherwise identical runs of `cond`.
pub fn compare_retrieval(
    cond: &EvalCondition,
    dataset: &EvalDataset,
    cfg: &EvalConfig,
    backend: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
) -> Result<RetrievalComparison, EvalError> {
    let arm = |mode: RetrievalMode, suffix: &str| EvalCondition {
        name: format!("{}/{suffix}", cond.name),
        retrieval: mode,
        ..cond.clone()
    };
    compare_conditions(
        &arm(RetrievalMode::Dense, "dense"),
        &arm(RetrievalMode::Hybrid, "hybrid"),
        dataset,
        cfg,
        backend,
        embedder,
    )
}
