//! Dense, sparse and fused ranking over one memory partition.
//!
//! All rankings order by descending score with ties broken by ascending record
//! id, so results are identical across runs and platforms.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory_store::{MemoryRecord, MemoryStore, RecordId};
use crate::text::word_tokens;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("vector dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error("dense retrieval requires a query embedding")]
    MissingEmbedding,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::Dimension(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub record_id: RecordId,
    pub dense_score: Option<f64>,
    pub sparse_score: Option<f64>,
    pub fused_score: f64,
    pub dense_rank: Option<usize>,
    pub sparse_rank: Option<usize>,
}

fn by_score_then_id(a: (f64, RecordId), b: (f64, RecordId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

// ---------------------------------------------------------------------------
// BM25

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Length normalization strength, within [0, 1].
    pub b: f64,
    /// Longest word n-gram indexed as an extra term.
    pub ngram_max: usize,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            ngram_max: 2,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::Config(format!("bm25.k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::Config(format!("bm25.b must be within [0, 1], got {}", self.b)));
        }
        if self.ngram_max == 0 {
            return Err(RetrievalError::Config("bm25.ngram_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// Indexed terms of a text: lowercase word tokens plus every contiguous word
/// n-gram up to `ngram_max` (n-grams joined by a single space).
pub fn bm25_terms(text: &str, ngram_max: usize) -> Vec<String> {
    let words = word_tokens(text);
    let mut terms = words.clone();
    for n in 2..=ngram_max {
        terms.extend(words.windows(n).map(|w| w.join(" ")));
    }
    terms
}

/// Collection statistics for one partition.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub doc_freq: HashMap<String, usize>,
    pub avg_doc_len: f64,
}

impl CorpusStats {
    pub fn from_documents<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut stats = CorpusStats::default();
        let mut total_len = 0usize;
        for doc in docs {
            stats.doc_count += 1;
            total_len += doc.len();
            let unique: HashSet<&String> = doc.iter().collect();
            for t in unique {
                *stats.doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
        if stats.doc_count > 0 {
            stats.avg_doc_len = total_len as f64 / stats.doc_count as f64;
        }
        stats
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

fn term_component(tf: f64, doc_len: f64, stats: &CorpusStats, params: &Bm25Params) -> f64 {
    let length_ratio = if stats.avg_doc_len > 0.0 {
        doc_len / stats.avg_doc_len
    } else {
        1.0
    };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * length_ratio))
}

/// BM25 score of one document.
///
/// Query terms are de-duplicated before summation; a term repeated in the
/// query counts once.
pub fn bm25_score(
    query_terms: &[String],
    doc_terms: &[String],
    stats: &CorpusStats,
    params: &Bm25Params,
) -> f64 {
    if stats.doc_count == 0 {
        return 0.0;
    }
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in doc_terms {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut seen = HashSet::new();
    let mut score = 0.0;
    for q in query_terms {
        if !seen.insert(q.as_str()) {
            continue;
        }
        let Some(&f) = tf.get(q.as_str()) else { continue };
        score += stats.idf(q) * term_component(f as f64, doc_terms.len() as f64, stats, params);
    }
    score
}

/// Per-partition BM25 index built from record `rendered_text`.
pub struct SparseIndex {
    ids: Vec<RecordId>,
    tfs: Vec<HashMap<String, usize>>,
    lens: Vec<usize>,
    stats: CorpusStats,
    params: Bm25Params,
}

impl SparseIndex {
    pub fn build(records: &[Arc<MemoryRecord>], params: Bm25Params) -> Self {
        let docs: Vec<Vec<String>> = records
            .iter()
            .map(|r| bm25_terms(&r.rendered_text, params.ngram_max))
            .collect();
        let stats = CorpusStats::from_documents(docs.iter().map(Vec::as_slice));
        let mut tfs = Vec::with_capacity(docs.len());
        let mut lens = Vec::with_capacity(docs.len());
        for d in docs {
            lens.push(d.len());
            let mut tf = HashMap::new();
            for t in d {
                *tf.entry(t).or_insert(0) += 1;
            }
            tfs.push(tf);
        }
        Self {
            ids: records.iter().map(|r| r.id).collect(),
            tfs,
            lens,
            stats,
            params,
        }
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    /// Top-k by BM25; zero-score documents are dropped.
    pub fn search(&self, query_text: &str, k: usize) -> Vec<ScoredHit> {
        let mut terms = bm25_terms(query_text, self.params.ngram_max);
        let mut seen = HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));
        let idfs: Vec<f64> = terms.iter().map(|t| self.stats.idf(t)).collect();

        let mut scored: Vec<(f64, RecordId)> = Vec::new();
        for (i, tf) in self.tfs.iter().enumerate() {
            let mut s = 0.0;
            for (t, idf) in terms.iter().zip(&idfs) {
                if let Some(&f) = tf.get(t) {
                    s += idf * term_component(f as f64, self.lens[i] as f64, &self.stats, &self.params);
                }
            }
            if s > 0.0 {
                scored.push((s, self.ids[i]));
            }
        }
        scored.sort_by(|a, b| by_score_then_id(*a, *b));
        scored.truncate(k);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (s, id))| ScoredHit {
                record_id: id,
                dense_score: None,
                sparse_score: Some(s),
                fused_score: s,
                dense_rank: None,
                sparse_rank: Some(i + 1),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Dense

/// Top-k by cosine against the query embedding.
///
/// Records whose stored embedding has zero norm cannot be ranked and are
/// skipped.
pub fn dense_rank(
    records: &[Arc<MemoryRecord>],
    query_embedding: &[f64],
    k: usize,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if query_embedding.iter().all(|x| *x == 0.0) {
        return Err(RetrievalError::ZeroNorm);
    }
    let mut scored = Vec::with_capacity(records.len());
    for r in records {
        match cosine(query_embedding, &r.embedding) {
            Ok(s) => scored.push((s, r.id)),
            Err(RetrievalError::ZeroNorm) => continue,
            Err(e) => return Err(e),
        }
    }
    scored.sort_by(|a, b| by_score_then_id(*a, *b));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (s, id))| ScoredHit {
            record_id: id,
            dense_score: Some(s),
            sparse_score: None,
            fused_score: s,
            dense_rank: Some(i + 1),
            sparse_rank: None,
        })
        .collect())
}

pub fn dense_search(
    store: &MemoryStore,
    user_id: &str,
    query_embedding: &[f64],
    k: usize,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if query_embedding.len() != store.embedding_dim() {
        return Err(RetrievalError::Dimension(query_embedding.len(), store.embedding_dim()));
    }
    dense_rank(&store.scan(user_id), query_embedding, k)
}

pub fn sparse_search(
    store: &MemoryStore,
    user_id: &str,
    query_text: &str,
    k: usize,
    params: Bm25Params,
) -> Vec<ScoredHit> {
    SparseIndex::build(&store.scan(user_id), params).search(query_text, k)
}

// ---------------------------------------------------------------------------
// Fusion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    ReciprocalRank,
    Weighted,
    Bm25Dominant,
}

impl std::str::FromStr for FusionStrategy {
    type Err = RetrievalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reciprocal_rank" | "rrf" => Ok(Self::ReciprocalRank),
            "weighted" => Ok(Self::Weighted),
            "bm25_dominant" => Ok(Self::Bm25Dominant),
            other => Err(RetrievalError::Config(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    pub rrf_k: f64,
    pub dense_weight: f64,
    pub sparse_weight: f64,
    /// Minimum min-max-normalized BM25 score that promotes a candidate in
    /// `bm25_dominant` mode.
    pub bm25_dominance_threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: FusionStrategy::ReciprocalRank,
            rrf_k: 60.0,
            dense_weight: 0.5,
            sparse_weight: 0.5,
            bm25_dominance_threshold: 0.9,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.rrf_k > 0.0 && self.rrf_k.is_finite()) {
            return Err(RetrievalError::Config(format!("fusion.rrf_k must be positive, got {}", self.rrf_k)));
        }
        if self.dense_weight < 0.0 || self.sparse_weight < 0.0 {
            return Err(RetrievalError::Config("fusion weights must be nonnegative".into()));
        }
        if self.strategy != FusionStrategy::ReciprocalRank
            && self.dense_weight + self.sparse_weight <= 0.0
        {
            return Err(RetrievalError::Config(
                "fusion.dense_weight + fusion.sparse_weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Min-max normalization over one channel's candidate list. A list whose
/// scores are all equal (including a single element) normalizes to 1.0.
fn min_max(list: &[ScoredHit], score: impl Fn(&ScoredHit) -> Option<f64>) -> HashMap<RecordId, f64> {
    let values: Vec<(RecordId, f64)> = list
        .iter()
        .filter_map(|h| score(h).map(|s| (h.record_id, s)))
        .collect();
    let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    values
        .into_iter()
        .map(|(id, s)| {
            let n = if hi > lo { (s - lo) / (hi - lo) } else { 1.0 };
            (id, n)
        })
        .collect()
}

/// Merges a dense and a sparse candidate list into one ranking of length ≤ k.
///
/// Output hits carry both channels' scores and ranks where present.
pub fn fuse(dense: &[ScoredHit], sparse: &[ScoredHit], cfg: &FusionConfig, k: usize) -> Vec<ScoredHit> {
    let mut merged: BTreeMap<RecordId, ScoredHit> = BTreeMap::new();
    for h in dense {
        merged.insert(
            h.record_id,
            ScoredHit {
                record_id: h.record_id,
                dense_score: h.dense_score,
                sparse_score: None,
                fused_score: 0.0,
                dense_rank: h.dense_rank,
                sparse_rank: None,
            },
        );
    }
    for h in sparse {
        let e = merged.entry(h.record_id).or_insert(ScoredHit {
            record_id: h.record_id,
            dense_score: None,
            sparse_score: None,
            fused_score: 0.0,
            dense_rank: None,
            sparse_rank: None,
        });
        e.sparse_score = h.sparse_score;
        e.sparse_rank = h.sparse_rank;
    }

    match cfg.strategy {
        FusionStrategy::ReciprocalRank => {
            for h in merged.values_mut() {
                h.fused_score = [h.dense_rank, h.sparse_rank]
                    .into_iter()
                    .flatten()
                    .map(|r| 1.0 / (cfg.rrf_k + r as f64))
                    .sum();
            }
        }
        FusionStrategy::Weighted | FusionStrategy::Bm25Dominant => {
            let nd = min_max(dense, |h| h.dense_score);
            let ns = min_max(sparse, |h| h.sparse_score);
            let ceiling = cfg.dense_weight + cfg.sparse_weight;
            for h in merged.values_mut() {
                let d = nd.get(&h.record_id).copied().unwrap_or(0.0);
                let s = ns.get(&h.record_id).copied().unwrap_or(0.0);
                h.fused_score = cfg.dense_weight * d + cfg.sparse_weight * s;
                if cfg.strategy == FusionStrategy::Bm25Dominant
                    && ns.contains_key(&h.record_id)
                    && s >= cfg.bm25_dominance_threshold
                {
                    // Promoted block sits above every weighted score and is
                    // ordered by normalized sparse score.
                    h.fused_score = ceiling + 1.0 + s;
                }
            }
        }
    }

    let mut out: Vec<ScoredHit> = merged.into_values().collect();
    out.sort_by(|a, b| by_score_then_id((a.fused_score, a.record_id), (b.fused_score, b.record_id)));
    out.truncate(k);
    out
}

// ---------------------------------------------------------------------------
// Combined entry point

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Dense,
    Sparse,
    Hybrid,
}

impl std::str::FromStr for RetrievalMode {
    type Err = RetrievalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" | "bm25" => Ok(Self::Sparse),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(RetrievalError::Config(format!("unknown retrieval mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub mode: RetrievalMode,
    pub fusion: FusionConfig,
    pub bm25: Bm25Params,
    /// Each channel fetches `overfetch * k` candidates before fusion.
    pub overfetch: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::Hybrid,
            fusion: FusionConfig::default(),
            bm25: Bm25Params::default(),
            overfetch: 2,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        self.bm25.validate()?;
        self.fusion.validate()?;
        if self.overfetch == 0 {
            return Err(RetrievalError::Config("retrieval.overfetch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ranks a partition snapshot for one query under `cfg.mode`.
pub fn search_records(
    records: &[Arc<MemoryRecord>],
    query_text: &str,
    query_embedding: Option<&[f64]>,
    k: usize,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if k == 0 || records.is_empty() {
        return Ok(Vec::new());
    }
    match cfg.mode {
        RetrievalMode::Dense => {
            let q = query_embedding.ok_or(RetrievalError::MissingEmbedding)?;
            dense_rank(records, q, k)
        }
        RetrievalMode::Sparse => Ok(SparseIndex::build(records, cfg.bm25).search(query_text, k)),
        RetrievalMode::Hybrid => {
            let q = query_embedding.ok_or(RetrievalError::MissingEmbedding)?;
            let depth = k.saturating_mul(cfg.overfetch);
            let dense = dense_rank(records, q, depth)?;
            let sparse = SparseIndex::build(records, cfg.bm25).search(query_text, depth);
            Ok(fuse(&dense, &sparse, &cfg.fusion, k))
        }
    }
}

pub fn search(
    store: &MemoryStore,
    user_id: &str,
    query_text: &str,
    query_embedding: Option<&[f64]>,
    k: usize,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredHit>, RetrievalError> {
    if let Some(q) = query_embedding {
        if q.len() != store.embedding_dim() {
            return Err(RetrievalError::Dimension(q.len(), store.embedding_dim()));
        }
    }
    search_records(&store.scan(user_id), query_text, query_embedding, k, cfg)
}
