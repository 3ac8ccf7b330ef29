//! Memory-augmented model cascade.
//!
//! Every interaction is stored as a verbatim turn-pair in a per-user memory
//! store. Later queries retrieve relevant turn-pairs with hybrid dense/BM25
//! search and inject them into the prompt. The cheapest model is probed first;
//! its mean token log-probability is normalized into a confidence score and the
//! query escalates to larger models only when that score falls below the
//! acceptance threshold.
//!
//! The crate is transport-agnostic: model backends and embedders are traits,
//! with deterministic implementations ([`backends::MockBackend`],
//! [`embed::HashEmbedder`]) for tests and desk-scale evaluation.

pub mod backends;
pub mod confidence;
pub mod cost;
pub mod embed;
pub mod eval;
pub mod memory_store;
pub mod retrieval;
pub mod router;
pub mod text;

pub use backends::{BackendError, ChatBackend, ChatRequest, ChatResponse, MockBackend, Prompt};
pub use confidence::{ConfidenceScore, TokenLogprob};
pub use cost::{eff_cost, CostLedger, LedgerEntry};
pub use embed::{Embedder, HashEmbedder};
pub use memory_store::{MemoryRecord, MemoryStore, StoreConfig};
pub use retrieval::{Bm25Params, FusionConfig, FusionStrategy, RetrievalConfig, RetrievalMode, ScoredHit};
pub use router::{CascadeConfig, ModelSpec, RouteDecision, RouteRequest, Router};
