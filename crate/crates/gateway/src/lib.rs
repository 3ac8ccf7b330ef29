//! HTTP gateway and command-line front end for the memory-augmented router.

pub mod cli;
pub mod clients;
pub mod config;
pub mod server;

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use memroute_core::backends::{MockBackend, MockScript};
use memroute_core::cost::CostLedger;
use memroute_core::memory_store::StoreConfig;
use memroute_core::{ChatBackend, Embedder, HashEmbedder, MemoryStore, Router};
use thiserror::Error;

use crate::clients::{OpenAiCompatBackend, RemoteEmbedder};
use crate::config::{ConfigError, EmbedderKind, GatewayConfig};
use crate::server::AppState;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("backend unreachable: {0}")]
    Backend(String),
    #[error("store: {0}")]
    Store(String),
    #[error("{0}")]
    Other(String),
}

impl GatewayError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Dataset(_) => 3,
            Self::Backend(_) => 4,
            Self::Store(_) | Self::Other(_) => 1,
        }
    }
}

fn config_error(field: &str, reason: impl Into<String>) -> GatewayError {
    GatewayError::Config(ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    })
}

pub fn load_mock_script(path: &Path) -> Result<MockBackend, GatewayError> {
    let text = fs::read_to_string(path).map_err(|e| config_error("mock_script", format!("{}: {e}", path.display())))?;
    let script: MockScript =
        serde_json::from_str(&text).map_err(|e| config_error("mock_script", format!("{}: {e}", path.display())))?;
    MockBackend::new(script).map_err(|e| config_error("mock_script", e.to_string()))
}

/// The scripted mock when `mock_script` is set, HTTP otherwise.
pub fn build_backend(cfg: &GatewayConfig) -> Result<Arc<dyn ChatBackend>, GatewayError> {
    if let Some(path) = &cfg.mock_script {
        return Ok(Arc::new(load_mock_script(path)?));
    }
    let api_key = match &cfg.api_key_env {
        Some(var) => Some(std::env::var(var).map_err(|_| config_error("api_key_env", format!("${var} is not set")))?),
        None => None,
    };
    Ok(Arc::new(OpenAiCompatBackend::new(
        Duration::from_secs(cfg.request_timeout_secs),
        api_key,
    )))
}

pub fn build_embedder(cfg: &GatewayConfig) -> Arc<dyn Embedder> {
    let e = &cfg.embedder;
    match e.kind {
        EmbedderKind::DeterministicTest => Arc::new(HashEmbedder::new(e.dim)),
        EmbedderKind::Remote => Arc::new(RemoteEmbedder::new(
            &e.endpoint,
            &e.model,
            e.dim,
            e.truncate,
            Duration::from_secs(cfg.request_timeout_secs),
        )),
    }
}

pub fn open_store(cfg: &GatewayConfig) -> Result<MemoryStore, GatewayError> {
    MemoryStore::open(&StoreConfig {
        embedding_dim: cfg.embedder.dim,
        data_path: cfg.store_path.clone(),
    })
    .map_err(|e| GatewayError::Store(e.to_string()))
}

pub fn open_ledger(cfg: &GatewayConfig) -> Result<CostLedger, GatewayError> {
    match &cfg.ledger_path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| GatewayError::Store(format!("{}: {e}", dir.display())))?;
            }
            CostLedger::with_file(p).map_err(|e| GatewayError::Store(format!("{}: {e}", p.display())))
        }
        None => Ok(CostLedger::in_memory()),
    }
}

pub fn build_router(
    cfg: &GatewayConfig,
    store: MemoryStore,
    backend: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
) -> Router {
    Router::new(Arc::new(store), embedder, backend, cfg.retrieval())
}

/// Everything the HTTP service needs, from a validated config.
pub fn build_state(
    cfg: &GatewayConfig,
    backend: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
) -> Result<AppState, GatewayError> {
    let store = open_store(cfg)?;
    let ledger = open_ledger(cfg)?;
    Ok(AppState::new(build_router(cfg, store, backend, embedder), ledger, cfg.cascade()))
}
