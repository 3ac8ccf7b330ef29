//! Gateway configuration: one TOML file, every field overridable from the
//! environment.
//!
//! Environment keys take the `MEMROUTE__` prefix and use `__` to descend into
//! tables, e.g. `MEMROUTE__TAU=0.6` or `MEMROUTE__FUSION__STRATEGY=weighted`.
//! Values are parsed as TOML, so `MEMROUTE__MODELS='[{name="m", params_billion=8}]'`
//! replaces the whole cascade.

use std::path::{Path, PathBuf};

use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use memroute_core::retrieval::{Bm25Params, FusionConfig, RetrievalConfig, RetrievalMode};
use memroute_core::{CascadeConfig, ModelSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "MEMROUTE__";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Load(String),
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Feature-hashing embedder built into the binary.
    DeterministicTest,
    /// OpenAI-style `/embeddings` endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub endpoint: String,
    pub model: String,
    /// Accept longer vectors by keeping the leading `dim` components and
    /// renormalizing.
    pub truncate: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::DeterministicTest,
            dim: 256,
            endpoint: String::new(),
            model: String::new(),
            truncate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub listen: String,
    /// Memory store directory; in-memory when absent.
    pub store_path: Option<PathBuf>,
    /// Line-delimited cost ledger; in-memory when absent.
    pub ledger_path: Option<PathBuf>,
    /// Cascade members, cheapest first.
    pub models: Vec<ModelSpec>,
    pub tau: f64,
    pub ell_min: f64,
    pub top_k: usize,
    pub memory_enabled: bool,
    pub routing_enabled: bool,
    pub probe_memory_token_budget: usize,
    pub full_memory_token_budget: usize,
    pub max_output_tokens: u32,
    pub retrieval_mode: RetrievalMode,
    pub overfetch: usize,
    pub fusion: FusionConfig,
    pub bm25: Bm25Params,
    pub embedder: EmbedderConfig,
    /// Name of the environment variable holding a bearer token for the
    /// model endpoints.
    pub api_key_env: Option<String>,
    pub request_timeout_secs: u64,
    /// Serve every model from a scripted mock instead of HTTP endpoints.
    pub mock_script: Option<PathBuf>,
    pub eval_parallelism: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        let cascade = CascadeConfig::new(Vec::new());
        let retrieval = RetrievalConfig::default();
        Self {
            listen: "127.0.0.1:8080".into(),
            store_path: None,
            ledger_path: None,
            models: Vec::new(),
            tau: cascade.tau,
            ell_min: cascade.floor,
            top_k: cascade.top_k,
            memory_enabled: true,
            routing_enabled: true,
            probe_memory_token_budget: cascade.probe_memory_token_budget,
            full_memory_token_budget: cascade.full_memory_token_budget,
            max_output_tokens: cascade.max_output_tokens,
            retrieval_mode: retrieval.mode,
            overfetch: retrieval.overfetch,
            fusion: retrieval.fusion,
            bm25: retrieval.bm25,
            embedder: EmbedderConfig::default(),
            api_key_env: None,
            request_timeout_secs: 60,
            mock_script: None,
            eval_parallelism: 4,
        }
    }
}

impl GatewayConfig {
    /// Defaults, then the file (if any), then `MEMROUTE__*` variables.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg = Self::load_unvalidated(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// As [`load`](Self::load), leaving validation to the caller so that
    /// command-line flags can be applied first.
    pub fn load_unvalidated(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut fig = Figment::from(Serialized::defaults(GatewayConfig::default()));
        if let Some(p) = path {
            if !p.exists() {
                return Err(ConfigError::Load(format!("{} does not exist", p.display())));
            }
            fig = fig.merge(Toml::file(p));
        }
        let cfg: GatewayConfig = fig
            .merge(Env::prefixed(ENV_PREFIX).split("__"))
            .extract()
            .map_err(|e| ConfigError::Load(describe(e)))?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: GatewayConfig = Figment::from(Serialized::defaults(GatewayConfig::default()))
            .merge(Toml::string(text))
            .extract()
            .map_err(|e| ConfigError::Load(describe(e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.models.is_empty() {
            return Err(invalid("models", "at least one model is required"));
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.name.trim().is_empty() {
                return Err(invalid(format!("models[{i}].name"), "must not be empty"));
            }
            if !(m.params_billion > 0.0 && m.params_billion.is_finite()) {
                return Err(invalid(format!("models[{i}].params_billion"), "must be a positive number"));
            }
            if i > 0 && m.params_billion <= self.models[i - 1].params_billion {
                return Err(invalid(
                    format!("models[{i}].params_billion"),
                    "models must be listed cheapest first with strictly increasing size",
                ));
            }
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return Err(invalid(format!("models[{i}].name"), "duplicate model name"));
            }
            if self.mock_script.is_none() && m.endpoint.trim().is_empty() {
                return Err(invalid(format!("models[{i}].endpoint"), "required unless mock_script is set"));
            }
            if m.context_budget == 0 {
                return Err(invalid(format!("models[{i}].context_budget"), "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(invalid("tau", "must be within [0, 1]"));
        }
        if !(self.ell_min < 0.0 && self.ell_min.is_finite()) {
            return Err(invalid("ell_min", "must be a negative number"));
        }
        if self.top_k == 0 {
            return Err(invalid("top_k", "must be at least 1"));
        }
        if self.probe_memory_token_budget > self.full_memory_token_budget {
            return Err(invalid(
                "probe_memory_token_budget",
                "must not exceed full_memory_token_budget",
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(invalid("max_output_tokens", "must be positive"));
        }
        if self.overfetch == 0 {
            return Err(invalid("overfetch", "must be at least 1"));
        }
        self.fusion
            .validate()
            .map_err(|e| invalid("fusion", e.to_string()))?;
        self.bm25.validate().map_err(|e| invalid("bm25", e.to_string()))?;
        if self.embedder.dim == 0 {
            return Err(invalid("embedder.dim", "must be positive"));
        }
        if self.embedder.kind == EmbedderKind::Remote && self.embedder.endpoint.trim().is_empty() {
            return Err(invalid("embedder.endpoint", "required when embedder.kind = \"remote\""));
        }
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            return Err(invalid("listen", format!("{:?} is not a socket address", self.listen)));
        }
        if self.request_timeout_secs == 0 {
            return Err(invalid("request_timeout_secs", "must be positive"));
        }
        if self.eval_parallelism == 0 {
            return Err(invalid("eval_parallelism", "must be at least 1"));
        }
        Ok(())
    }

    pub fn cascade(&self) -> CascadeConfig {
        CascadeConfig {
            models: self.models.clone(),
            tau: self.tau,
            floor: self.ell_min,
            memory_enabled: self.memory_enabled,
            routing_enabled: self.routing_enabled,
            top_k: self.top_k,
            probe_memory_token_budget: self.probe_memory_token_budget,
            full_memory_token_budget: self.full_memory_token_budget,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            mode: self.retrieval_mode,
            fusion: self.fusion,
            bm25: self.bm25,
            overfetch: self.overfetch,
        }
    }
}

/// figment errors already carry the key path; keep them on one line.
fn describe(e: figment::Error) -> String {
    e.into_iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ")
}
