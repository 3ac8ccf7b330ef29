//! Effective-cost accounting.
//!
//! `EffCost = (input + 4 * output) * (P / 8)` with `P` the model size in
//! billions of parameters. Unitless: one input token on an 8B model costs 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OUTPUT_TOKEN_WEIGHT: f64 = 4.0;
pub const REFERENCE_PARAMS_BILLION: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("model size must be a positive number of billions, got {0}")]
    InvalidParams(f64),
}

pub fn eff_cost(input_tokens: u64, output_tokens: u64, params_billion: f64) -> Result<f64, CostError> {
    if !(params_billion > 0.0 && params_billion.is_finite()) {
        return Err(CostError::InvalidParams(params_billion));
    }
    let weighted = input_tokens as f64 + OUTPUT_TOKEN_WEIGHT * output_tokens as f64;
    Ok(weighted * (params_billion / REFERENCE_PARAMS_BILLION))
}

/// One backend invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub request_id: String,
    pub model: String,
    pub params_billion: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub eff_cost: f64,
    /// Whether this invocation's response was the one served.
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelTotals {
    pub invocations: u64,
    pub served: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub eff_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub requests: u64,
    pub per_model: BTreeMap<String, ModelTotals>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub eff_cost: f64,
    /// Percent of requests served by the cheapest model, one decimal.
    /// Absent for an empty ledger.
    pub small_model_share: Option<f64>,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn aggregate(entries: &[LedgerEntry], cheapest_model: &str) -> CostSummary {
    let mut s = CostSummary::default();
    let mut requests = BTreeSet::new();
    let mut on_small = 0u64;
    for e in entries {
        requests.insert(e.request_id.as_str());
        let m = s.per_model.entry(e.model.clone()).or_default();
        m.invocations += 1;
        m.input_tokens += e.input_tokens;
        m.output_tokens += e.output_tokens;
        m.eff_cost += e.eff_cost;
        if e.accepted {
            m.served += 1;
            if e.model == cheapest_model {
                on_small += 1;
            }
        }
        s.input_tokens += e.input_tokens;
        s.output_tokens += e.output_tokens;
        s.eff_cost += e.eff_cost;
    }
    s.requests = requests.len() as u64;
    if s.requests > 0 {
        s.small_model_share = Some(round1(100.0 * on_small as f64 / s.requests as f64));
    }
    s
}

/// Append-only ledger with an optional line-delimited JSON sink.
pub struct CostLedger {
    entries: Mutex<Vec<LedgerEntry>>,
    sink: Option<Mutex<BufWriter<File>>>,
}

impl Default for CostLedger {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl CostLedger {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(Vec::new()),
            sink: None,
        }
    }

    /// Appends to `path`, creating it if needed. Existing lines are not read
    /// back; totals cover this process only.
    pub fn with_file(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Mutex::new(Vec::new()),
            sink: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    pub fn append(&self, entry: LedgerEntry) -> io::Result<()> {
        let mut entries = self.entries.lock().expect("ledger lock poisoned");
        if let Some(sink) = &self.sink {
            let mut w = sink.lock().expect("ledger sink poisoned");
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        entries.push(entry);
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock poisoned").clone()
    }

    pub fn flush(&self) -> io::Result<()> {
        if let Some(sink) = &self.sink {
            sink.lock().expect("ledger sink poisoned").flush()?;
        }
        Ok(())
    }
}
