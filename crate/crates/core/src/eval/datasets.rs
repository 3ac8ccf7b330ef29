//! Loaders for the two conversational-memory benchmarks.
//!
//! Both are parsed from `serde_json::Value` so a structural problem can be
//! reported with the exact JSON path of the missing or mistyped field.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::memory_store::render_turn_pair;
use crate::text::normalize_session_date;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("field `{field}` should be {expected}")]
    WrongType { field: String, expected: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub question_id: String,
    pub question: String,
    pub answer: String,
    pub category: String,
    /// Session ids holding the evidence; `None` when the dataset gives none.
    pub evidence: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    /// Normalized "D Mon YYYY" when the source date could be parsed.
    pub timestamp: String,
    pub turns: Vec<Turn>,
}

/// How speaker turns become stored turn-pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    /// Consecutive turns (1,2), (3,4), ...; a trailing odd turn gets an empty
    /// answer.
    #[default]
    Pairs,
    /// One pair per turn: turn i with turn i+1 as its answer; the final turn of
    /// a session gets an empty answer. Yields exactly one pair per turn.
    PerTurn,
}

impl std::str::FromStr for PairingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pairs" => Ok(Self::Pairs),
            "per-turn" => Ok(Self::PerTurn),
            other => Err(format!("unknown pairing mode {other:?} (expected pairs or per-turn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnPair {
    pub session_id: String,
    pub session_timestamp: String,
    pub question: String,
    pub answer: String,
}

impl TurnPair {
    pub fn rendered(&self) -> String {
        render_turn_pair(&self.session_timestamp, &self.question, &self.answer)
    }
}

impl Session {
    pub fn turn_pairs(&self, mode: PairingMode) -> Vec<TurnPair> {
        let pair = |q: &Turn, a: Option<&Turn>| TurnPair {
            session_id: self.id.clone(),
            session_timestamp: self.timestamp.clone(),
            question: q.text.clone(),
            answer: a.map(|t| t.text.clone()).unwrap_or_default(),
        };
        match mode {
            PairingMode::Pairs => self.turns.chunks(2).map(|c| pair(&c[0], c.get(1))).collect(),
            PairingMode::PerTurn => (0..self.turns.len())
                .map(|i| pair(&self.turns[i], self.turns.get(i + 1)))
                .collect(),
        }
    }
}

pub fn turn_pairs(sessions: &[Session], mode: PairingMode) -> Vec<TurnPair> {
    sessions.iter().flat_map(|s| s.turn_pairs(mode)).collect()
}

pub fn turn_count(sessions: &[Session]) -> usize {
    sessions.iter().map(|s| s.turns.len()).sum()
}

fn read_json(path: &Path) -> Result<Value, DatasetError> {
    let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&raw).map_err(|e| DatasetError::Json(e.to_string()))
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value, DatasetError> {
    obj.get(key)
        .ok_or_else(|| DatasetError::MissingField(format!("{path}.{key}")))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, DatasetError> {
    v.as_array().ok_or_else(|| DatasetError::WrongType {
        field: path.to_string(),
        expected: "an array",
    })
}

/// Strings, numbers and booleans all render as answer text.
fn as_text(v: &Value, path: &str) -> Result<String, DatasetError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(DatasetError::WrongType {
            field: path.to_string(),
            expected: "a string",
        }),
    }
}

fn text_field(obj: &Value, key: &str, path: &str) -> Result<String, DatasetError> {
    as_text(field(obj, key, path)?, &format!("{path}.{key}"))
}

fn string_list(v: &Value, path: &str) -> Result<Vec<String>, DatasetError> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_text(x, &format!("{path}[{i}]")))
        .collect()
}

// ---------------------------------------------------------------------------
// LoCoMo

pub const LOCOMO_CATEGORIES: [&str; 4] = ["single-hop", "multi-hop", "open-domain", "temporal"];

/// LoCoMo's numeric QA category codes. Code 5 (adversarial) has no gold
/// answer and is not part of the four evaluated categories.
fn locomo_category(code: i64) -> Option<&'static str> {
    match code {
        1 => Some("multi-hop"),
        2 => Some("temporal"),
        3 => Some("open-domain"),
        4 => Some("single-hop"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocomoSample {
    pub sample_id: String,
    pub speakers: (String, String),
    pub sessions: Vec<Session>,
    pub qa: Vec<QAItem>,
    /// QA entries outside the four evaluated categories.
    pub skipped_qa: usize,
}

impl LocomoSample {
    pub fn turn_count(&self) -> usize {
        turn_count(&self.sessions)
    }

    pub fn category_histogram(&self) -> BTreeMap<String, usize> {
        histogram(&self.qa)
    }
}

pub fn histogram(items: &[QAItem]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for q in items {
        *h.entry(q.category.clone()).or_insert(0) += 1;
    }
    h
}

/// Evidence ids look like "D3:12" (session 3, turn 12).
fn locomo_evidence_session(dia_id: &str) -> Option<String> {
    let rest = dia_id.trim().strip_prefix('D')?;
    let n: u32 = rest.split(':').next()?.trim().parse().ok()?;
    Some(format!("session_{n}"))
}

pub fn load_locomo(path: &Path) -> Result<Vec<LocomoSample>, DatasetError> {
    parse_locomo(&read_json(path)?)
}

pub fn parse_locomo(root: &Value) -> Result<Vec<LocomoSample>, DatasetError> {
    let samples: Vec<&Value> = match root {
        Value::Array(a) => a.iter().collect(),
        Value::Object(_) => vec![root],
        _ => {
            return Err(DatasetError::WrongType {
                field: "$".into(),
                expected: "an array of samples",
            })
        }
    };
    samples
        .into_iter()
        .enumerate()
        .map(|(i, s)| parse_locomo_sample(s, &format!("[{i}]")))
        .collect()
}

fn parse_locomo_sample(sample: &Value, path: &str) -> Result<LocomoSample, DatasetError> {
    let sample_id = match sample.get("sample_id") {
        Some(v) => as_text(v, &format!("{path}.sample_id"))?,
        None => format!("sample{}", path.trim_matches(|c| c == '[' || c == ']')),
    };
    let conv_path = format!("{path}.conversation");
    let conv = field(sample, "conversation", path)?;
    let conv_obj = conv.as_object().ok_or_else(|| DatasetError::WrongType {
        field: conv_path.clone(),
        expected: "an object",
    })?;
    let speakers = (
        text_field(conv, "speaker_a", &conv_path)?,
        text_field(conv, "speaker_b", &conv_path)?,
    );

    let mut numbered: Vec<(u32, &str)> = conv_obj
        .iter()
        .filter(|(_, v)| v.is_array())
        .filter_map(|(k, _)| {
            let n = k.strip_prefix("session_")?.parse::<u32>().ok()?;
            Some((n, k.as_str()))
        })
        .collect();
    numbered.sort();

    let mut sessions = Vec::with_capacity(numbered.len());
    for (n, key) in numbered {
        let date_key = format!("{key}_date_time");
        let date = text_field(conv, &date_key, &conv_path)?;
        let turns_path = format!("{conv_path}.{key}");
        let turns = as_array(&conv[key], &turns_path)?
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let tp = format!("{turns_path}[{j}]");
                Ok(Turn {
                    speaker: text_field(t, "speaker", &tp)?,
                    text: text_field(t, "text", &tp)?,
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        sessions.push(Session {
            id: format!("session_{n}"),
            timestamp: normalize_session_date(&date),
            turns,
        });
    }

    let qa_path = format!("{path}.qa");
    let qa_list = match sample.get("qa") {
        Some(v) => as_array(v, &qa_path)?.as_slice(),
        None => &[],
    };
    let mut qa = Vec::new();
    let mut skipped = 0;
    for (j, q) in qa_list.iter().enumerate() {
        let qp = format!("{qa_path}[{j}]");
        let code = field(q, "category", &qp)?
            .as_i64()
            .ok_or_else(|| DatasetError::WrongType {
                field: format!("{qp}.category"),
                expected: "an integer",
            })?;
        let Some(category) = locomo_category(code) else {
            skipped += 1;
            continue;
        };
        let evidence = match q.get("evidence") {
            Some(v) => {
                let mut ids: Vec<String> = string_list(v, &format!("{qp}.evidence"))?
                    .iter()
                    .filter_map(|d| locomo_evidence_session(d))
                    .collect();
                ids.dedup();
                Some(ids)
            }
            None => None,
        };
        qa.push(QAItem {
            question_id: format!("{sample_id}-q{j:03}"),
            question: text_field(q, "question", &qp)?,
            answer: text_field(q, "answer", &qp)?,
            category: category.to_string(),
            evidence,
        });
    }

    Ok(LocomoSample {
        sample_id,
        speakers,
        sessions,
        qa,
        skipped_qa: skipped,
    })
}

// ---------------------------------------------------------------------------
// LongMemEval

pub const LONGMEMEVAL_TYPES: [&str; 6] = [
    "single-session-user",
    "single-session-assistant",
    "single-session-preference",
    "multi-session",
    "temporal-reasoning",
    "knowledge-update",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LongMemEvalItem {
    pub qa: QAItem,
    pub haystack: Vec<Session>,
}

pub fn load_longmemeval(path: &Path) -> Result<Vec<LongMemEvalItem>, DatasetError> {
    parse_longmemeval(&read_json(path)?)
}

pub fn parse_longmemeval(root: &Value) -> Result<Vec<LongMemEvalItem>, DatasetError> {
    as_array(root, "$")?
        .iter()
        .enumerate()
        .map(|(i, item)| parse_longmemeval_item(item, &format!("[{i}]")))
        .collect()
}

fn parse_longmemeval_item(item: &Value, path: &str) -> Result<LongMemEvalItem, DatasetError> {
    let question_id = text_field(item, "question_id", path)?;
    let category = text_field(item, "question_type", path)?;
    if !LONGMEMEVAL_TYPES.contains(&category.as_str()) {
        return Err(DatasetError::WrongType {
            field: format!("{path}.question_type"),
            expected: "one of the six LongMemEval question types",
        });
    }
    let question = text_field(item, "question", path)?;
    let answer = text_field(item, "answer", path)?;

    let sessions_path = format!("{path}.haystack_sessions");
    let raw_sessions = as_array(field(item, "haystack_sessions", path)?, &sessions_path)?;
    let ids = match item.get("haystack_session_ids") {
        Some(v) => string_list(v, &format!("{path}.haystack_session_ids"))?,
        None => (0..raw_sessions.len()).map(|i| format!("{question_id}-s{i}")).collect(),
    };
    let dates = match item.get("haystack_dates") {
        Some(v) => string_list(v, &format!("{path}.haystack_dates"))?,
        None => Vec::new(),
    };
    if ids.len() != raw_sessions.len() {
        return Err(DatasetError::WrongType {
            field: format!("{path}.haystack_session_ids"),
            expected: "one id per haystack session",
        });
    }

    let mut haystack = Vec::with_capacity(raw_sessions.len());
    for (s, raw) in raw_sessions.iter().enumerate() {
        let sp = format!("{sessions_path}[{s}]");
        let turns = as_array(raw, &sp)?
            .iter()
            .enumerate()
            .map(|(t, turn)| {
                let tp = format!("{sp}[{t}]");
                Ok(Turn {
                    speaker: text_field(turn, "role", &tp)?,
                    text: text_field(turn, "content", &tp)?,
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        haystack.push(Session {
            id: ids[s].clone(),
            timestamp: dates
                .get(s)
                .map(|d| normalize_session_date(d))
                .unwrap_or_default(),
            turns,
        });
    }

    let evidence = match item.get("answer_session_ids") {
        Some(v) => Some(string_list(v, &format!("{path}.answer_session_ids"))?),
        None => None,
    };

    Ok(LongMemEvalItem {
        qa: QAItem {
            question_id,
            question,
            answer,
            category,
            evidence,
        },
        haystack,
    })
}
