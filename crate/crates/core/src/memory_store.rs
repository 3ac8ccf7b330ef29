//! Verbatim turn-pair memory, partitioned by user.
//!
//! On-disk layout of a store directory:
//!
//! ```text
//! <data_path>/store.json                 {"embedding_dim": 768, "format_version": 1}
//! <data_path>/partitions/<hex(user)>.jsonl
//! ```
//!
//! Each partition file is append-only with one JSON record per line:
//! `id`, `user_id`, `session_timestamp`, `question_text`, `answer_text`,
//! `rendered_text`, `embedding` (array of numbers), `source_model`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DESCRIPTOR: &str = "store.json";
const PARTITIONS: &str = "partitions";
const FORMAT_VERSION: u32 = 1;

pub type RecordId = u64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("embedding has dimension {got}, store expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding_dim must be positive")]
    ZeroDimension,
    #[error("store at {path} was created with embedding_dim {existing}, configured {configured}")]
    DimensionConflict {
        path: PathBuf,
        existing: usize,
        configured: usize,
    },
    #[error("corrupt record {index} in {path}: {reason}")]
    Corrupt {
        path: PathBuf,
        index: usize,
        reason: String,
    },
    #[error("invalid store descriptor {path}: {reason}")]
    Descriptor { path: PathBuf, reason: String },
    #[error("store i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Formats a stored turn-pair: `[<timestamp>] Q: <question> / A: <answer>`.
pub fn render_turn_pair(session_timestamp: &str, question: &str, answer: &str) -> String {
    format!("[{session_timestamp}] Q: {question} / A: {answer}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: RecordId,
    pub user_id: String,
    pub session_timestamp: String,
    pub question_text: String,
    pub answer_text: String,
    pub rendered_text: String,
    pub embedding: Vec<f64>,
    pub source_model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub embedding_dim: usize,
    /// `None` keeps the store purely in memory.
    pub data_path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    embedding_dim: usize,
    format_version: u32,
}

/// Fields of a new turn-pair, before an id is assigned.
#[derive(Debug, Clone)]
pub struct NewMemory<'a> {
    pub user_id: &'a str,
    pub session_timestamp: &'a str,
    pub question: &'a str,
    pub answer: &'a str,
    pub source_model: &'a str,
    pub embedding: Vec<f64>,
}

#[derive(Default)]
struct Inner {
    partitions: HashMap<String, Vec<Arc<MemoryRecord>>>,
    next_id: RecordId,
}

/// Multi-tenant turn-pair store.
///
/// Readers take snapshots of a partition (cheap `Arc` clones). Writes are
/// serialized and a record is visible to every later search once `insert`
/// returns.
pub struct MemoryStore {
    dim: usize,
    root: Option<PathBuf>,
    inner: RwLock<Inner>,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("dim", &self.dim)
            .field("root", &self.root)
            .finish_non_exhaustive()
    }
}

fn partition_file(root: &Path, user_id: &str) -> PathBuf {
    let mut name = String::with_capacity(user_id.len() * 2 + 6);
    for b in user_id.as_bytes() {
        name.push_str(&format!("{b:02x}"));
    }
    if name.is_empty() {
        name.push('_');
    }
    name.push_str(".jsonl");
    root.join(PARTITIONS).join(name)
}

impl MemoryStore {
    pub fn in_memory(embedding_dim: usize) -> Result<Self, StoreError> {
        if embedding_dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        Ok(Self {
            dim: embedding_dim,
            root: None,
            inner: RwLock::new(Inner {
                partitions: HashMap::new(),
                next_id: 1,
            }),
        })
    }

    /// Opens (or creates) a store according to `config`.
    ///
    /// An existing directory must carry the same `embedding_dim`.
    pub fn open(config: &StoreConfig) -> Result<Self, StoreError> {
        if config.embedding_dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        let Some(root) = &config.data_path else {
            return Self::in_memory(config.embedding_dim);
        };
        let descriptor = root.join(DESCRIPTOR);
        if descriptor.exists() {
            let store = Self::load(root)?;
            if store.dim != config.embedding_dim {
                return Err(StoreError::DimensionConflict {
                    path: root.clone(),
                    existing: store.dim,
                    configured: config.embedding_dim,
                });
            }
            return Ok(store);
        }
        fs::create_dir_all(root.join(PARTITIONS)).map_err(io_err(root))?;
        let body = serde_json::to_string(&Descriptor {
            embedding_dim: config.embedding_dim,
            format_version: FORMAT_VERSION,
        })
        .expect("descriptor serializes");
        fs::write(&descriptor, body).map_err(io_err(&descriptor))?;
        let mut store = Self::in_memory(config.embedding_dim)?;
        store.root = Some(root.clone());
        Ok(store)
    }

    /// Reconstructs a store written by this module.
    pub fn load(root: &Path) -> Result<Self, StoreError> {
        let descriptor_path = root.join(DESCRIPTOR);
        let raw = fs::read_to_string(&descriptor_path).map_err(io_err(&descriptor_path))?;
        let descriptor: Descriptor =
            serde_json::from_str(&raw).map_err(|e| StoreError::Descriptor {
                path: descriptor_path.clone(),
                reason: e.to_string(),
            })?;
        if descriptor.format_version != FORMAT_VERSION {
            return Err(StoreError::Descriptor {
                path: descriptor_path,
                reason: format!("unsupported format_version {}", descriptor.format_version),
            });
        }
        let dim = descriptor.embedding_dim;
        if dim == 0 {
            return Err(StoreError::ZeroDimension);
        }

        let mut inner = Inner {
            partitions: HashMap::new(),
            next_id: 1,
        };
        let dir = root.join(PARTITIONS);
        if dir.exists() {
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(io_err(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            for path in files {
                let records = read_partition(&path, dim)?;
                for r in records {
                    inner.next_id = inner.next_id.max(r.id + 1);
                    inner
                        .partitions
                        .entry(r.user_id.clone())
                        .or_default()
                        .push(Arc::new(r));
                }
            }
        }

        Ok(Self {
            dim,
            root: Some(root.to_path_buf()),
            inner: RwLock::new(inner),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn data_path(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Appends a turn-pair and returns its id.
    ///
    /// With a backing directory the record is written and synced before it
    /// becomes visible; a failed write leaves both disk and memory unchanged.
    pub fn insert(&self, new: NewMemory<'_>) -> Result<RecordId, StoreError> {
        if new.embedding.len() != self.dim {
            return Err(StoreError::Dimension {
                expected: self.dim,
                got: new.embedding.len(),
            });
        }
        let mut inner = self.inner.write().expect("store lock poisoned");
        let record = MemoryRecord {
            id: inner.next_id,
            user_id: new.user_id.to_string(),
            session_timestamp: new.session_timestamp.to_string(),
            question_text: new.question.to_string(),
            answer_text: new.answer.to_string(),
            rendered_text: render_turn_pair(new.session_timestamp, new.question, new.answer),
            embedding: new.embedding,
            source_model: new.source_model.to_string(),
        };
        if let Some(root) = &self.root {
            append_record(&partition_file(root, &record.user_id), &record)?;
        }
        let id = record.id;
        inner.next_id += 1;
        inner
            .partitions
            .entry(record.user_id.clone())
            .or_default()
            .push(Arc::new(record));
        Ok(id)
    }

    /// All records of a partition in insertion order.
    pub fn scan(&self, user_id: &str) -> Vec<Arc<MemoryRecord>> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.partitions.get(user_id).cloned().unwrap_or_default()
    }

    pub fn count(&self, user_id: &str) -> usize {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.partitions.get(user_id).map_or(0, Vec::len)
    }

    pub fn get(&self, user_id: &str, id: RecordId) -> Option<Arc<MemoryRecord>> {
        let inner = self.inner.read().expect("store lock poisoned");
        let part = inner.partitions.get(user_id)?;
        // ids grow monotonically, so each partition is sorted by id
        part.binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| Arc::clone(&part[i]))
    }

    /// Record count per user, sorted by user id.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner
            .partitions
            .iter()
            .map(|(u, v)| (u.clone(), v.len()))
            .collect()
    }
}

fn append_record(path: &Path, record: &MemoryRecord) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(record).expect("record serializes");
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let before = file.metadata().map_err(io_err(path))?.len();
    let written = file
        .write_all(line.as_bytes())
        .and_then(|_| file.sync_data());
    if let Err(e) = written {
        // Roll back a partial line so the partition stays loadable.
        let _ = file.set_len(before);
        return Err(StoreError::Io {
            path: path.to_path_buf(),
            source: e,
        });
    }
    Ok(())
}

fn read_partition(path: &Path, dim: usize) -> Result<Vec<MemoryRecord>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let corrupt = |reason: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            index,
            reason,
        };
        let record: MemoryRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if record.embedding.len() != dim {
            return Err(corrupt(format!(
                "embedding has dimension {}, store expects {dim}",
                record.embedding.len()
            )));
        }
        let expected =
            render_turn_pair(&record.session_timestamp, &record.question_text, &record.answer_text);
        if record.rendered_text != expected {
            return Err(corrupt("rendered_text does not match its turn-pair".into()));
        }
        out.push(record);
    }
    Ok(out)
}
