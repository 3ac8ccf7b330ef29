//! Benchmark loading, answer metrics, sampling and the condition runner.

pub mod datasets;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod sampling;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use datasets::{
    load_locomo, load_longmemeval, DatasetError, LocomoSample, LongMemEvalItem, PairingMode, QAItem, Session,
    TurnPair,
};
pub use metrics::{bleu1, normalize_answer, retrieval_recall, token_f1};
pub use runner::{
    compare_conditions, compare_retrieval, run_condition, standard_conditions, DeltaRow, EvalCondition, EvalConfig,
    EvalError, EvalReport, MetricSummary, QuestionRecord, RetrievalComparison, RoutingSummary,
};
pub use sampling::{allocate, stratified_sample, SampleError};

/// One memory partition and the questions asked against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub user_id: String,
    pub pairs: Vec<TurnPair>,
    pub questions: Vec<QAItem>,
}

/// A benchmark in runner form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDataset {
    pub name: String,
    pub partitions: Vec<Partition>,
}

impl EvalDataset {
    /// One partition per conversation, keyed by its sample id.
    pub fn from_locomo(samples: &[LocomoSample], mode: PairingMode) -> Self {
        Self {
            name: "locomo".into(),
            partitions: samples
                .iter()
                .map(|s| Partition {
                    user_id: s.sample_id.clone(),
                    pairs: datasets::turn_pairs(&s.sessions, mode),
                    questions: s.qa.clone(),
                })
                .collect(),
        }
    }

    /// One partition per question, keyed by the question id, so haystacks
    /// never see each other.
    pub fn from_longmemeval(items: &[LongMemEvalItem], mode: PairingMode) -> Self {
        Self {
            name: "longmemeval".into(),
            partitions: items
                .iter()
                .map(|it| Partition {
                    user_id: it.qa.question_id.clone(),
                    pairs: datasets::turn_pairs(&it.haystack, mode),
                    questions: vec![it.qa.clone()],
                })
                .collect(),
        }
    }

    pub fn question_count(&self) -> usize {
        self.partitions.iter().map(|p| p.questions.len()).sum()
    }

    pub fn pair_count(&self) -> usize {
        self.partitions.iter().map(|p| p.pairs.len()).sum()
    }

    pub fn category_histogram(&self) -> BTreeMap<String, usize> {
        let all: Vec<QAItem> = self.partitions.iter().flat_map(|p| p.questions.clone()).collect();
        datasets::histogram(&all)
    }

    /// Keeps a type-proportional sample of the questions. Partitions left
    /// without questions are dropped.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Self, SampleError> {
        let all: Vec<&QAItem> = self.partitions.iter().flat_map(|p| &p.questions).collect();
        let keep: BTreeSet<String> = stratified_sample(&all, n, seed, |q| q.category.as_str())?
            .into_iter()
            .map(|q| q.question_id.clone())
            .collect();
        let partitions = self
            .partitions
            .iter()
            .filter_map(|p| {
                let questions: Vec<QAItem> = p
                    .questions
                    .iter()
                    .filter(|q| keep.contains(&q.question_id))
                    .cloned()
                    .collect();
                (!questions.is_empty()).then(|| Partition {
                    questions,
                    ..p.clone()
                })
            })
            .collect();
        Ok(Self {
            name: self.name.clone(),
            partitions,
        })
    }
}
