#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use memroute_core::backends::{LogprobScript, MatchRule, MockBackend, ScriptedBehavior};
use memroute_core::eval::{EvalDataset, Partition, QAItem, TurnPair};
use memroute_core::memory_store::{MemoryRecord, MemoryStore, NewMemory};
use memroute_core::retrieval::bm25_terms;
use memroute_core::{HashEmbedder, ModelSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = 64;

pub fn small() -> ModelSpec {
    ModelSpec::new("small-8b", 8.0)
}

pub fn large() -> ModelSpec {
    ModelSpec::new("large-235b", 235.0)
}

pub fn rule(model: Option<&str>, when: MatchRule, reply: &str, logprob: f64) -> ScriptedBehavior {
    ScriptedBehavior {
        when: MatchRule {
            model: model.map(str::to_string),
            ..when
        },
        reply: reply.into(),
        logprob: LogprobScript::Uniform(logprob),
        fail: None,
    }
}

// ---------------------------------------------------------------------------
// Brute-force retrieval oracles

/// Every record scored by a from-scratch cosine, sorted by score then id.
pub fn dense_oracle(records: &[Arc<MemoryRecord>], q: &[f64], k: usize) -> Vec<u64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(q);
    let mut all: Vec<(f64, u64)> = records
        .iter()
        .filter(|r| norm(&r.embedding) > 0.0)
        .map(|r| {
            let dot: f64 = q.iter().zip(&r.embedding).map(|(a, b)| a * b).sum();
            ((dot / (qn * norm(&r.embedding))).clamp(-1.0, 1.0), r.id)
        })
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, id)| id).collect()
}

/// Okapi BM25 recomputed per document by direct counting.
pub fn sparse_oracle(records: &[Arc<MemoryRecord>], query: &str, k: usize) -> Vec<u64> {
    let (k1, b) = (1.2, 0.75);
    let docs: Vec<Vec<String>> = records.iter().map(|r| bm25_terms(&r.rendered_text, 2)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut q_terms: Vec<String> = Vec::new();
    for t in bm25_terms(query, 2) {
        if !q_terms.contains(&t) {
            q_terms.push(t);
        }
    }
    let idfs: Vec<f64> = q_terms
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
        })
        .collect();
    let mut all: Vec<(f64, u64)> = Vec::new();
    for (doc, rec) in docs.iter().zip(records) {
        let mut score = 0.0;
        for (t, idf) in q_terms.iter().zip(&idfs) {
            let tf = doc.iter().filter(|d| *d == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let dl = doc.len() as f64;
            score += idf * (tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * (dl / avgdl))));
        }
        if score > 0.0 {
            all.push((score, rec.id));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, id)| id).collect()
}

const VOCAB: [&str; 40] = [
    "amalfi", "coast", "trip", "holiday", "tax", "return", "deadline", "sister", "brother", "pottery", "class",
    "violin", "lesson", "camping", "beach", "marshmallow", "painting", "sunset", "lake", "adoption", "agency",
    "running", "morning", "concert", "parade", "book", "history", "counseling", "support", "group", "garden",
    "tomato", "bike", "repair", "kitchen", "recipe", "pasta", "movie", "weekend", "friend",
];

pub fn random_sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// A store of `n` random records in one partition, embedded with the hash
/// embedder.
pub fn random_store(seed: u64, n: usize) -> (MemoryStore, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = MemoryStore::in_memory(DIM).unwrap();
    let emb = HashEmbedder::new(DIM);
    for _ in 0..n {
        let q = random_sentence(&mut rng, 2, 9);
        let a = random_sentence(&mut rng, 1, 6);
        let rendered = memroute_core::memory_store::render_turn_pair("1 Jan 2024", &q, &a);
        store
            .insert(NewMemory {
                user_id: "u",
                session_timestamp: "1 Jan 2024",
                question: &q,
                answer: &a,
                source_model: "seed",
                embedding: emb.embed_text(&rendered),
            })
            .unwrap();
    }
    (store, rng)
}

// ---------------------------------------------------------------------------
// Factorial fixture: 40 personal facts, one question each.

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ve", "ru", "zo", "ta", "ne", "pi", "qu", "sa", "do", "fe", "gi", "hu", "xa",
];

/// Distinct six-letter invented words.
pub fn invented_words(n: usize, offset: usize) -> Vec<String> {
    (offset..offset + n)
        .map(|i| {
            format!(
                "{}{}{}",
                SYLLABLES[(i / 256) % 16],
                SYLLABLES[(i / 16) % 16],
                SYLLABLES[i % 16]
            )
        })
        .collect()
}

const RELATIONS: [&str; 40] = [
    "cat", "dog", "parrot", "hamster", "tortoise", "goldfish", "rabbit", "pony", "sister", "brother", "niece",
    "nephew", "cousin", "grandmother", "grandfather", "landlord", "dentist", "plumber", "boss", "coach",
    "neighbor", "roommate", "sailboat", "bicycle", "motorbike", "guitar", "piano", "violin", "houseplant",
    "bakery", "gym", "bookclub", "podcast", "novel", "startup", "village", "mountain", "river", "island",
    "robot",
];

pub struct FactorialFixture {
    pub dataset: EvalDataset,
    pub backend: Arc<MockBackend>,
}

/// The small model answers with the gold name, confidently, when that name
/// is in the injected memories; otherwise it guesses a wrong name just as
/// confidently. The large model guesses wrong too.
pub fn factorial_fixture() -> FactorialFixture {
    let names = invented_words(40, 100);
    let mut pairs = Vec::new();
    let mut questions = Vec::new();
    let mut rules = Vec::new();
    for (i, (rel, name)) in RELATIONS.iter().zip(&names).enumerate() {
        pairs.push(TurnPair {
            session_id: format!("session_{}", i / 4 + 1),
            session_timestamp: format!("{} May 2023", i % 28 + 1),
            question: format!("Guess what, my {rel} is called {name}."),
            answer: format!("Lovely, {name} suits your {rel}."),
        });
        questions.push(QAItem {
            question_id: format!("fact-q{i:03}"),
            question: format!("What is the name of my {rel}?"),
            answer: name.clone(),
            category: if i % 2 == 0 { "single-hop" } else { "temporal" }.into(),
            evidence: Some(vec![format!("session_{}", i / 4 + 1)]),
        });
        rules.push(rule(
            Some("small-8b"),
            MatchRule {
                query_contains: Some(format!("my {rel}?")),
                context_contains: Some(name.clone()),
                ..Default::default()
            },
            name,
            -0.2,
        ));
    }
    rules.push(rule(Some("small-8b"), MatchRule::default(), "Alex", -0.3));
    rules.push(rule(
        Some("large-235b"),
        MatchRule::default(),
        "I am not sure, possibly Alex",
        -0.4,
    ));
    FactorialFixture {
        dataset: EvalDataset {
            name: "facts".into(),
            partitions: vec![Partition {
                user_id: "user-1".into(),
                pairs,
                questions,
            }],
        },
        backend: Arc::new(MockBackend::from_rules(rules).unwrap()),
    }
}

// ---------------------------------------------------------------------------
// Keyword-unique corpus: gold memories embedded without their entity.

pub struct KeywordCorpus {
    pub store: MemoryStore,
    /// (query, gold record id)
    pub queries: Vec<(String, u64)>,
}

const GOLD_TEMPLATES: [(&str, &str); 5] = [
    ("Planning a trip near {e} soon", "Enjoy it, sounds fun."),
    ("Finally booked tickets for {e} next month", "Great, have fun there."),
    ("My uncle keeps mentioning {e} lately", "Funny, he seems excited."),
    ("Heard {e} reopened after repairs", "Nice, worth checking."),
    ("Bought a poster showing {e} yesterday", "Cool, hang it up."),
];

const QUESTION_TEMPLATES: [&str; 4] = [
    "what do you know about {e}",
    "remind me what i said about {e}",
    "any notes on {e}",
    "tell me again about {e}",
];

const FILLER: [&str; 5] = [
    "Cooking dinner tonight with fresh herbs",
    "Watching rain outside while drinking tea",
    "Cleaning garage shelves this weekend",
    "Learning chess openings slowly",
    "Walking dogs along quiet streets",
];

/// `n` gold memories, each holding a unique two-word entity that its query
/// repeats, plus filler. Gold embeddings are computed with the entity
/// removed, so only the keyword channel can tell golds apart.
pub fn keyword_corpus(n: usize) -> KeywordCorpus {
    let store = MemoryStore::in_memory(DIM).unwrap();
    let emb = HashEmbedder::new(DIM);
    let words = invented_words(2 * n, 1000);
    let mut queries = Vec::new();
    let ts = "3 Jun 2024";
    for i in 0..n {
        let entity = format!("{} {}", words[2 * i], words[2 * i + 1]);
        let (q_t, a) = GOLD_TEMPLATES[i % GOLD_TEMPLATES.len()];
        let q = q_t.replace("{e}", &entity);
        let stripped = memroute_core::memory_store::render_turn_pair(ts, &q_t.replace(" {e}", ""), a);
        let id = store
            .insert(NewMemory {
                user_id: "u",
                session_timestamp: ts,
                question: &q,
                answer: a,
                source_model: "seed",
                embedding: emb.embed_text(&stripped),
            })
            .unwrap();
        let query = QUESTION_TEMPLATES[i % QUESTION_TEMPLATES.len()].replace("{e}", &entity);
        queries.push((query, id));
        let filler = FILLER[i % FILLER.len()];
        let rendered = memroute_core::memory_store::render_turn_pair(ts, filler, "Sounds relaxing.");
        store
            .insert(NewMemory {
                user_id: "u",
                session_timestamp: ts,
                question: filler,
                answer: "Sounds relaxing.",
                source_model: "seed",
                embedding: emb.embed_text(&rendered),
            })
            .unwrap();
    }
    KeywordCorpus { store, queries }
}

pub fn recall_at(hits: &[u64], gold: u64) -> f64 {
    if hits.contains(&gold) {
        1.0
    } else {
        0.0
    }
}

pub fn histogram<'a>(labels: impl Iterator<Item = &'a str>) -> HashMap<String, usize> {
    let mut h = HashMap::new();
    for l in labels {
        *h.entry(l.to_string()).or_insert(0) += 1;
    }
    h
}
