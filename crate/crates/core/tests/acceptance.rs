//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use memroute_core::backends::{MatchRule, MockBackend};
use memroute_core::confidence::{mean_for_confidence, normalize};
use memroute_core::eval::datasets::{LOCOMO_CATEGORIES, LONGMEMEVAL_TYPES};
use memroute_core::eval::{
    allocate, bleu1, load_locomo, load_longmemeval, run_condition, standard_conditions, stratified_sample,
    token_f1, EvalConfig, EvalDataset, PairingMode,
};
use memroute_core::memory_store::StoreConfig;
use memroute_core::retrieval::{dense_search, search, sparse_search, Bm25Params, RetrievalConfig, RetrievalMode};
use memroute_core::{eff_cost, CascadeConfig, ChatBackend, HashEmbedder, MemoryStore, RouteRequest, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    check((a - b).abs() <= tol, format!("{what}: got {a}, want {b}"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn c1_confidence() -> Outcome {
    let n = |l: f64| normalize(l, -3.0).map_err(|e| e.to_string());
    close(n(-3.0)?, 0.0, 0.0, "normalize(-3)")?;
    close(n(0.0)?, 1.0, 0.0, "normalize(0)")?;
    close(n(-1.5)?, 0.5, 0.0, "normalize(-1.5)")?;
    close(n(-7.25)?, 0.0, 0.0, "below floor")?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples: Vec<f64> = (0..10_000).map(|_| rng.random_range(-10.0..=0.0)).collect();
    samples.sort_by(f64::total_cmp);
    let mut prev = -1.0;
    for l in &samples {
        let c = n(*l)?;
        check((0.0..=1.0).contains(&c), format!("c({l}) = {c} out of range"))?;
        check(c >= prev, format!("not monotone at {l}"))?;
        prev = c;
    }
    Ok("anchors exact, 10000 samples in range and monotone".into())
}

fn c2_cost() -> Outcome {
    let c = |i, o, p| eff_cost(i, o, p).map_err(|e| e.to_string());
    close(c(9600, 1400, 8.0)?, 15_200.0, 0.0, "cold small")?;
    close(c(16_000, 1500, 8.0)?, 22_000.0, 0.0, "compound")?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (i, o) = (rng.random_range(1..100_000), rng.random_range(0..10_000));
        check(c(i, o, 235.0)? / c(i, o, 8.0)? == 29.375, format!("ratio off for ({i}, {o})"))?;
    }
    Ok("15200 / 22000, ratio 29.375 exact".into())
}

fn c3_dichotomy() -> Outcome {
    let mut rates = Vec::new();
    for c0 in [0.0, 0.49, 0.50, 0.51, 1.0] {
        let l = mean_for_confidence(c0, -3.0);
        let backend = MockBackend::from_rules(vec![
            rule(Some("small-8b"), MatchRule::default(), "probe answer here", l),
            rule(Some("large-235b"), MatchRule::default(), "large answer", -0.1),
        ])
        .map_err(|e| e.to_string())?;
        let router = Router::new(
            Arc::new(MemoryStore::in_memory(DIM).unwrap()),
            Arc::new(HashEmbedder::new(DIM)),
            Arc::new(backend),
            RetrievalConfig::default(),
        );
        let mut cfg = CascadeConfig::new(vec![small(), large()]);
        cfg.memory_enabled = false;
        let mut escalated = 0;
        for i in 0..200 {
            let mut req = RouteRequest::new("u", format!("question {i}"));
            req.store_turn_pair = false;
            let out = router.route(&req, &cfg).map_err(|e| e.to_string())?;
            escalated += out.decision.escalated as usize;
        }
        rates.push(escalated * 100 / 200);
    }
    check(rates == [100, 100, 0, 0, 0], format!("escalation rates {rates:?}"))?;
    Ok(format!("escalation % {rates:?}"))
}

fn c4_factorial() -> Outcome {
    let fx = factorial_fixture();
    let backend: Arc<dyn ChatBackend> = fx.backend.clone();
    let cfg = EvalConfig {
        cascade: CascadeConfig::new(Vec::new()),
        ..Default::default()
    };
    let conds = standard_conditions(&small(), &large());
    let mut reports = std::collections::BTreeMap::new();
    for c in conds.iter().take(4) {
        let r = run_condition(c, &fx.dataset, &cfg, backend.clone(), Arc::new(HashEmbedder::new(DIM)))
            .map_err(|e| e.to_string())?;
        check(!r.incomplete, format!("{} incomplete", c.name))?;
        let share = r.routing.small_model_share.unwrap_or(0.0);
        check(share >= 95.0, format!("{}: {share}% on small", c.name))?;
        reports.insert(c.name.clone(), r);
    }
    let f1 = |n: &str| reports[n].overall.f1 / 100.0;
    let gain_memory = f1("warm-memory") - f1("cold-small");
    let gain_compound = f1("warm-compound") - f1("cold-compound");
    check(gain_memory >= 0.4, format!("warm-memory minus cold-small F1 = {gain_memory:.3}"))?;
    check(gain_compound >= 0.4, format!("warm-compound minus cold-compound F1 = {gain_compound:.3}"))?;
    let cost_ratio = reports["warm-compound"].cost.eff_cost / reports["warm-memory"].cost.eff_cost;
    check(cost_ratio < 1.1, format!("compound / memory-only EffCost = {cost_ratio:.3}"))?;
    Ok(format!(
        "F1 cold {:.1}/{:.1} warm {:.1}/{:.1}, cost ratio {cost_ratio:.3}",
        f1("cold-small") * 100.0,
        f1("cold-compound") * 100.0,
        f1("warm-memory") * 100.0,
        f1("warm-compound") * 100.0
    ))
}

fn c5_oracles() -> Outcome {
    let emb = HashEmbedder::new(DIM);
    let mut meta = ChaCha8Rng::seed_from_u64(5);
    let mut total = 0;
    for store_no in 0..50 {
        let n = meta.random_range(1..=500);
        total += n;
        let (store, mut rng) = random_store(1000 + store_no, n);
        let records = store.scan("u");
        for _ in 0..3 {
            let query = random_sentence(&mut rng, 1, 6);
            let k = rng.random_range(1..=20);
            let q = emb.embed_text(&query);
            let dense: Vec<u64> = dense_search(&store, "u", &q, k)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|h| h.record_id)
                .collect();
            check(dense == dense_oracle(&records, &q, k), format!("dense mismatch, store {store_no}"))?;
            let sparse: Vec<u64> = sparse_search(&store, "u", &query, k, Bm25Params::default())
                .iter()
                .map(|h| h.record_id)
                .collect();
            check(sparse == sparse_oracle(&records, &query, k), format!("sparse mismatch, store {store_no}"))?;
        }
    }
    Ok(format!("50 stores, {total} records, 150 queries per channel"))
}

fn c6_hybrid() -> Outcome {
    let corpus = keyword_corpus(100);
    let emb = HashEmbedder::new(DIM);
    let (mut dense_sum, mut hybrid_sum) = (0.0, 0.0);
    for (query, gold) in &corpus.queries {
        let q = emb.embed_text(query);
        let run = |mode| {
            let cfg = RetrievalConfig {
                mode,
                ..Default::default()
            };
            search(&corpus.store, "u", query, Some(&q), 5, &cfg)
                .map(|h| h.iter().map(|h| h.record_id).collect::<Vec<_>>())
                .map_err(|e| e.to_string())
        };
        dense_sum += recall_at(&run(RetrievalMode::Dense)?, *gold);
        hybrid_sum += recall_at(&run(RetrievalMode::Hybrid)?, *gold);
    }
    let n = corpus.queries.len() as f64;
    let (dense, hybrid) = (dense_sum / n, hybrid_sum / n);
    check(hybrid - dense >= 0.3, format!("recall@5 dense {dense:.2} hybrid {hybrid:.2}"))?;
    Ok(format!("recall@5 dense {dense:.2}, hybrid {hybrid:.2}"))
}

fn c7_metrics() -> Outcome {
    let tol = 1e-9;
    close(token_f1("She is single", "She is single"), 1.0, tol, "identical F1")?;
    close(token_f1("married", "single"), 0.0, tol, "disjoint F1")?;
    close(token_f1("single right now", "she is single"), 1.0 / 3.0, tol, "partial F1")?;
    close(token_f1("", ""), 1.0, tol, "both empty F1")?;
    close(token_f1("", "single"), 0.0, tol, "empty prediction F1")?;
    close(token_f1("single", ""), 0.0, tol, "empty gold F1")?;
    close(bleu1("the cat sat", "the cat sat", true), 1.0, tol, "identical BLEU")?;
    close(bleu1("the cat", "the cat sat", true), (-1.0f64).exp(), tol, "short BLEU")?;
    close(bleu1("dog", "cat", true), 0.0, tol, "disjoint BLEU")?;
    close(bleu1("", "cat", true), 0.0, tol, "empty BLEU")?;
    Ok("all hand-derived values within 1e-9".into())
}

fn c8_sampling() -> Outcome {
    let counts = LONGMEMEVAL_TYPES
        .iter()
        .zip([70, 56, 30, 133, 133, 78])
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    let alloc = allocate(&counts, 100).map_err(|e| e.to_string())?;
    let got: Vec<usize> = LONGMEMEVAL_TYPES.iter().map(|t| alloc[*t]).collect();
    check(got == [14, 11, 6, 27, 26, 16], format!("allocation {got:?}"))?;

    let items = load_longmemeval(&fixture("longmemeval_s.json")).map_err(|e| e.to_string())?;
    let draw = |seed| {
        stratified_sample(&items, 100, seed, |i| i.qa.category.as_str())
            .map(|v| v.iter().map(|i| i.qa.question_id.clone()).collect::<Vec<_>>())
            .map_err(|e| e.to_string())
    };
    check(draw(17)? == draw(17)?, "same seed gave different samples")?;
    check(draw(17)? != draw(18)?, "seed has no effect")?;
    Ok(format!("allocation {got:?}, seeded draw stable"))
}

fn c9_loaders() -> Outcome {
    let samples = load_locomo(&fixture("locomo_conv26.json")).map_err(|e| e.to_string())?;
    let s = &samples[0];
    check(s.qa.len() == 152, format!("{} QA items", s.qa.len()))?;
    let h = s.category_histogram();
    let hist: Vec<usize> = ["single-hop", "multi-hop", "open-domain", "temporal"]
        .iter()
        .map(|c| h.get(*c).copied().unwrap_or(0))
        .collect();
    check(hist == [70, 40, 12, 30], format!("LoCoMo histogram {hist:?}"))?;
    check(
        s.qa.iter().all(|q| LOCOMO_CATEGORIES.contains(&q.category.as_str())),
        "category outside label set",
    )?;
    check(s.turn_count() == 214, format!("{} turns", s.turn_count()))?;

    let items = load_longmemeval(&fixture("longmemeval_s.json")).map_err(|e| e.to_string())?;
    let ds = EvalDataset::from_longmemeval(&items, PairingMode::Pairs);
    let h = ds.category_histogram();
    let hist: Vec<usize> = LONGMEMEVAL_TYPES.iter().map(|t| h.get(*t).copied().unwrap_or(0)).collect();
    check(hist == [70, 56, 30, 133, 133, 78], format!("LongMemEval histogram {hist:?}"))?;

    let expect = [
        ("locomo_missing_question.json", "[0].qa[5].question"),
        ("locomo_missing_speaker.json", "[0].conversation.session_7[4].speaker"),
    ];
    for (file, field) in expect {
        let e = load_locomo(&fixture(file)).err().ok_or(format!("{file} loaded"))?;
        check(e.to_string().contains(field), format!("{file}: {e}"))?;
    }
    let expect = [
        ("longmemeval_missing_content.json", "[2].haystack_sessions[1][0].content"),
        ("longmemeval_bad_type.json", "[1].question_type"),
    ];
    for (file, field) in expect {
        let e = load_longmemeval(&fixture(file)).err().ok_or(format!("{file} loaded"))?;
        check(e.to_string().contains(field), format!("{file}: {e}"))?;
    }
    Ok("152 QA (70,40,12,30); 500 items (70,56,30,133,133,78); 4 corrupt files located".into())
}

// ---------------------------------------------------------------------------
// Amortization

const SISTER_QUESTION: &str = "What is my sister's name?";

fn amortization_backend() -> Arc<dyn ChatBackend> {
    Arc::new(
        MockBackend::from_rules(vec![
            rule(
                Some("small-8b"),
                MatchRule {
                    context_contains: Some("zephyrine".into()),
                    ..Default::default()
                },
                "Zephyrine",
                -0.2,
            ),
            rule(Some("small-8b"), MatchRule::default(), "I do not know", -2.5),
            rule(Some("large-235b"), MatchRule::default(), "Your sister is Zephyrine.", -0.1),
        ])
        .expect("valid script"),
    )
}

fn amortization_router(store: MemoryStore) -> Router {
    Router::new(
        Arc::new(store),
        Arc::new(HashEmbedder::new(DIM)),
        amortization_backend(),
        RetrievalConfig::default(),
    )
}

fn ask_sister(router: &Router) -> Result<memroute_core::router::RouteOutcome, String> {
    let mut req = RouteRequest::new("alice", SISTER_QUESTION);
    req.session_timestamp = Some("19 Oct 2026".into());
    router
        .route(&req, &CascadeConfig::new(vec![small(), large()]))
        .map_err(|e| e.to_string())
}

fn first_request_checks(out: &memroute_core::router::RouteOutcome) -> Result<u64, String> {
    let d = &out.decision;
    check(d.escalated, "request 1 did not escalate")?;
    check(d.chosen_model == "large-235b", format!("request 1 served by {}", d.chosen_model))?;
    d.stored_memory_id.ok_or_else(|| "request 1 stored nothing".to_string())
}

fn second_request_checks(out: &memroute_core::router::RouteOutcome, stored: u64) -> Result<(), String> {
    let d = &out.decision;
    check(!d.escalated, "request 2 escalated")?;
    check(d.chosen_model == "small-8b", format!("request 2 served by {}", d.chosen_model))?;
    check(d.injected_memory_ids.contains(&stored), "request 2 did not see the stored memory")?;
    check(token_f1(&out.response, "Zephyrine") == 1.0, format!("request 2 answered {:?}", out.response))
}

fn c10_amortization() -> Outcome {
    let router = amortization_router(MemoryStore::in_memory(DIM).unwrap());
    let first = ask_sister(&router)?;
    let stored = first_request_checks(&first)?;
    let second = ask_sister(&router)?;
    second_request_checks(&second, stored)?;
    Ok(format!(
        "request 1 cost {:.0} via large, request 2 cost {:.0} via small",
        first.decision.eff_cost, second.decision.eff_cost
    ))
}

const CHILD_ENV: &str = "MEMROUTE_ACCEPTANCE_CHILD_STORE";

fn open_store(dir: &Path) -> Result<MemoryStore, String> {
    MemoryStore::open(&StoreConfig {
        embedding_dim: DIM,
        data_path: Some(dir.to_path_buf()),
    })
    .map_err(|e| e.to_string())
}

/// Child half of criterion 11: serve request 1 and abort without any
/// cleanup.
fn child_first_request(dir: &Path) -> ! {
    let router = amortization_router(open_store(dir).expect("store opens"));
    let out = ask_sister(&router).expect("request 1 routes");
    let id = first_request_checks(&out).expect("request 1 as expected");
    println!("stored {id}");
    std::process::abort();
}

fn c11_persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let status = Command::new(std::env::current_exe().map_err(|e| e.to_string())?)
        .env(CHILD_ENV, dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    check(!status.status.success(), "child was expected to abort")?;
    let stdout = String::from_utf8_lossy(&status.stdout);
    let stored: u64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("stored "))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| format!("child did not report a stored id: {stdout}"))?;

    let store = open_store(dir.path())?;
    check(store.count("alice") == 1, format!("{} memories after restart", store.count("alice")))?;
    let router = amortization_router(store);
    let second = ask_sister(&router)?;
    second_request_checks(&second, stored)?;
    Ok("aborted process after request 1; reopened store served request 2 on small".into())
}

fn main() {
    if let Some(dir) = std::env::var_os(CHILD_ENV) {
        child_first_request(Path::new(&dir));
    }
    type Criterion = (u32, &'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "confidence normalization", Duration::from_secs(1), c1_confidence),
        (2, "effective cost formula", Duration::from_secs(1), c2_cost),
        (3, "routing dichotomy at tau 0.5", Duration::from_secs(10), c3_dichotomy),
        (4, "factorial memory x routing grid", Duration::from_secs(30), c4_factorial),
        (5, "retrieval oracle equivalence", Duration::from_secs(60), c5_oracles),
        (6, "hybrid beats dense on keyword corpus", Duration::from_secs(60), c6_hybrid),
        (7, "answer metrics", Duration::from_secs(60), c7_metrics),
        (8, "stratified sampling", Duration::from_secs(60), c8_sampling),
        (9, "dataset loaders", Duration::from_secs(60), c9_loaders),
        (10, "amortization loop", Duration::from_secs(5), c10_amortization),
        (11, "persistence across restart", Duration::from_secs(60), c11_persistence),
    ];
    let mut failed = 0;
    for (n, name, limit, f) in criteria {
        let start = Instant::now();
        let result = f();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:?}, limit {limit:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} ({} ms)", elapsed.as_millis()),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why} ({} ms)", elapsed.as_millis());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
