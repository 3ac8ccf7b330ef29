//! Command-line verbs.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use memroute_core::eval::report::{render_comparison, render_summary, save_run, load_reports};
use memroute_core::eval::{
    compare_retrieval, load_locomo, load_longmemeval, run_condition, standard_conditions, EvalConfig, EvalDataset,
    EvalError, EvalReport, PairingMode,
};
use memroute_core::retrieval::FusionStrategy;
use memroute_core::{ChatBackend, Embedder};

use crate::config::GatewayConfig;
use crate::server::{app, AppState};
use crate::{build_backend, build_embedder, build_router, build_state, open_store, GatewayError};

#[derive(Debug, Parser)]
#[command(name = "memroute", version, about = "Memory-augmented model routing gateway")]
pub struct Cli {
    /// TOML config file; MEMROUTE__* variables override it.
    #[arg(long, global = true, env = "MEMROUTE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Serve every model from this scripted mock (JSON) instead of HTTP.
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Bulk-load a conversation file into memory partitions.
    Ingest(IngestArgs),
    /// Query a memory partition.
    Search {
        #[arg(long)]
        user: String,
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: Option<usize>,
        /// dense, sparse, hybrid, or a fusion name (reciprocal_rank, weighted, bm25_dominant).
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Run benchmark conditions.
    Eval {
        #[command(subcommand)]
        dataset: EvalDatasetArg,
    },
    /// Re-render a saved run.
    Report {
        /// run.json written by `eval --out`.
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Locomo,
    Longmemeval,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Pairing {
    Pairs,
    PerTurn,
}

impl From<Pairing> for PairingMode {
    fn from(p: Pairing) -> Self {
        match p {
            Pairing::Pairs => PairingMode::Pairs,
            Pairing::PerTurn => PairingMode::PerTurn,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long, value_enum, default_value = "locomo")]
    pub format: Format,
    /// Partition to load into; defaults to the sample or question id.
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long, value_enum, default_value = "pairs")]
    pub pairing: Pairing,
}

#[derive(Debug, Subcommand)]
pub enum EvalDatasetArg {
    Locomo(EvalArgs),
    Longmemeval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Condition name; repeatable. Defaults to all six.
    #[arg(long = "condition")]
    pub conditions: Vec<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stratified sample of this many questions.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, value_enum, default_value = "pairs")]
    pub pairing: Pairing,
    /// Also compare dense-only and hybrid retrieval on this condition.
    #[arg(long)]
    pub compare_retrieval: Option<String>,
    /// Use BLEU-1 without the brevity penalty.
    #[arg(long)]
    pub no_brevity_penalty: bool,
    /// Directory for run.json, per-condition JSONL and summary.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), GatewayError> {
    let mut cfg = GatewayConfig::load_unvalidated(cli.config.as_deref())?;
    if let Some(script) = cli.mock_script {
        cfg.mock_script = Some(script);
    }
    if let Command::Serve { listen: Some(l) } = &cli.command {
        cfg.listen = l.clone();
    }
    cfg.validate()?;
    match cli.command {
        Command::Serve { .. } => serve(&cfg),
        Command::Ingest(args) => ingest(&cfg, &args),
        Command::Search {
            user,
            query,
            k,
            strategy,
        } => search(&cfg, &user, &query, k, strategy.as_deref()),
        Command::Eval { dataset } => match dataset {
            EvalDatasetArg::Locomo(a) => {
                let samples = load_locomo(&a.data).map_err(|e| GatewayError::Dataset(e.to_string()))?;
                let turns: usize = samples.iter().map(|s| s.turn_count()).sum();
                let ds = EvalDataset::from_locomo(&samples, a.pairing.into());
                info!("{} turns, {} stored pairs, {} questions", turns, ds.pair_count(), ds.question_count());
                eval(&cfg, ds, &a)
            }
            EvalDatasetArg::Longmemeval(a) => {
                let items = load_longmemeval(&a.data).map_err(|e| GatewayError::Dataset(e.to_string()))?;
                eval(&cfg, EvalDataset::from_longmemeval(&items, a.pairing.into()), &a)
            }
        },
        Command::Report { path } => {
            let reports = load_reports(&path).map_err(|e| GatewayError::Dataset(format!("{}: {e}", path.display())))?;
            print!("{}", render_summary(&reports));
            Ok(())
        }
    }
}

fn serve(cfg: &GatewayConfig) -> Result<(), GatewayError> {
    let backend = build_backend(cfg)?;
    let embedder = build_embedder(cfg);
    let state = Arc::new(build_state(cfg, backend, embedder)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| GatewayError::Other(e.to_string()))?;
    let listen = cfg.listen.clone();
    let served = runtime.block_on(serve_until_signal(Arc::clone(&state), &listen));
    drop(runtime);
    state
        .ledger
        .flush()
        .map_err(|e| GatewayError::Store(format!("flushing ledger: {e}")))?;
    served
}

async fn serve_until_signal(state: Arc<AppState>, listen: &str) -> Result<(), GatewayError> {
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| GatewayError::Other(format!("binding {listen}: {e}")))?;
    info!("listening on {listen}");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            info!("shutting down");
        })
        .await
        .map_err(|e| GatewayError::Other(e.to_string()))
}

fn require_store(cfg: &GatewayConfig) -> Result<(), GatewayError> {
    if cfg.store_path.is_none() {
        return Err(GatewayError::Config(crate::config::ConfigError::Invalid {
            field: "store_path".into(),
            reason: "required for this command".into(),
        }));
    }
    Ok(())
}

fn ingest(cfg: &GatewayConfig, args: &IngestArgs) -> Result<(), GatewayError> {
    require_store(cfg)?;
    let ds = match args.format {
        Format::Locomo => {
            let samples = load_locomo(&args.file).map_err(|e| GatewayError::Dataset(e.to_string()))?;
            EvalDataset::from_locomo(&samples, args.pairing.into())
        }
        Format::Longmemeval => {
            let items = load_longmemeval(&args.file).map_err(|e| GatewayError::Dataset(e.to_string()))?;
            EvalDataset::from_longmemeval(&items, args.pairing.into())
        }
    };
    let embedder = build_embedder(cfg);
    let store = open_store(cfg)?;
    let mut total = 0;
    for p in &ds.partitions {
        let user = args.user.as_deref().unwrap_or(&p.user_id);
        for pair in &p.pairs {
            let embedding = embedder
                .embed(&pair.rendered())
                .map_err(|e| GatewayError::Backend(e.to_string()))?;
            store
                .insert(memroute_core::memory_store::NewMemory {
                    user_id: user,
                    session_timestamp: &pair.session_timestamp,
                    question: &pair.question,
                    answer: &pair.answer,
                    source_model: "ingest",
                    embedding,
                })
                .map_err(|e| GatewayError::Store(e.to_string()))?;
            total += 1;
        }
        println!("{user}: {} pairs", p.pairs.len());
    }
    println!("ingested {total} turn-pairs");
    Ok(())
}

fn search(
    cfg: &GatewayConfig,
    user: &str,
    query: &str,
    k: Option<usize>,
    strategy: Option<&str>,
) -> Result<(), GatewayError> {
    let store = open_store(cfg)?;
    let embedder = build_embedder(cfg);
    let backend: Arc<dyn ChatBackend> = Arc::new(memroute_core::MockBackend::from_rules(Vec::new()).expect("empty script"));
    let router = build_router(cfg, store, backend, Arc::clone(&embedder));
    let mut rcfg = cfg.retrieval();
    if let Some(s) = strategy {
        if let Ok(mode) = s.parse() {
            rcfg.mode = mode;
        } else {
            rcfg.mode = memroute_core::RetrievalMode::Hybrid;
            rcfg.fusion.strategy = s.parse().map_err(|_| {
                GatewayError::Config(crate::config::ConfigError::Invalid {
                    field: "--strategy".into(),
                    reason: format!("unknown strategy {s:?}"),
                })
            })?;
        }
    }
    let (hits, note) = router.retrieve(user, query, k.unwrap_or(cfg.top_k), &rcfg);
    if let Some(n) = note {
        warn!("{n}");
        if hits.is_empty() {
            return Err(GatewayError::Backend(n));
        }
    }
    for (h, r) in hits {
        println!(
            "{:>6} {:>9.4} {:>8} {:>8}  {}",
            h.record_id,
            h.fused_score,
            h.dense_rank.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
            h.sparse_rank.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
            r.rendered_text
        );
    }
    Ok(())
}

fn eval_error(e: EvalError) -> GatewayError {
    match e {
        EvalError::Condition { .. } => GatewayError::Config(crate::config::ConfigError::Load(e.to_string())),
        EvalError::Preload { .. } => GatewayError::Backend(e.to_string()),
        EvalError::Pool(m) => GatewayError::Other(m),
    }
}

fn all_failed(r: &EvalReport) -> bool {
    r.questions > 0 && r.failed == r.questions
}

fn eval(cfg: &GatewayConfig, dataset: EvalDataset, args: &EvalArgs) -> Result<(), GatewayError> {
    let dataset = match args.sample {
        Some(n) => dataset
            .sample(n, args.seed)
            .map_err(|e| GatewayError::Dataset(e.to_string()))?,
        None => dataset,
    };
    if cfg.models.len() < 2 {
        return Err(GatewayError::Config(crate::config::ConfigError::Invalid {
            field: "models".into(),
            reason: "evaluation needs a small and a large model".into(),
        }));
    }
    let mut ecfg = EvalConfig {
        cascade: cfg.cascade(),
        retrieval: cfg.retrieval(),
        parallelism: cfg.eval_parallelism,
        brevity_penalty: !args.no_brevity_penalty,
    };
    if let Some(t) = args.tau {
        ecfg.cascade.tau = t;
    }
    if let Some(k) = args.k {
        ecfg.cascade.top_k = k;
    }
    if let Some(f) = &args.fusion {
        ecfg.retrieval.fusion.strategy = f.parse::<FusionStrategy>().map_err(|e| {
            GatewayError::Config(crate::config::ConfigError::Invalid {
                field: "--fusion".into(),
                reason: e.to_string(),
            })
        })?;
    }
    let small = &cfg.models[0];
    let large = cfg.models.last().expect("two models");
    let all = standard_conditions(small, large);
    let chosen: Vec<_> = if args.conditions.is_empty() {
        all.clone()
    } else {
        args.conditions
            .iter()
            .map(|name| {
                all.iter().find(|c| &c.name == name).cloned().ok_or_else(|| {
                    GatewayError::Config(crate::config::ConfigError::Invalid {
                        field: "--condition".into(),
                        reason: format!(
                            "unknown condition {name:?}; expected one of {}",
                            all.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ")
                        ),
                    })
                })
            })
            .collect::<Result<_, _>>()?
    };

    let backend = build_backend(cfg)?;
    let embedder: Arc<dyn Embedder> = build_embedder(cfg);
    let mut reports = Vec::new();
    for c in &chosen {
        info!("running {}", c.name);
        let r = run_condition(c, &dataset, &ecfg, Arc::clone(&backend), Arc::clone(&embedder)).map_err(eval_error)?;
        if r.incomplete {
            warn!("{}: {} of {} questions failed", c.name, r.failed, r.questions);
        }
        reports.push(r);
    }
    print!("{}", render_summary(&reports));

    if let Some(name) = &args.compare_retrieval {
        let base = all.iter().find(|c| &c.name == name).ok_or_else(|| {
            GatewayError::Config(crate::config::ConfigError::Invalid {
                field: "--compare-retrieval".into(),
                reason: format!("unknown condition {name:?}"),
            })
        })?;
        let cmp = compare_retrieval(base, &dataset, &ecfg, Arc::clone(&backend), Arc::clone(&embedder))
            .map_err(eval_error)?;
        println!();
        print!("{}", render_comparison(&cmp));
        reports.push(cmp.base);
        reports.push(cmp.other);
    }

    if let Some(dir) = &args.out {
        save_run(dir, &reports).map_err(|e| GatewayError::Other(format!("{}: {e}", dir.display())))?;
        println!("\nwrote {}", dir.join("run.json").display());
    }
    if let Some(r) = reports.iter().find(|r| all_failed(r)) {
        let why = r
            .records
            .iter()
            .find_map(|x| x.error.clone())
            .unwrap_or_default();
        return Err(GatewayError::Backend(format!("every question of {} failed: {why}", r.condition.name)));
    }
    Ok(())
}
