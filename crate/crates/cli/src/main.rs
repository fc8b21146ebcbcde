mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use cam_core::bench;
use cam_core::config::EngineConfig;
use cam_core::corpus::{self, Chunk};
use cam_core::error::{CamError, ConfigError, IngestError, ProviderError, SnapshotError};
use cam_core::hierarchy::MemoryHierarchy;
use cam_core::persistence;
use cam_core::providers::{Embedder, LanguageModel, OpenAiClient, StubEmbedder, StubLanguageModel};
use cam_core::retrieval::{self, RetrievalParams};
use cam_core::synthetic;
use clap::{Parser, Subcommand};
use serde_json::json;

use settings::{check_compatible, CommonArgs, Settings};

#[derive(Debug, Parser)]
#[command(name = "cam", version, about = "Incremental hierarchical memory over text chunks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Chunk documents and integrate them batch by batch.
    Ingest {
        /// A `.jsonl` file of `{"doc_id", "text"}` records, a text file, or a directory of either.
        #[arg(long)]
        input: PathBuf,
        /// Snapshot to extend instead of starting from an empty memory.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Where to write the resulting snapshot.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "batch-size", default_value_t = 50)]
        batch_size: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Answer a question from a snapshot.
    Query {
        query: String,
        #[arg(long)]
        snapshot: PathBuf,
        /// Print the answer together with the retrieval trace as JSON.
        #[arg(long)]
        explain: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Per-level structure counts of a snapshot, as JSON.
    Stats {
        #[arg(long)]
        snapshot: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Batch-size scaling run over a generated corpus, as CSV. Always uses stub providers.
    Bench {
        #[arg(long, default_value_t = 2000)]
        chunks: usize,
        #[arg(long = "batch-sizes", value_delimiter = ',', default_value = "1,50,200")]
        batch_sizes: Vec<usize>,
        /// Chunks per generated document.
        #[arg(long = "doc-len", default_value_t = 50)]
        doc_len: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Verify a snapshot and optionally rewrite it in canonical form.
    Snapshot {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

enum Failure {
    Config(String),
    EmptyMemory,
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::EmptyMemory => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Other(m) => f.write_str(m),
            Failure::EmptyMemory => f.write_str("empty memory: the snapshot holds no nodes"),
        }
    }
}

impl From<CamError> for Failure {
    fn from(e: CamError) -> Self {
        match e {
            CamError::EmptyMemory => Failure::EmptyMemory,
            CamError::Config(_) | CamError::Provider(ProviderError::Config(_)) => Failure::Config(e.to_string()),
            CamError::Ingest(IngestError::ChunkSizeTooSmall(_)) => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<SnapshotError> for Failure {
    fn from(e: SnapshotError) -> Self {
        Failure::Other(e.to_string())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        CamError::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type Providers = (Arc<dyn Embedder>, Arc<dyn LanguageModel>);

fn providers(settings: &Settings, stub: bool) -> Result<Providers, Failure> {
    if stub {
        let e = StubEmbedder::default();
        let m = StubLanguageModel::new(e.clone(), settings.engine.tau_sel);
        return Ok((Arc::new(e), Arc::new(m)));
    }
    let client = Arc::new(OpenAiClient::from_env(settings.provider.clone()).map_err(CamError::from)?);
    Ok((client.clone(), client))
}

fn load(path: &Path) -> Result<MemoryHierarchy, Failure> {
    persistence::load(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Other(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn ingest(
    input: &Path,
    snapshot: Option<&Path>,
    out: Option<&Path>,
    batch_size: usize,
    common: &CommonArgs,
) -> Result<(), Failure> {
    if batch_size == 0 {
        return Err(Failure::Config("invalid configuration: batch_size must be a positive integer".into()));
    }
    let stored = snapshot.map(load).transpose()?;
    let settings = common.resolve(stored.as_ref().map_or(&EngineConfig::default(), |h| h.config()))?;
    let mut h = match stored {
        Some(h) => {
            check_compatible(h.config(), &settings.engine)?;
            h
        }
        None => MemoryHierarchy::new(settings.engine.clone())?,
    };
    let (embedder, llm) = providers(&settings, common.stub_providers)?;

    let docs = corpus::load_documents(input)?;
    let mut chunks: Vec<Chunk> = Vec::new();
    for d in &docs {
        chunks.extend(corpus::split_document(d, settings.engine.chunk_size)?);
    }
    let mut reports = Vec::new();
    for batch in corpus::make_batches(chunks, batch_size) {
        reports.push(h.integrate_batch(&batch, embedder.as_ref(), llm.as_ref())?);
    }
    if let Some(out) = out {
        persistence::save(&h, out)?;
    }
    print_json(&json!({
        "documents": docs.len(),
        "batches": reports,
        "depth": h.depth(),
        "node_count": h.node_count(),
        "snapshot": out.map(|p| p.display().to_string()),
    }))
}

fn query(q: &str, snapshot: &Path, explain: bool, common: &CommonArgs) -> Result<(), Failure> {
    let h = load(snapshot)?;
    let settings = common.resolve(h.config())?;
    if h.is_empty() {
        return Err(Failure::EmptyMemory);
    }
    let (embedder, llm) = providers(&settings, common.stub_providers)?;
    let params = RetrievalParams::from(&settings.engine);
    let (answer, trace) = retrieval::respond(q, &h, embedder.as_ref(), llm.as_ref(), params)?;
    if explain {
        print_json(&json!({ "answer": answer, "trace": trace }))
    } else {
        println!("{answer}");
        Ok(())
    }
}

fn stats_json(h: &MemoryHierarchy) -> serde_json::Value {
    let levels: Vec<_> = h
        .levels()
        .iter()
        .map(|l| {
            let replica_counts: Vec<usize> = l.nodes.keys().map(|v| l.replicas.replicas_of(*v).len()).collect();
            let overlapping = l
                .nodes
                .keys()
                .filter(|v| {
                    let labels: std::collections::BTreeSet<_> =
                        l.replicas.replicas_of(**v).iter().filter_map(|r| l.replicas.labels.get(&r.id)).collect();
                    labels.len() > 1
                })
                .count();
            json!({
                "level": l.index(),
                "nodes": l.graph.node_count(),
                "edges": l.graph.edge_count(),
                "replicas": replica_counts.iter().sum::<usize>(),
                "replica_edges": l.replicas.edge_count(),
                "clusters": l.registry.cluster_count(),
                "overlapping_nodes": overlapping,
            })
        })
        .collect();
    json!({
        "format_version": persistence::FORMAT_VERSION,
        "depth": h.depth(),
        "node_count": h.node_count(),
        "embedding_dim": h.embedding_dim(),
        "config": h.config(),
        "levels": levels,
    })
}

fn bench_cmd(total: usize, batch_sizes: &[usize], doc_len: usize, common: &CommonArgs) -> Result<(), Failure> {
    let settings = common.resolve(&EngineConfig::default())?;
    if batch_sizes.is_empty() || batch_sizes.contains(&0) || doc_len == 0 {
        return Err(Failure::Config("invalid configuration: batch sizes and doc-len must be positive".into()));
    }
    let (embedder, llm) = providers(&settings, true)?;
    let chunks = synthetic::bench_chunks(total, doc_len, common.seed);
    let rows = bench::run(&chunks, batch_sizes, &settings.engine, embedder.as_ref(), llm.as_ref())?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", bench::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { input, snapshot, out, batch_size, common } => {
            ingest(&input, snapshot.as_deref(), out.as_deref(), batch_size, &common)
        }
        Command::Query { query: q, snapshot, explain, common } => query(&q, &snapshot, explain, &common),
        Command::Stats { snapshot, common } => {
            common.resolve(&EngineConfig::default())?;
            print_json(&stats_json(&load(&snapshot)?))
        }
        Command::Bench { chunks, batch_sizes, doc_len, common } => bench_cmd(chunks, &batch_sizes, doc_len, &common),
        Command::Snapshot { snapshot, out, common } => {
            common.resolve(&EngineConfig::default())?;
            let h = load(&snapshot)?;
            if let Some(out) = &out {
                persistence::save(&h, out)?;
            }
            print_json(&json!({
                "snapshot": snapshot.display().to_string(),
                "verified": true,
                "format_version": persistence::FORMAT_VERSION,
                "depth": h.depth(),
                "node_count": h.node_count(),
                "rewritten_to": out.map(|p| p.display().to_string()),
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cam: {f}");
            ExitCode::from(f.code())
        }
    }
}
