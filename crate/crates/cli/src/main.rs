//! `scholar-rag`: ingest, query, evaluate and serve a local publication corpus.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use scholar_rag::config::Config;
use scholar_rag::corpus::{parse_records, CorpusFormat};
use scholar_rag::eval::evaluate;
use scholar_rag::pipeline::{Engine, EngineError, IngestError, QueryError, QueryRequest};
use scholar_rag::selftest;
use scholar_rag::storage::DataDir;

/// Exit code for command-line usage errors, kept apart from the
/// operational codes 1-4.
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "scholar-rag",
    version,
    about = "Local retrieval-augmented collaborator search over PubMed metadata"
)]
struct Cli {
    /// TOML config file; SCHOLAR_RAG_* environment variables override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory (overrides config and environment)
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Machine-readable JSON on standard output
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a corpus export, embed new or changed records and commit
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// jsonl or pubmed-xml; inferred from the extension when omitted
        #[arg(long)]
        format: Option<CorpusFormat>,
    },
    /// Retrieve publications and recommend collaborators
    Query {
        #[arg(long = "q")]
        query: String,
        #[arg(long)]
        k: Option<usize>,
        /// Also ask the configured LLM for a written recommendation
        #[arg(long)]
        generate: bool,
    },
    /// Compare embedding retrieval with the keyword baseline by self-retrieval
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
    },
    /// Run the HTTP service
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Run the built-in invariant suite
    Selftest,
}

/// An error carrying the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(error: E) -> Self {
        Self::new(1, error)
    }
}

type Outcome = Result<(), Failure>;

fn format_for(path: &Path, explicit: Option<CorpusFormat>) -> CorpusFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("xml") => CorpusFormat::PubmedXml,
        _ => CorpusFormat::Jsonl,
    })
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = Config::load(cli.config.as_deref()).context("cannot load configuration")?;
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    Ok(cfg)
}

/// Opens the engine for a read path, mapping a missing or unloadable index to
/// exit code 2.
fn open_index(cfg: &Config) -> Result<Engine, Failure> {
    let engine = Engine::open(cfg).map_err(|e| match e {
        EngineError::Storage(_) => Failure::new(2, anyhow!(e).context("no usable index")),
        other => Failure::new(1, other),
    })?;
    if engine.snapshot().index.is_empty() {
        return Err(Failure::new(
            2,
            anyhow!(
                "no index in {}; run `scholar-rag ingest` first",
                cfg.data_dir.display()
            ),
        ));
    }
    Ok(engine)
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

async fn ingest(cli: &Cli, cfg: &Config, path: &Path, format: Option<CorpusFormat>) -> Outcome {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let engine = Engine::open(cfg)?;
    let report = engine
        .ingest_bytes(&bytes, format_for(path, format))
        .await
        .map_err(|e| match e {
            IngestError::Embedder(_) => Failure::new(2, e),
            IngestError::NoValidRecords(ref rejections) => {
                for r in rejections {
                    eprintln!("rejected {r}");
                }
                Failure::new(1, e)
            }
            other => Failure::new(1, other),
        })?;
    if cli.json {
        print_json(&report)?;
    } else {
        print!("{}", output::ingest_report(&report));
    }
    Ok(())
}

async fn query(cli: &Cli, cfg: &Config, text: &str, k: Option<usize>, generate: bool) -> Outcome {
    let engine = open_index(cfg)?;
    let req = QueryRequest {
        query: text.to_string(),
        k: k.unwrap_or(cfg.k),
        include_generation: generate,
    };
    let resp = engine.query(&req).await.map_err(|e| {
        let code = match e {
            QueryError::InvalidRequest(_) => 1,
            QueryError::Llm(_) => 3,
            QueryError::Embedder(_) => 4,
            QueryError::Internal(_) => 1,
        };
        Failure::new(code, e)
    })?;
    if cli.json {
        print_json(&resp)?;
    } else {
        print!("{}", output::query_response(&resp));
    }
    Ok(())
}

async fn eval(cli: &Cli, cfg: &Config, path: &Path, format: Option<CorpusFormat>) -> Outcome {
    let engine = open_index(cfg)?;
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let parsed = parse_records(&bytes, format_for(path, format))?;
    for r in &parsed.rejections {
        eprintln!("skipped {r}");
    }
    let report = evaluate(&parsed.records, &engine.snapshot(), engine.embedder())
        .await
        .map_err(|e| Failure::new(4, e))?;
    if cli.json {
        print_json(&report)?;
    } else {
        print!("{}", output::eval_report(&report));
    }
    Ok(())
}

async fn serve(cfg: &Config, listen: Option<String>, static_dir: Option<PathBuf>) -> Outcome {
    let mut cfg = cfg.clone();
    if let Some(listen) = listen {
        cfg.listen = listen;
    }
    if static_dir.is_some() {
        cfg.static_dir = static_dir;
    }
    let engine = Arc::new(Engine::open(&cfg)?);
    let listener = scholar_rag_service::bind(&cfg).await?;
    let addr = listener.local_addr().context("listener has no address")?;
    println!("listening on http://{addr}");
    tracing::info!(%addr, revision = engine.snapshot().store.revision(), "serving");
    scholar_rag_service::serve_on(
        listener,
        scholar_rag_service::router(engine, cfg.static_dir.clone()),
    )
    .await?;
    Ok(())
}

fn run_selftest(cli: &Cli, cfg: &Config) -> Outcome {
    let report = selftest::run(Some(&DataDir::new(&cfg.data_dir)));
    if cli.json {
        print_json(&report)?;
    } else {
        print!("{}", report.render());
    }
    match report.first_failure() {
        None => Ok(()),
        Some(check) => Err(Failure::new(1, anyhow!("{}: {}", check.name, check.detail))),
    }
}

async fn run(cli: Cli) -> Outcome {
    // selftest needs no valid config beyond the data directory
    let cfg = match (&cli.command, load_config(&cli)) {
        (_, Ok(cfg)) => cfg,
        (Command::Selftest, Err(_)) if cli.config.is_none() => {
            let mut cfg = Config::default();
            if let Some(dir) = &cli.data_dir {
                cfg.data_dir = dir.clone();
            }
            cfg
        }
        (_, Err(e)) => return Err(e.into()),
    };
    match &cli.command {
        Command::Ingest { corpus, format } => ingest(&cli, &cfg, corpus, *format).await,
        Command::Query {
            query: q,
            k,
            generate,
        } => query(&cli, &cfg, q, *k, *generate).await,
        Command::Eval { corpus, format } => eval(&cli, &cfg, corpus, *format).await,
        Command::Serve { listen, static_dir } => {
            serve(&cfg, listen.clone(), static_dir.clone()).await
        }
        Command::Selftest => run_selftest(&cli, &cfg),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
