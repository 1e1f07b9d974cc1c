//! The end-to-end workflow shared by the CLI and the HTTP service:
//! embed query -> exact top-K -> author aggregation -> prompt -> (optional)
//! generation, plus ingest with atomic commit.

use std::sync::{Arc, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::config::{Config, MAX_K};
use crate::corpus::{
    parse_records, validate_pmid, CorpusFormat, CorpusStore, ParseError, PublicationRecord,
    RecordError, Rejection,
};
use crate::embedding::{document_text, embed_query, Embedder, EmbeddingError};
use crate::index::{IndexError, ScoredDocument, VectorIndex};
use crate::rag::{build_prompt, PromptError, PromptTemplate};
use crate::recommend::{
    aggregate_collaborators, CollaboratorRecommendation, GenerationResult, LlmClient, LlmError,
};
use crate::storage::{DataDir, StorageError};

pub const DEFAULT_MAX_COLLABORATORS: usize = 10;

/// A committed corpus with its index. Immutable once published.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub store: CorpusStore,
    pub index: VectorIndex,
}

impl Snapshot {
    pub fn empty(dim: usize) -> Self {
        Self {
            store: CorpusStore::new(),
            index: VectorIndex::new(dim),
        }
    }

    /// Pairs each hit with its record, in hit order.
    pub fn resolve<'a>(
        &'a self,
        hits: &[ScoredDocument],
    ) -> Vec<(ScoredDocument, &'a PublicationRecord)> {
        hits.iter()
            .filter_map(|h| self.store.get(&h.pmid).map(|r| (h.clone(), r)))
            .collect()
    }
}

fn default_k() -> usize {
    crate::config::DEFAULT_K
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub query: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub include_generation: bool,
}

impl QueryRequest {
    pub fn new(query: impl Into<String>, k: usize) -> Self {
        Self {
            query: query.into(),
            k,
            include_generation: false,
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.query.trim().is_empty() {
            return Err(QueryError::InvalidRequest("query is empty".into()));
        }
        if !(1..=MAX_K).contains(&self.k) {
            return Err(QueryError::InvalidRequest(format!(
                "k must be in 1..={MAX_K}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDocument {
    pub rank: usize,
    pub pmid: String,
    pub score: f64,
    pub title: String,
    pub year: Option<u16>,
    pub authors: Vec<String>,
    pub keywords: Vec<String>,
}

/// Wall-clock milliseconds per stage. Stages are measured back to back, so
/// they add up to `total_ms` up to clock resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub embed_ms: f64,
    pub retrieve_ms: f64,
    pub aggregate_ms: f64,
    pub prompt_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate_ms: Option<f64>,
    pub total_ms: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.embed_ms
            + self.retrieve_ms
            + self.aggregate_ms
            + self.prompt_ms
            + self.generate_ms.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub query: String,
    pub k: usize,
    pub corpus_revision: u64,
    pub documents: Vec<RetrievedDocument>,
    pub collaborators: Vec<CollaboratorRecommendation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationResult>,
    /// Hash of the rendered prompt; `None` only if the prompt could not be
    /// built within budget and generation was not requested.
    pub prompt_hash: Option<String>,
    pub prompt_truncated: bool,
    pub template_hash: String,
    pub timings: StageTimings,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedder failed: {0}")]
    Embedder(EmbeddingError),
    #[error("generation failed: {0}")]
    Llm(LlmError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl QueryError {
    /// Pipeline stage that failed, for error reporting.
    pub fn stage(&self) -> &'static str {
        match self {
            Self::InvalidRequest(_) => "request",
            Self::Embedder(_) => "embedder",
            Self::Llm(_) => "llm",
            Self::Internal(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub inserted: usize,
    pub replaced: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
    /// Records whose vectors were (re)computed.
    pub embedded: usize,
    pub revision: u64,
    pub index_count: usize,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot parse corpus: {0}")]
    Parse(#[from] ParseError),
    /// The input held no valid record; nothing was committed.
    #[error("no valid records ({} rejected)", .0.len())]
    NoValidRecords(Vec<Rejection>),
    #[error("embedder failed: {0}")]
    Embedder(EmbeddingError),
    #[error("index update failed: {0}")]
    Index(#[from] IndexError),
    #[error("commit failed: {0}")]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentState {
    Up,
    Down,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// "ok" when every enabled component answers, otherwise "degraded".
    pub status: String,
    pub corpus_revision: u64,
    pub index_count: usize,
    pub embedder: ComponentState,
    pub llm: ComponentState,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("stored index has dim {stored} but the embedder produces {configured}")]
    DimMismatch { stored: usize, configured: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuerySettings {
    /// K used when a request does not name one.
    pub default_k: usize,
    pub budget_chars: usize,
    pub max_collaborators: usize,
}

impl Default for QuerySettings {
    fn default() -> Self {
        Self {
            default_k: crate::config::DEFAULT_K,
            budget_chars: crate::rag::DEFAULT_BUDGET_CHARS,
            max_collaborators: DEFAULT_MAX_COLLABORATORS,
        }
    }
}

/// Owns the committed snapshot and the backends. Queries read the current
/// snapshot without blocking; ingest holds a writer lock, builds the next
/// snapshot on the side, commits it to disk and only then publishes it.
pub struct Engine {
    embedder: Arc<dyn Embedder>,
    llm: Option<LlmClient>,
    template: PromptTemplate,
    settings: QuerySettings,
    data_dir: Option<DataDir>,
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

impl Engine {
    /// Builds the engine described by `cfg`, loading any committed state from
    /// its data directory.
    pub fn open(cfg: &Config) -> Result<Self, EngineError> {
        cfg.validate()?;
        let embedder = cfg.embedder.build()?;
        let llm = if cfg.llm.enabled {
            Some(LlmClient::new(cfg.llm.clone())?)
        } else {
            None
        };
        let template = match &cfg.template_path {
            Some(path) => PromptTemplate::from_file(path)?,
            None => PromptTemplate::default(),
        };
        let settings = QuerySettings {
            default_k: cfg.k,
            budget_chars: cfg.budget_chars,
            ..QuerySettings::default()
        };
        Self::with_data_dir(
            embedder,
            llm,
            template,
            settings,
            DataDir::new(&cfg.data_dir),
        )
    }

    pub fn with_data_dir(
        embedder: Arc<dyn Embedder>,
        llm: Option<LlmClient>,
        template: PromptTemplate,
        settings: QuerySettings,
        data_dir: DataDir,
    ) -> Result<Self, EngineError> {
        let snapshot = match data_dir.load()? {
            Some((store, index)) => {
                if index.dim() != embedder.dim() {
                    return Err(EngineError::DimMismatch {
                        stored: index.dim(),
                        configured: embedder.dim(),
                    });
                }
                Snapshot { store, index }
            }
            None => Snapshot::empty(embedder.dim()),
        };
        let mut engine = Self::in_memory(embedder, llm, template, settings);
        engine.data_dir = Some(data_dir);
        engine.current = RwLock::new(Arc::new(snapshot));
        Ok(engine)
    }

    /// An engine that never touches disk.
    pub fn in_memory(
        embedder: Arc<dyn Embedder>,
        llm: Option<LlmClient>,
        template: PromptTemplate,
        settings: QuerySettings,
    ) -> Self {
        let dim = embedder.dim();
        Self {
            embedder,
            llm,
            template,
            settings,
            data_dir: None,
            current: RwLock::new(Arc::new(Snapshot::empty(dim))),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock poisoned").clone()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn settings(&self) -> &QuerySettings {
        &self.settings
    }

    pub fn llm_enabled(&self) -> bool {
        self.llm.is_some()
    }

    pub async fn query(&self, req: &QueryRequest) -> Result<QueryResponse, QueryError> {
        req.validate()?;
        let snapshot = self.snapshot();
        let started = Instant::now();
        let mut lap = started;
        let mut split = || {
            let now = Instant::now();
            let ms = (now - lap).as_secs_f64() * 1e3;
            lap = now;
            ms
        };
        let mut timings = StageTimings::default();

        let q = embed_query(&req.query, self.embedder.as_ref())
            .await
            .map_err(|e| match e {
                EmbeddingError::Degenerate(why) => {
                    QueryError::InvalidRequest(format!("query cannot be embedded: {why}"))
                }
                other => QueryError::Embedder(other),
            })?;
        timings.embed_ms = split();

        let hits = snapshot
            .index
            .top_k(&q, req.k)
            .map_err(|e| QueryError::Internal(e.to_string()))?;
        let ranked = snapshot.resolve(&hits);
        if ranked.len() != hits.len() {
            return Err(QueryError::Internal("index and corpus disagree".into()));
        }
        timings.retrieve_ms = split();

        let collaborators = aggregate_collaborators(&ranked, self.settings.max_collaborators);
        timings.aggregate_ms = split();

        let prompt = build_prompt(
            &req.query,
            &ranked,
            self.settings.budget_chars,
            &self.template,
        );
        timings.prompt_ms = split();

        let mut generation = None;
        if req.include_generation {
            let prompt = prompt
                .as_ref()
                .map_err(|e| QueryError::Internal(format!("prompt: {e}")))?;
            let llm = self
                .llm
                .as_ref()
                .ok_or(QueryError::Llm(LlmError::Disabled))?;
            generation = Some(llm.generate(prompt).await.map_err(QueryError::Llm)?);
            timings.generate_ms = Some(split());
        }
        timings.total_ms = (lap - started).as_secs_f64() * 1e3;

        let documents = ranked
            .iter()
            .map(|(hit, r)| RetrievedDocument {
                rank: hit.rank,
                pmid: hit.pmid.clone(),
                score: hit.score,
                title: r.title.clone(),
                year: r.year,
                authors: r.authors.iter().map(|a| a.display_name.clone()).collect(),
                keywords: r.keywords.clone(),
            })
            .collect();
        let (prompt_hash, prompt_truncated) = match &prompt {
            Ok(p) => (Some(p.prompt_hash()), p.truncated),
            Err(_) => (None, false),
        };
        Ok(QueryResponse {
            query: req.query.clone(),
            k: req.k,
            corpus_revision: snapshot.store.revision(),
            documents,
            collaborators,
            generation,
            prompt_hash,
            prompt_truncated,
            template_hash: self.template.hash().to_string(),
            timings,
        })
    }

    /// Parses and ingests a corpus export. Rejected entries are reported,
    /// valid ones are committed.
    pub async fn ingest_bytes(
        &self,
        input: &[u8],
        format: CorpusFormat,
    ) -> Result<IngestReport, IngestError> {
        let parsed = parse_records(input, format)?;
        self.ingest(parsed.records, parsed.rejections).await
    }

    /// Upserts `records`, embedding only new or changed documents, and
    /// publishes the result atomically. On any failure the previous
    /// snapshot stays current, in memory and on disk.
    pub async fn ingest(
        &self,
        records: Vec<PublicationRecord>,
        rejections: Vec<Rejection>,
    ) -> Result<IngestReport, IngestError> {
        if records.is_empty() {
            return Err(IngestError::NoValidRecords(rejections));
        }
        let _guard = self.writer.lock().await;
        let base = self.snapshot();

        let mut latest: std::collections::BTreeMap<&str, &PublicationRecord> = Default::default();
        for r in &records {
            latest.insert(&r.pmid, r);
        }
        let stale: Vec<(String, String)> = latest
            .iter()
            .filter_map(|(pmid, r)| {
                let text = document_text(r);
                let unchanged = base.index.contains(pmid)
                    && base
                        .store
                        .get(pmid)
                        .is_some_and(|old| document_text(old) == text);
                (!unchanged).then(|| (pmid.to_string(), text))
            })
            .collect();
        let texts: Vec<String> = stale.iter().map(|(_, t)| t.clone()).collect();
        let vectors = if texts.is_empty() {
            Vec::new()
        } else {
            self.embedder
                .embed_texts(&texts)
                .await
                .map_err(IngestError::Embedder)?
        };

        let mut index = base.index.clone();
        for ((pmid, _), vector) in stale.iter().zip(vectors) {
            index.add(pmid, vector)?;
        }
        let mut store = base.store.clone();
        let upsert = store.upsert_records(records);

        if let Some(dir) = &self.data_dir {
            dir.commit(&store, &index)?;
        }
        let report = IngestReport {
            inserted: upsert.inserted,
            replaced: upsert.replaced,
            rejected: rejections.len(),
            rejections,
            embedded: stale.len(),
            revision: upsert.revision,
            index_count: index.len(),
        };
        *self.current.write().expect("snapshot lock poisoned") =
            Arc::new(Snapshot { store, index });
        Ok(report)
    }

    pub fn document(&self, pmid: &str) -> Result<Option<PublicationRecord>, RecordError> {
        validate_pmid(pmid)?;
        Ok(self.snapshot().store.get(pmid).cloned())
    }

    pub async fn health(&self) -> Health {
        let snapshot = self.snapshot();
        let (embedder_up, llm_up) = match &self.llm {
            Some(llm) => {
                let (e, l) = tokio::join!(self.embedder.probe(), llm.probe());
                (e, Some(l))
            }
            None => (self.embedder.probe().await, None),
        };
        let state = |up: bool| {
            if up {
                ComponentState::Up
            } else {
                ComponentState::Down
            }
        };
        let llm = llm_up.map_or(ComponentState::Disabled, state);
        let ok = embedder_up && llm != ComponentState::Down;
        Health {
            status: if ok { "ok" } else { "degraded" }.to_string(),
            corpus_revision: snapshot.store.revision(),
            index_count: snapshot.index.len(),
            embedder: state(embedder_up),
            llm,
        }
    }
}
