//! HTTP front end for the scholar-rag pipeline.
//!
//! Endpoints: `POST /query`, `POST /ingest`, `GET /health` and
//! `GET /documents/{pmid}`. When a static directory is configured it is served
//! for every other path, which is how the web UI is hosted.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Bytes};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use scholar_rag::config::Config;
use scholar_rag::corpus::{parse_records, CorpusFormat, PublicationRecord, Rejection};
use scholar_rag::pipeline::{
    Engine, EngineError, Health, IngestError, IngestReport, QueryError, QueryRequest, QueryResponse,
};

/// Upper bound on an ingest upload.
pub const MAX_INGEST_BYTES: usize = 512 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
}

/// Error body shapes:
/// 400/404 `{error, detail}`, 503 `{error, stage, detail}`, 500 `{error, id}`.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{error}: {detail}")]
    BadRequest {
        error: &'static str,
        detail: String,
        rejections: Vec<Rejection>,
    },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{stage} unavailable: {detail}")]
    Unavailable { stage: &'static str, detail: String },
    #[error("internal: {0}")]
    Internal(String),
}

impl ApiError {
    fn bad_request(error: &'static str, detail: impl Into<String>) -> Self {
        Self::BadRequest {
            error,
            detail: detail.into(),
            rejections: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    #[serde(skip_serializing_if = "<[Rejection]>::is_empty")]
    rejections: &'a [Rejection],
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = |error, stage, detail, id, rejections| ErrorBody {
            error,
            stage,
            detail,
            id,
            rejections,
        };
        match &self {
            Self::BadRequest {
                error,
                detail,
                rejections,
            } => (
                StatusCode::BAD_REQUEST,
                Json(body(error, None, Some(detail), None, rejections)),
            )
                .into_response(),
            Self::NotFound(detail) => (
                StatusCode::NOT_FOUND,
                Json(body("not_found", None, Some(detail), None, &[])),
            )
                .into_response(),
            Self::Unavailable { stage, detail } => {
                tracing::warn!(stage, %detail, "backend unavailable");
                (
                    StatusCode::SERVICE_UNAVAILABLE,
                    Json(body("unavailable", Some(stage), Some(detail), None, &[])),
                )
                    .into_response()
            }
            Self::Internal(detail) => {
                let id = uuid::Uuid::new_v4().simple().to_string();
                tracing::error!(%id, %detail, "internal error");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    Json(body("internal", None, None, Some(&id), &[])),
                )
                    .into_response()
            }
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::InvalidRequest(detail) => Self::bad_request("invalid_request", detail),
            QueryError::Embedder(_) | QueryError::Llm(_) => Self::Unavailable {
                stage: e.stage(),
                detail: e.to_string(),
            },
            QueryError::Internal(detail) => Self::Internal(detail),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Parse(e) => Self::bad_request("parse", e.to_string()),
            IngestError::NoValidRecords(rejections) => Self::BadRequest {
                error: "parse",
                detail: format!("no valid records ({} rejected)", rejections.len()),
                rejections,
            },
            IngestError::Embedder(e) => Self::Unavailable {
                stage: "embedder",
                detail: e.to_string(),
            },
            other => Self::Internal(other.to_string()),
        }
    }
}

/// `/query` body. `k` falls back to the configured default.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    query: String,
    k: Option<usize>,
    #[serde(default)]
    include_generation: bool,
}

async fn query(
    State(state): State<AppState>,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> Result<Json<QueryResponse>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request("invalid_request", e.body_text()))?;
    let req = QueryRequest {
        query: body.query,
        k: body.k.unwrap_or(state.engine.settings().default_k),
        include_generation: body.include_generation,
    };
    Ok(Json(state.engine.query(&req).await?))
}

#[derive(Debug, Deserialize)]
struct IngestParams {
    format: Option<String>,
}

fn parse_format(name: Option<&str>) -> Result<CorpusFormat, ApiError> {
    name.map_or(Ok(CorpusFormat::Jsonl), |f| {
        f.parse()
            .map_err(|e: String| ApiError::bad_request("invalid_request", e))
    })
}

/// Pulls the corpus out of a multipart upload: the `corpus` field, or else the
/// first file field. A `format` field overrides the query parameter.
async fn read_multipart(mut form: Multipart) -> Result<(Bytes, Option<String>), ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| {
        ApiError::bad_request("invalid_request", e.body_text())
    };
    let mut corpus = None;
    let mut format = None;
    while let Some(field) = form.next_field().await.map_err(bad)? {
        match field.name() {
            Some("format") => format = Some(field.text().await.map_err(bad)?),
            Some("corpus") => corpus = Some(field.bytes().await.map_err(bad)?),
            _ if corpus.is_none() && field.file_name().is_some() => {
                corpus = Some(field.bytes().await.map_err(bad)?)
            }
            _ => {}
        }
    }
    let corpus = corpus.ok_or_else(|| {
        ApiError::bad_request("invalid_request", "multipart body has no corpus field")
    })?;
    Ok((corpus, format))
}

async fn ingest(
    State(state): State<AppState>,
    params: Result<Query<IngestParams>, QueryRejection>,
    req: Request,
) -> Result<Json<IngestReport>, ApiError> {
    let Query(params) =
        params.map_err(|e| ApiError::bad_request("invalid_request", e.body_text()))?;
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let (bytes, format) = if is_multipart {
        let form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request("invalid_request", e.body_text()))?;
        let (bytes, field_format) = read_multipart(form).await?;
        (bytes, field_format.or(params.format))
    } else {
        let bytes = to_bytes(req.into_body(), MAX_INGEST_BYTES)
            .await
            .map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?;
        (bytes, params.format)
    };
    let format = parse_format(format.as_deref())?;
    let parsed = parse_records(&bytes, format).map_err(IngestError::from)?;
    Ok(Json(
        state
            .engine
            .ingest(parsed.records, parsed.rejections)
            .await?,
    ))
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(state.engine.health().await)
}

async fn document(
    State(state): State<AppState>,
    Path(pmid): Path<String>,
) -> Result<Json<PublicationRecord>, ApiError> {
    match state.engine.document(&pmid) {
        Ok(Some(record)) => Ok(Json(record)),
        Ok(None) => Err(ApiError::NotFound(format!("no record with pmid {pmid}"))),
        Err(e) => Err(ApiError::bad_request("invalid_pmid", e.to_string())),
    }
}

pub fn router(engine: Arc<Engine>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/query", post(query))
        .route(
            "/ingest",
            post(ingest).layer(DefaultBodyLimit::max(MAX_INGEST_BYTES)),
        )
        .route("/health", get(health))
        .route("/documents/{pmid}", get(document))
        .with_state(AppState { engine });
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid listen address {0:?}")]
    Listen(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Binds the configured listen address.
pub async fn bind(cfg: &Config) -> Result<TcpListener, ServeError> {
    let addr: SocketAddr = cfg
        .listen
        .parse()
        .map_err(|_| ServeError::Listen(cfg.listen.clone()))?;
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })
}

/// Serves `app` on `listener` until Ctrl-C.
pub async fn serve_on(listener: TcpListener, app: Router) -> Result<(), ServeError> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Opens the engine described by `cfg` and serves until Ctrl-C.
pub async fn serve(cfg: &Config) -> Result<(), ServeError> {
    let engine = Arc::new(Engine::open(cfg)?);
    let listener = bind(cfg).await?;
    tracing::info!(addr = %listener.local_addr()?, revision = engine.snapshot().store.revision(), "listening");
    serve_on(listener, router(engine, cfg.static_dir.clone())).await
}
