//! Dense text embeddings behind a pluggable backend.
//!
//! Every vector is L2-normalized when it is created, so downstream cosine
//! similarity is a plain dot product.

mod hashing;
mod http;

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PublicationRecord;

pub use hashing::{
    deterministic_test_embed, token_hash, tokenize, DeterministicEmbedder, MIN_HASH_DIM,
};
pub use http::HttpEmbedder;

pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate embedding: {0}")]
    Degenerate(&'static str),
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedder transport error: {0}")]
    Transport(String),
    #[error("embedder returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("embedder protocol error: {0}")]
    Protocol(String),
    #[error("invalid embedder config: {0}")]
    Config(String),
}

impl EmbeddingError {
    /// Transport failures and server-side 5xx/429 are worth another attempt;
    /// contract violations never are.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Endpoint { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }

    /// True when the embedder could not be reached or answered with a server
    /// error, as opposed to returning bad data.
    pub fn is_unavailable(&self) -> bool {
        self.is_retryable()
    }
}

/// A unit-norm dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Degenerate("empty vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(EmbeddingError::Degenerate("zero vector"));
        }
        if !norm.is_finite() {
            // rescale before squaring overflows
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            values.iter_mut().for_each(|v| *v /= max);
            return Self::normalized(values);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self { values })
    }

    /// Wraps values that are already unit length (within 1e-6), keeping them
    /// bit-for-bit.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Degenerate("empty vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(EmbeddingError::Degenerate("vector is not unit length"));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_unit(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderBackend {
    Http,
    #[default]
    DeterministicTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub backend: EmbedderBackend,
    pub endpoint_url: Option<String>,
    pub dim: usize,
    #[serde(with = "crate::config::duration_secs")]
    pub timeout: Duration,
    pub max_batch: usize,
    pub max_in_flight: usize,
    pub max_retries: u32,
    #[serde(with = "crate::config::duration_secs")]
    pub retry_backoff: Duration,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backend: EmbedderBackend::default(),
            endpoint_url: None,
            dim: DEFAULT_DIM,
            timeout: Duration::from_secs(30),
            max_batch: 32,
            max_in_flight: 4,
            max_retries: 3,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

impl EmbedderConfig {
    pub fn deterministic(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn http(endpoint_url: impl Into<String>, dim: usize) -> Self {
        Self {
            backend: EmbedderBackend::Http,
            endpoint_url: Some(endpoint_url.into()),
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::Config("dim must be positive".into()));
        }
        if self.max_batch == 0 || self.max_in_flight == 0 {
            return Err(EmbeddingError::Config(
                "max_batch and max_in_flight must be positive".into(),
            ));
        }
        match self.backend {
            EmbedderBackend::DeterministicTest if self.dim < MIN_HASH_DIM => Err(
                EmbeddingError::Config(format!("deterministic-test needs dim >= {MIN_HASH_DIM}")),
            ),
            EmbedderBackend::Http if self.endpoint_url.as_deref().unwrap_or("").is_empty() => Err(
                EmbeddingError::Config("http backend needs endpoint_url".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>, EmbeddingError> {
        self.validate()?;
        Ok(match self.backend {
            EmbedderBackend::DeterministicTest => Arc::new(DeterministicEmbedder::new(self.dim)?),
            EmbedderBackend::Http => Arc::new(HttpEmbedder::new(self.clone())?),
        })
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds each text, returning vectors in input order.
    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    /// Cheap reachability check used by health reporting.
    async fn probe(&self) -> bool {
        true
    }
}

/// The text a record is embedded from: the title, then the abstract on the
/// next line when there is one.
pub fn document_text(record: &PublicationRecord) -> String {
    if record.abstract_text.is_empty() {
        record.title.clone()
    } else {
        format!("{}\n{}", record.title, record.abstract_text)
    }
}

pub async fn embed_document(
    record: &PublicationRecord,
    embedder: &dyn Embedder,
) -> Result<EmbeddingVector, EmbeddingError> {
    embed_query(&document_text(record), embedder).await
}

pub async fn embed_query(
    q: &str,
    embedder: &dyn Embedder,
) -> Result<EmbeddingVector, EmbeddingError> {
    let mut out = embedder.embed_texts(&[q.to_string()]).await?;
    match out.pop() {
        Some(v) if out.is_empty() => Ok(v),
        _ => Err(EmbeddingError::Protocol(
            "expected exactly one embedding".into(),
        )),
    }
}
