use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::{Embedder, EmbedderConfig, EmbeddingError, EmbeddingVector};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

const BODY_EXCERPT: usize = 200;
const PROBE_TIMEOUT: Duration = Duration::from_secs(2);

/// Client for an embedding server speaking
/// `POST {"inputs": [..]}` -> `{"embeddings": [[..], ..]}`.
pub struct HttpEmbedder {
    client: reqwest::Client,
    cfg: EmbedderConfig,
    url: String,
    permits: Arc<Semaphore>,
}

impl HttpEmbedder {
    pub fn new(cfg: EmbedderConfig) -> Result<Self, EmbeddingError> {
        cfg.validate()?;
        let url = cfg.endpoint_url.clone().unwrap_or_default();
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| EmbeddingError::Config(e.to_string()))?;
        Ok(Self {
            client,
            permits: Arc::new(Semaphore::new(cfg.max_in_flight)),
            url,
            cfg,
        })
    }

    async fn post_batch(
        &self,
        texts: &[String],
        timeout: Duration,
    ) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| EmbeddingError::Transport("embedder client closed".into()))?;
        let resp = self
            .client
            .post(&self.url)
            .timeout(timeout)
            .json(&EmbedRequest { inputs: texts })
            .send()
            .await
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            let body = resp.text().await.unwrap_or_default();
            return Err(EmbeddingError::Endpoint {
                status: status.as_u16(),
                body: body.chars().take(BODY_EXCERPT).collect(),
            });
        }
        let body: EmbedResponse = resp
            .json()
            .await
            .map_err(|e| EmbeddingError::Protocol(e.to_string()))?;
        if body.embeddings.len() != texts.len() {
            return Err(EmbeddingError::Protocol(format!(
                "sent {} inputs, received {} embeddings",
                texts.len(),
                body.embeddings.len()
            )));
        }
        body.embeddings
            .into_iter()
            .map(|values| {
                if values.len() != self.cfg.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.cfg.dim,
                        got: values.len(),
                    });
                }
                EmbeddingVector::normalized(values)
            })
            .collect()
    }

    async fn post_with_retry(
        &self,
        texts: &[String],
    ) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut attempt = 0u32;
        loop {
            match self.post_batch(texts, self.cfg.timeout).await {
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let delay = self.cfg.retry_backoff * 2u32.pow(attempt);
                    tracing::warn!(error = %e, attempt, "embedder request failed, retrying");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let requests: Vec<_> = texts
            .chunks(self.cfg.max_batch)
            .map(|chunk| self.post_with_retry(chunk))
            .collect();
        let batches: Vec<Vec<EmbeddingVector>> = stream::iter(requests)
            .buffered(self.cfg.max_in_flight)
            .try_collect()
            .await?;
        Ok(batches.into_iter().flatten().collect())
    }

    async fn probe(&self) -> bool {
        self.post_batch(&["ping".to_string()], PROBE_TIMEOUT)
            .await
            .is_ok()
    }
}
