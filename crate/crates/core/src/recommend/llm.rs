use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::rag::PromptPayload;

const BODY_EXCERPT: usize = 200;
const PROBE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub enabled: bool,
    /// Base URL; requests go to `{endpoint}/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(with = "crate::config::duration_secs")]
    pub timeout: Duration,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    #[serde(with = "crate::config::duration_secs")]
    pub retry_backoff: Duration,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            endpoint: "http://127.0.0.1:11434".into(),
            model: "llama3.2".into(),
            timeout: Duration::from_secs(120),
            temperature: 0.0,
            max_in_flight: 2,
            max_attempts: 3,
            retry_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("generation is disabled")]
    Disabled,
    #[error("LLM transport error: {0}")]
    Transport(String),
    #[error("LLM endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("LLM returned an empty completion")]
    EmptyGeneration,
    #[error("LLM protocol error: {0}")]
    Protocol(String),
    #[error("invalid LLM config: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport(_))
    }

    /// The endpoint could not be reached or failed server-side.
    pub fn is_unavailable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Disabled => true,
            Self::Endpoint { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Completion text exactly as returned.
    pub raw_text: String,
    pub model_id: String,
    /// SHA-256 of the rendered prompt that was sent.
    pub prompt_hash: String,
    #[serde(rename = "latency_ms", with = "millis")]
    pub latency: Duration,
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Duration::try_from_secs_f64(ms / 1e3).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    model: Option<String>,
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

/// Client for an OpenAI-compatible local inference server (Ollama,
/// llama.cpp server, vLLM, ...). One non-streaming completion per call.
#[derive(Clone)]
pub struct LlmClient {
    client: reqwest::Client,
    cfg: LlmConfig,
    permits: Arc<Semaphore>,
}

impl LlmClient {
    pub fn new(cfg: LlmConfig) -> Result<Self, LlmError> {
        if cfg.endpoint.trim().is_empty() {
            return Err(LlmError::Config("endpoint is empty".into()));
        }
        if cfg.max_in_flight == 0 || cfg.max_attempts == 0 {
            return Err(LlmError::Config(
                "max_in_flight and max_attempts must be positive".into(),
            ));
        }
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            client,
            permits: Arc::new(Semaphore::new(cfg.max_in_flight)),
            cfg,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.cfg.endpoint.trim_end_matches('/'))
    }

    pub async fn generate(&self, prompt: &PromptPayload) -> Result<GenerationResult, LlmError> {
        let prompt_hash = prompt.prompt_hash();
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| LlmError::Transport("client closed".into()))?;
        let started = Instant::now();
        let mut attempt = 1;
        let (raw_text, model_id) = loop {
            match self.complete(&prompt.rendered_prompt).await {
                Err(e) if e.is_retryable() && attempt < self.cfg.max_attempts => {
                    tracing::warn!(error = %e, attempt, "LLM request failed, retrying");
                    tokio::time::sleep(self.cfg.retry_backoff * 2u32.pow(attempt - 1)).await;
                    attempt += 1;
                }
                other => break other?,
            }
        };
        Ok(GenerationResult {
            raw_text,
            model_id,
            prompt_hash,
            latency: started.elapsed(),
        })
    }

    async fn complete(&self, prompt: &str) -> Result<(String, String), LlmError> {
        let request = ChatRequest {
            model: &self.cfg.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.cfg.temperature,
        };
        let resp = self
            .client
            .post(self.url("/v1/chat/completions"))
            .json(&request)
            .send()
            .await
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            let body = resp.text().await.unwrap_or_default();
            return Err(LlmError::Endpoint {
                status: status.as_u16(),
                body: body.chars().take(BODY_EXCERPT).collect(),
            });
        }
        let body: ChatResponse = resp
            .json()
            .await
            .map_err(|e| LlmError::Protocol(e.to_string()))?;
        let text = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(LlmError::EmptyGeneration);
        }
        Ok((text, body.model.unwrap_or_else(|| self.cfg.model.clone())))
    }

    /// `GET {endpoint}/v1/models` answers 2xx within two seconds.
    pub async fn probe(&self) -> bool {
        self.client
            .get(self.url("/v1/models"))
            .timeout(PROBE_TIMEOUT)
            .send()
            .await
            .is_ok_and(|r| r.status().is_success())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use axum::http::StatusCode;
    use axum::routing::{get, post};
    use axum::{Json, Router};
    use serde_json::{json, Value};

    use crate::rag::{build_prompt, PromptTemplate};

    async fn serve(app: Router) -> String {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        format!("http://{addr}")
    }

    fn payload() -> PromptPayload {
        build_prompt(
            "who works on thyroid imaging?",
            &[],
            5000,
            &PromptTemplate::default(),
        )
        .unwrap()
    }

    fn cfg(endpoint: String) -> LlmConfig {
        LlmConfig {
            enabled: true,
            endpoint,
            retry_backoff: Duration::from_millis(1),
            ..LlmConfig::default()
        }
    }

    #[tokio::test]
    async fn sends_chat_request_and_returns_text_verbatim() {
        let seen: Arc<Mutex<Option<Value>>> = Arc::default();
        let s = seen.clone();
        let app = Router::new().route(
            "/v1/chat/completions",
            post(move |Json(body): Json<Value>| {
                let s = s.clone();
                async move {
                    *s.lock().unwrap() = Some(body);
                    Json(json!({
                        "model": "llama3.2:3b",
                        "choices": [{"message": {"role": "assistant", "content": "  1. Kim J \n"}}]
                    }))
                }
            }),
        );
        let client = LlmClient::new(cfg(serve(app).await)).unwrap();
        let prompt = payload();
        let before = prompt.clone();
        let out = client.generate(&prompt).await.unwrap();
        assert_eq!(out.raw_text, "  1. Kim J \n");
        assert_eq!(out.model_id, "llama3.2:3b");
        assert_eq!(out.prompt_hash, sha256_of(&prompt.rendered_prompt));
        assert_eq!(prompt, before);
        assert_eq!(prompt.prompt_hash(), out.prompt_hash);

        let body = seen.lock().unwrap().take().unwrap();
        assert_eq!(body["model"], "llama3.2");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(
            body["messages"][0]["content"],
            prompt.rendered_prompt.as_str()
        );
        assert_eq!(body.as_object().unwrap().len(), 3);
    }

    fn sha256_of(s: &str) -> String {
        crate::rag::sha256_hex(s)
    }

    #[tokio::test]
    async fn server_error_carries_status() {
        let app = Router::new().route(
            "/v1/chat/completions",
            post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "model crashed") }),
        );
        let client = LlmClient::new(cfg(serve(app).await)).unwrap();
        match client.generate(&payload()).await.unwrap_err() {
            LlmError::Endpoint { status, body } => {
                assert_eq!(status, 500);
                assert_eq!(body, "model crashed");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[tokio::test]
    async fn empty_completion_is_an_error() {
        let app = Router::new().route(
            "/v1/chat/completions",
            post(|| async { Json(json!({"choices": [{"message": {"content": ""}}]})) }),
        );
        let client = LlmClient::new(cfg(serve(app).await)).unwrap();
        assert!(matches!(
            client.generate(&payload()).await.unwrap_err(),
            LlmError::EmptyGeneration
        ));
    }

    #[tokio::test]
    async fn transport_failures_stop_after_three_attempts() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        let client = LlmClient::new(cfg(endpoint)).unwrap();
        let started = Instant::now();
        let err = client.generate(&payload()).await.unwrap_err();
        assert!(matches!(err, LlmError::Transport(_)));
        assert!(err.is_unavailable());
        assert!(started.elapsed() < Duration::from_secs(5));
        assert!(!client.probe().await);
    }

    #[tokio::test]
    async fn in_flight_generations_are_bounded() {
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (a, p) = (active.clone(), peak.clone());
        let app = Router::new()
            .route(
                "/v1/chat/completions",
                post(move || {
                    let (a, p) = (a.clone(), p.clone());
                    async move {
                        let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                        p.fetch_max(now, Ordering::SeqCst);
                        tokio::time::sleep(Duration::from_millis(30)).await;
                        a.fetch_sub(1, Ordering::SeqCst);
                        Json(json!({"choices": [{"message": {"content": "ok"}}]}))
                    }
                }),
            )
            .route("/v1/models", get(|| async { Json(json!({"data": []})) }));
        let client = LlmClient::new(cfg(serve(app).await)).unwrap();
        assert!(client.probe().await);
        let prompt = payload();
        let calls: Vec<_> = (0..6).map(|_| client.generate(&prompt)).collect();
        for r in futures::future::join_all(calls).await {
            assert_eq!(r.unwrap().raw_text, "ok");
        }
        assert_eq!(peak.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn result_serializes_latency_in_ms() {
        let r = GenerationResult {
            raw_text: "x".into(),
            model_id: "m".into(),
            prompt_hash: "h".into(),
            latency: Duration::from_millis(1500),
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["latency_ms"], 1500.0);
    }
}
