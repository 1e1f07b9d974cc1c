//! One TOML file configures everything; `SCHOLAR_RAG_*` environment variables
//! override individual keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedderBackend, EmbedderConfig};
use crate::rag::DEFAULT_BUDGET_CHARS;
use crate::recommend::LlmConfig;

pub const ENV_PREFIX: &str = "SCHOLAR_RAG_";
pub const DEFAULT_K: usize = 5;
pub const MAX_K: usize = 100;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {key}: {value:?}")]
    Env { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: String,
    pub data_dir: PathBuf,
    pub k: usize,
    pub budget_chars: usize,
    /// Prompt template file; the built-in template is used when unset.
    pub template_path: Option<PathBuf>,
    /// Directory of static web UI files served at `/`.
    pub static_dir: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub llm: LlmConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8470".into(),
            data_dir: PathBuf::from("scholar-data"),
            k: DEFAULT_K,
            budget_chars: DEFAULT_BUDGET_CHARS,
            template_path: None,
            static_dir: None,
            embedder: EmbedderConfig::default(),
            llm: LlmConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (defaults when `None`), then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let bad = || ConfigError::Env {
                key: key.clone(),
                value: value.clone(),
            };
            match name {
                "LISTEN" => self.listen = value.clone(),
                "DATA_DIR" => self.data_dir = PathBuf::from(&value),
                "K" => self.k = value.parse().map_err(|_| bad())?,
                "BUDGET_CHARS" => self.budget_chars = value.parse().map_err(|_| bad())?,
                "TEMPLATE_PATH" => self.template_path = Some(PathBuf::from(&value)),
                "STATIC_DIR" => self.static_dir = Some(PathBuf::from(&value)),
                "EMBEDDER_BACKEND" => {
                    self.embedder.backend = match value.as_str() {
                        "http" => EmbedderBackend::Http,
                        "deterministic-test" => EmbedderBackend::DeterministicTest,
                        _ => return Err(bad()),
                    }
                }
                "EMBEDDER_URL" => self.embedder.endpoint_url = Some(value.clone()),
                "DIM" => self.embedder.dim = value.parse().map_err(|_| bad())?,
                "EMBEDDER_TIMEOUT" => self.embedder.timeout = parse_secs(&value).ok_or_else(bad)?,
                "LLM_ENABLED" => self.llm.enabled = parse_bool(&value).ok_or_else(bad)?,
                "LLM_ENDPOINT" => self.llm.endpoint = value.clone(),
                "LLM_MODEL" => self.llm.model = value.clone(),
                "LLM_TIMEOUT" => self.llm.timeout = parse_secs(&value).ok_or_else(bad)?,
                _ => tracing::debug!(key, "ignoring unknown environment override"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=MAX_K).contains(&self.k) {
            return Err(ConfigError::Invalid(format!("k must be in 1..={MAX_K}")));
        }
        if self.budget_chars == 0 {
            return Err(ConfigError::Invalid("budget_chars must be positive".into()));
        }
        self.embedder
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

fn parse_secs(s: &str) -> Option<std::time::Duration> {
    s.parse::<f64>()
        .ok()
        .and_then(|v| std::time::Duration::try_from_secs_f64(v).ok())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// Serde helper: durations as (fractional) seconds.
pub mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn defaults() {
        let cfg = Config::default();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.budget_chars, 12_000);
        assert_eq!(cfg.embedder.dim, 768);
        assert_eq!(cfg.llm.temperature, 0.0);
        assert_eq!(cfg.llm.timeout, Duration::from_secs(120));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn parses_file() {
        let cfg = Config::from_toml(
            r#"
            listen = "0.0.0.0:9000"
            data_dir = "/srv/scholar"
            k = 8

            [embedder]
            backend = "http"
            endpoint_url = "http://127.0.0.1:8080/embed"
            dim = 768
            timeout = 2.5

            [llm]
            enabled = true
            endpoint = "http://127.0.0.1:11434"
            model = "llama3.2:3b"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.embedder.backend, EmbedderBackend::Http);
        assert_eq!(cfg.embedder.timeout, Duration::from_millis(2500));
        assert_eq!(cfg.llm.model, "llama3.2:3b");
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("kk = 3").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut cfg = Config::default();
        cfg.apply_env([
            ("SCHOLAR_RAG_K".to_string(), "3".to_string()),
            ("SCHOLAR_RAG_DIM".into(), "64".into()),
            ("SCHOLAR_RAG_LLM_ENABLED".into(), "true".into()),
            ("SCHOLAR_RAG_LLM_TIMEOUT".into(), "0.5".into()),
            ("PATH".into(), "/usr/bin".into()),
        ])
        .unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.embedder.dim, 64);
        assert!(cfg.llm.enabled);
        assert_eq!(cfg.llm.timeout, Duration::from_millis(500));

        let err = cfg
            .apply_env([("SCHOLAR_RAG_K".to_string(), "many".to_string())])
            .unwrap_err();
        assert!(matches!(err, ConfigError::Env { .. }));
    }

    #[test]
    fn k_bounds() {
        let cfg = Config {
            k: 101,
            ..Config::default()
        };
        assert!(cfg.validate().is_err());
    }
}
