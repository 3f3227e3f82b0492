//! Application configuration.
//!
//! Values are layered with precedence `flags > environment > file >
//! defaults`. This module handles the last three; command-line flags are
//! applied by the binary on top of [`AppConfig::load`].

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkingConfig;
use crate::embedder::{EmbedderConfig, EmbedderMode};
use crate::llm_gateway::{GatewayConfig, ProviderKind};
use crate::pipeline::PipelineConfig;

pub const CONFIG_PATH_ENV: &str = "GROUNDED_RAG_CONFIG";
pub const ENV_PREFIX: &str = "GROUNDED_RAG_";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value {value:?} for {key}")]
    InvalidValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub port: u16,
    /// Origins allowed by CORS; `*` allows any origin.
    pub cors_allow_origins: Vec<String>,
    /// Store file loaded at startup and written by the CLI.
    pub store_path: PathBuf,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            cors_allow_origins: vec!["http://localhost:5173".into()],
            store_path: PathBuf::from("grounded-rag-store.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub chunking: ChunkingConfig,
    pub embedder: EmbedderConfig,
    pub gateway: GatewayConfig,
    pub pipeline: PipelineConfig,
    pub server: ServerConfig,
    /// When set, replaces `pipeline.system_prompt` with the file's contents.
    /// Relative paths resolve against the config file's directory.
    pub system_prompt_file: Option<PathBuf>,
}

impl AppConfig {
    /// Parses a TOML or JSON (by `.json` extension) config file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_owned(),
            message,
        };
        let mut cfg: AppConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        if let Some(prompt_path) = cfg.system_prompt_file.take() {
            let resolved = match path.parent() {
                Some(dir) if prompt_path.is_relative() => dir.join(&prompt_path),
                _ => prompt_path,
            };
            cfg.pipeline.system_prompt =
                std::fs::read_to_string(&resolved).map_err(|source| ConfigError::Io {
                    path: resolved.clone(),
                    source,
                })?;
            cfg.system_prompt_file = Some(resolved);
        }
        Ok(cfg)
    }

    /// Defaults, then the file (explicit path or `GROUNDED_RAG_CONFIG`), then
    /// `GROUNDED_RAG_*` environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with(path, |key| std::env::var(key).ok())
    }

    pub fn load_with(
        path: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let from_env = env(CONFIG_PATH_ENV).map(PathBuf::from);
        let mut cfg = match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        cfg.apply_env(env)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for &key in ENV_KEYS {
            if let Some(value) = env(&format!("{ENV_PREFIX}{key}")) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    /// Sets one field by its environment-variable suffix (e.g. `K`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = || ConfigError::InvalidValue {
            key: format!("{ENV_PREFIX}{key}"),
            value: value.to_owned(),
        };
        fn parse<T: FromStr>(
            value: &str,
            invalid: impl Fn() -> ConfigError,
        ) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| invalid())
        }
        match key {
            "CHUNK_SIZE" => self.chunking.chunk_size = parse(value, invalid)?,
            "CHUNK_OVERLAP" => self.chunking.overlap = parse(value, invalid)?,
            "EMBEDDER_MODE" => {
                self.embedder.mode = match value.trim() {
                    "local" => EmbedderMode::Local,
                    "remote" => EmbedderMode::Remote,
                    _ => return Err(invalid()),
                }
            }
            "EMBEDDER_DIM" => self.embedder.dim = parse(value, invalid)?,
            "EMBEDDER_ENDPOINT" => self.embedder.endpoint = value.to_owned(),
            "EMBEDDER_MODEL" => self.embedder.model = value.to_owned(),
            "GATEWAY_MODE" => {
                self.gateway.mode = match value.trim() {
                    "stub" => ProviderKind::Stub,
                    "remote" => ProviderKind::Remote,
                    _ => return Err(invalid()),
                }
            }
            "GATEWAY_BASE_URL" => self.gateway.base_url = value.to_owned(),
            "GATEWAY_TIMEOUT_SECS" => self.gateway.timeout_secs = parse(value, invalid)?,
            "MODEL" => self.pipeline.generation.model = value.to_owned(),
            "TEMPERATURE" => self.pipeline.generation.temperature = parse(value, invalid)?,
            "MAX_ANSWER_TOKENS" => {
                self.pipeline.generation.max_answer_tokens = parse(value, invalid)?
            }
            "K" => self.pipeline.k = parse(value, invalid)?,
            "CONTEXT_WINDOW_TOKENS" => self.pipeline.context_window_tokens = parse(value, invalid)?,
            "ANSWER_RESERVE_TOKENS" => self.pipeline.answer_reserve_tokens = parse(value, invalid)?,
            "REFUSAL_THRESHOLD" => self.pipeline.refusal_threshold = parse(value, invalid)?,
            "REFUSAL_TEXT" => self.pipeline.refusal_text = value.to_owned(),
            "PORT" => self.server.port = parse(value, invalid)?,
            "CORS_ORIGINS" => {
                self.server.cors_allow_origins = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            }
            "STORE" => self.server.store_path = PathBuf::from(value),
            _ => {
                return Err(ConfigError::Invalid(format!("unknown setting {key}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunking
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.embedder
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

/// Suffixes of the recognized `GROUNDED_RAG_*` variables.
pub const ENV_KEYS: &[&str] = &[
    "CHUNK_SIZE",
    "CHUNK_OVERLAP",
    "EMBEDDER_MODE",
    "EMBEDDER_DIM",
    "EMBEDDER_ENDPOINT",
    "EMBEDDER_MODEL",
    "GATEWAY_MODE",
    "GATEWAY_BASE_URL",
    "GATEWAY_TIMEOUT_SECS",
    "MODEL",
    "TEMPERATURE",
    "MAX_ANSWER_TOKENS",
    "K",
    "CONTEXT_WINDOW_TOKENS",
    "ANSWER_RESERVE_TOKENS",
    "REFUSAL_THRESHOLD",
    "REFUSAL_TEXT",
    "PORT",
    "CORS_ORIGINS",
    "STORE",
];
