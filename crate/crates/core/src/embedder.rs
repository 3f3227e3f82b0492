//! Text embeddings.
//!
//! The local embedder hashes lowercase character 3-grams with FNV-1a into a
//! fixed number of buckets and L2-normalizes the counts. It needs no network
//! and produces bit-identical vectors on every platform. The remote embedder
//! posts to an embedding service speaking `{"model", "input": [...]}` →
//! `{"data": [{"embedding": [...]}]}`.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub const DEFAULT_LOCAL_DIM: usize = 4096;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
const UNIT_NORM_TOLERANCE: f64 = 1e-9;

const FNV_OFFSET_BASIS: u64 = 14695981039346656037;
const FNV_PRIME: u64 = 1099511628211;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding service unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
}

/// A vector that is either unit-norm or exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn zero(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    /// Scales `values` to unit length; an all-zero input stays zero.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidEmbedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidEmbedding("non-finite component".into()));
        }
        let norm = l2_norm(&values);
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { values })
    }

    /// Accepts `values` as-is after checking the unit-norm-or-zero invariant.
    pub fn from_values(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidEmbedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidEmbedding("non-finite component".into()));
        }
        let zero = values.iter().all(|&v| v == 0.0);
        let norm = l2_norm(&values);
        if !zero && (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbedError::InvalidEmbedding(format!(
                "norm {norm} is neither 1 nor 0"
            )));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        Embedding::from_values(values).map_err(serde::de::Error::custom)
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderMode {
    #[default]
    Local,
    Remote,
}

impl std::fmt::Display for EmbedderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbedderMode::Local => "local",
            EmbedderMode::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub mode: EmbedderMode,
    pub dim: usize,
    /// Full URL of the embedding endpoint (remote mode).
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            mode: EmbedderMode::Local,
            dim: DEFAULT_LOCAL_DIM,
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 60,
        }
    }
}

impl EmbedderConfig {
    pub fn local(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 2 {
            return Err(EmbedError::InvalidConfig("dim must be at least 2".into()));
        }
        if self.mode == EmbedderMode::Remote {
            if self.endpoint.is_empty() {
                return Err(EmbedError::InvalidConfig("remote endpoint is empty".into()));
            }
            if self.max_in_flight == 0 {
                return Err(EmbedError::InvalidConfig(
                    "max_in_flight must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Hashed character 3-gram embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalEmbedder {
    dim: usize,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 2 {
            return Err(EmbedError::InvalidConfig("dim must be at least 2".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bucket index of each gram of `text`, in order of occurrence.
    pub fn gram_buckets(&self, text: &str) -> Vec<usize> {
        let lowered: Vec<char> = text.to_lowercase().chars().collect();
        let dim = self.dim as u64;
        let bucket = |gram: &[char]| {
            let s: String = gram.iter().collect();
            (fnv1a64(s.as_bytes()) % dim) as usize
        };
        match lowered.len() {
            0 => Vec::new(),
            1 | 2 => vec![bucket(&lowered)],
            _ => lowered.windows(3).map(bucket).collect(),
        }
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut counts = vec![0.0; self.dim];
        for b in self.gram_buckets(text) {
            counts[b] += 1.0;
        }
        Embedding::normalized(counts).expect("finite non-empty counts")
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// HTTP client for an embedding service.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    permits: Arc<Semaphore>,
}

impl RemoteEmbedder {
    pub fn new(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| EmbedError::InvalidConfig(e.to_string()))?;
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            std::env::var(&cfg.api_key_env).ok()
        };
        Ok(Self {
            client,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key,
            dim: cfg.dim,
            permits: Arc::new(Semaphore::new(cfg.max_in_flight)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub async fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|e| EmbedError::RemoteUnavailable(e.to_string()))?;
        let mut request = self.client.post(&self.endpoint).json(&EmbeddingRequest {
            model: &self.model,
            input: texts,
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .await
            .map_err(|e| EmbedError::RemoteUnavailable(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(EmbedError::RemoteUnavailable(format!(
                "HTTP {status}: {body}"
            )));
        }
        let parsed: EmbeddingResponse = response
            .json()
            .await
            .map_err(|e| EmbedError::RemoteUnavailable(format!("bad response body: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::RemoteUnavailable(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|datum| {
                if datum.embedding.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        actual: datum.embedding.len(),
                    });
                }
                Embedding::normalized(datum.embedding)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Embedder {
    Local(LocalEmbedder),
    Remote(RemoteEmbedder),
}

impl Embedder {
    pub fn from_config(cfg: &EmbedderConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        Ok(match cfg.mode {
            EmbedderMode::Local => Embedder::Local(LocalEmbedder::new(cfg.dim)?),
            EmbedderMode::Remote => Embedder::Remote(RemoteEmbedder::new(cfg)?),
        })
    }

    pub fn mode(&self) -> EmbedderMode {
        match self {
            Embedder::Local(_) => EmbedderMode::Local,
            Embedder::Remote(_) => EmbedderMode::Remote,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Local(e) => e.dim(),
            Embedder::Remote(e) => e.dim(),
        }
    }

    pub async fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        match self {
            Embedder::Local(e) => Ok(e.embed(text)),
            Embedder::Remote(e) => {
                let mut out = e.embed_batch(&[text.to_owned()]).await?;
                Ok(out.remove(0))
            }
        }
    }

    /// Embeds every text; either all succeed or the whole batch fails.
    pub async fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbedError> {
        match self {
            Embedder::Local(e) => Ok(texts.iter().map(|t| e.embed(t)).collect()),
            Embedder::Remote(e) => e.embed_batch(texts).await,
        }
    }
}
