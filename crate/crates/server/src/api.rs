//! JSON HTTP API.
//!
//! | route              | body                         | reply                                   |
//! |--------------------|------------------------------|-----------------------------------------|
//! | `POST /api/ask`    | `{question, k?, temperature?}` | `{answer, refused, refusal_reason, sources}` |
//! | `POST /api/ingest` | `{title, text, metadata?}`   | `{document_id, chunks}`                 |
//! | `GET /api/health`  |                              | `{status, chunks, embedder_mode, gateway_mode}` |
//! | `GET /api/export`  |                              | chunk export, one JSON object per line  |
//!
//! Refusals are answers and come back with 200. A failed model call is the
//! exception: 503 with `refusal_reason` set to `provider_error`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use grounded_rag::config::AppConfig;
use grounded_rag::corpus::{export_metadata, Metadata};
use grounded_rag::embedder::EmbedError;
use grounded_rag::pipeline::{self, GroundedAnswer, PipelineError, RefusalReason};
use grounded_rag::vectorstore::RetrievedChunk;
use grounded_rag::{ChatGateway, Embedder, VectorStore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tokio::sync::RwLock;
use tower_http::cors::{AllowOrigin, CorsLayer};

const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

pub struct AppState {
    pub config: AppConfig,
    pub embedder: Embedder,
    pub gateway: ChatGateway,
    pub store: RwLock<VectorStore>,
    /// When set, the store is written here after every ingest.
    pub persist_to: Option<PathBuf>,
}

impl AppState {
    pub fn new(config: AppConfig, store: VectorStore) -> anyhow::Result<Self> {
        let embedder = Embedder::from_config(&config.embedder)?;
        let gateway = ChatGateway::from_config(&config.gateway)?;
        Ok(Self {
            config,
            embedder,
            gateway,
            store: RwLock::new(store),
            persist_to: None,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceView {
    #[serde(rename = "pageContent")]
    pub page_content: String,
    pub metadata: Map<String, Value>,
    pub score: f64,
    pub rank: usize,
}

impl From<&RetrievedChunk> for SourceView {
    fn from(r: &RetrievedChunk) -> Self {
        Self {
            page_content: r.chunk.content.clone(),
            metadata: export_metadata(&r.chunk),
            score: r.score,
            rank: r.rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: String,
    pub refused: bool,
    pub refusal_reason: Option<RefusalReason>,
    pub sources: Vec<SourceView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&GroundedAnswer> for AskResponse {
    fn from(a: &GroundedAnswer) -> Self {
        Self {
            answer: a.answer.clone(),
            refused: a.refused,
            refusal_reason: a.refusal_reason,
            sources: a.sources.iter().map(SourceView::from).collect(),
            error: a.error.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(default)]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub document_id: String,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub chunks: usize,
    pub embedder_mode: String,
    pub gateway_mode: String,
}

/// An error reply: `{"error": message}` with the given status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::EmptyQuestion
            | PipelineError::BudgetTooSmall { .. }
            | PipelineError::InvalidConfig(_)
            | PipelineError::Corpus(_) => StatusCode::BAD_REQUEST,
            PipelineError::Embedding(EmbedError::RemoteUnavailable(_)) => {
                StatusCode::SERVICE_UNAVAILABLE
            }
            PipelineError::Embedding(_) | PipelineError::Store(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.to_string())
    }
}

/// Parses the body by hand so that malformed JSON yields our 400 shape.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn ask(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: AskRequest = parse_body(&body)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("question is empty"));
    }
    let mut cfg = state.config.pipeline.clone();
    if let Some(k) = req.k {
        cfg.k = k;
    }
    if let Some(t) = req.temperature {
        cfg.generation.temperature = t;
    }
    cfg.validate()?;

    let store = state.store.read().await;
    let answer =
        pipeline::ask(&req.question, &cfg, &state.embedder, &store, &state.gateway).await?;
    drop(store);

    let status = if answer.refusal_reason == Some(RefusalReason::ProviderError) {
        tracing::warn!(
            error = answer.error.as_deref().unwrap_or_default(),
            "chat provider failed"
        );
        StatusCode::SERVICE_UNAVAILABLE
    } else {
        StatusCode::OK
    };
    Ok((status, Json(AskResponse::from(&answer))).into_response())
}

async fn ingest(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<IngestResponse>, ApiError> {
    let req: IngestRequest = parse_body(&body)?;
    let prepared = pipeline::prepare_document(
        &req.title,
        &req.text,
        req.metadata,
        &state.config.chunking,
        &state.embedder,
    )
    .await?;
    let document_id = prepared.document_id;

    let mut store = state.store.write().await;
    let chunks = store.add_all(prepared.items).map_err(PipelineError::from)?;
    if let Some(path) = &state.persist_to {
        store.save(path).map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("cannot save store: {e}"),
            )
        })?;
    }
    tracing::info!(%document_id, chunks, "ingested document");
    Ok(Json(IngestResponse {
        document_id,
        chunks,
    }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        chunks: state.store.read().await.len(),
        embedder_mode: state.embedder.mode().to_string(),
        gateway_mode: state.gateway.kind().to_string(),
    })
}

async fn export(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let mut out = Vec::new();
    state
        .store
        .read()
        .await
        .export_chunks(&mut out)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = cors(&state.config.server.cors_allow_origins);
    Router::new()
        .route("/api/ask", post(ask))
        .route("/api/ingest", post(ingest))
        .route("/api/health", get(health))
        .route("/api/export", get(export))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}
