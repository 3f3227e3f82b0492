//! Question answering end to end: embed the question, retrieve the top-k
//! chunks, assemble a budgeted prompt, call the chat model, and return the
//! answer with the chunks it was given.
//!
//! Two refusal paths never reach the model: an empty store, and a best
//! retrieval score below [`PipelineConfig::refusal_threshold`]. A failing
//! model call is also reported as a refusal, carrying the provider error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, Chunk, ChunkingConfig, CorpusError, Metadata};
use crate::embedder::{EmbedError, Embedder, Embedding};
use crate::llm_gateway::{ChatGateway, ChatMessage, ChatRequest, GenerationConfig};
use crate::prompt;
use crate::vectorstore::{RetrievedChunk, StoreError, VectorStore, DEFAULT_TOP_K};

pub const DEFAULT_CONTEXT_WINDOW_TOKENS: usize = 16_000;
pub const DEFAULT_ANSWER_RESERVE_TOKENS: usize = 1_000;
pub const DEFAULT_REFUSAL_THRESHOLD: f64 = 0.15;
pub const DEFAULT_REFUSAL_TEXT: &str = "I cannot answer this from the available sources.";
pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../config/system_prompt.txt");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("prompt without context needs {needed} tokens but the budget is {budget}")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub context_window_tokens: usize,
    pub answer_reserve_tokens: usize,
    pub refusal_threshold: f64,
    pub system_prompt: String,
    pub refusal_text: String,
    pub generation: GenerationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            context_window_tokens: DEFAULT_CONTEXT_WINDOW_TOKENS,
            answer_reserve_tokens: DEFAULT_ANSWER_RESERVE_TOKENS,
            refusal_threshold: DEFAULT_REFUSAL_THRESHOLD,
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_owned(),
            refusal_text: DEFAULT_REFUSAL_TEXT.to_owned(),
            generation: GenerationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.k == 0 {
            return invalid("k must be at least 1".into());
        }
        if self.answer_reserve_tokens >= self.context_window_tokens {
            return invalid(format!(
                "answer_reserve_tokens ({}) must be below context_window_tokens ({})",
                self.answer_reserve_tokens, self.context_window_tokens
            ));
        }
        if !(-1.0..=1.0).contains(&self.refusal_threshold) {
            return invalid("refusal_threshold must lie in [-1, 1]".into());
        }
        if self.system_prompt.trim().is_empty() {
            return invalid("system_prompt is empty".into());
        }
        if !(0.0..=2.0).contains(&self.generation.temperature) {
            return invalid("temperature must lie in [0, 2]".into());
        }
        if self.generation.max_answer_tokens == 0 {
            return invalid("max_answer_tokens must be positive".into());
        }
        Ok(())
    }

    /// Tokens available to the prompt itself.
    pub fn prompt_budget(&self) -> usize {
        self.context_window_tokens
            .saturating_sub(self.answer_reserve_tokens)
    }
}

/// Number of whole chunks of `tokens_per_chunk` that fit next to an answer
/// reserve in a context window.
pub fn chunk_capacity(
    context_window_tokens: usize,
    reserve_tokens: usize,
    tokens_per_chunk: usize,
) -> usize {
    context_window_tokens.saturating_sub(reserve_tokens) / tokens_per_chunk.max(1)
}

pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> usize;
}

/// Four characters per token, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharsPerToken;

impl TokenEstimator for CharsPerToken {
    fn estimate(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledPrompt {
    pub messages: Vec<ChatMessage>,
    /// Prefix of the retrieval ranking that made it into the prompt.
    pub included: Vec<RetrievedChunk>,
    pub estimated_tokens: usize,
}

pub fn assemble_prompt(
    question: &str,
    retrieved: &[RetrievedChunk],
    cfg: &PipelineConfig,
) -> Result<AssembledPrompt, PipelineError> {
    assemble_prompt_with(question, retrieved, cfg, &CharsPerToken)
}

/// Adds chunks in rank order until the next one would exceed the prompt
/// budget; everything from that chunk on is dropped.
pub fn assemble_prompt_with(
    question: &str,
    retrieved: &[RetrievedChunk],
    cfg: &PipelineConfig,
    estimator: &dyn TokenEstimator,
) -> Result<AssembledPrompt, PipelineError> {
    let budget = cfg.prompt_budget();
    let system_tokens = estimator.estimate(&cfg.system_prompt);
    let question_part = prompt::render_question(question);

    let mut context = String::from(prompt::CONTEXT_HEADER);
    let cost =
        |context: &str| system_tokens + estimator.estimate(&format!("{context}{question_part}"));
    let mut estimated = cost(&context);
    if estimated > budget {
        return Err(PipelineError::BudgetTooSmall {
            needed: estimated,
            budget,
        });
    }

    let mut included = Vec::new();
    for hit in retrieved {
        let candidate = format!(
            "{context}{}",
            prompt::render_entry(included.len() + 1, &hit.chunk)
        );
        let tokens = cost(&candidate);
        if tokens > budget {
            break;
        }
        context = candidate;
        estimated = tokens;
        included.push(hit.clone());
    }

    Ok(AssembledPrompt {
        messages: vec![
            ChatMessage::system(cfg.system_prompt.clone()),
            ChatMessage::user(format!("{context}{question_part}")),
        ],
        included,
        estimated_tokens: estimated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefusalReason {
    NoGrounding,
    EmptyStore,
    ProviderError,
}

impl RefusalReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RefusalReason::NoGrounding => "no_grounding",
            RefusalReason::EmptyStore => "empty_store",
            RefusalReason::ProviderError => "provider_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub question: String,
    pub answer: String,
    pub refused: bool,
    pub refusal_reason: Option<RefusalReason>,
    /// Exactly the chunks placed in the prompt, in prompt order. Empty on
    /// refusal.
    pub sources: Vec<RetrievedChunk>,
    /// Provider error message when `refusal_reason` is `provider_error`.
    pub error: Option<String>,
}

impl GroundedAnswer {
    fn refusal(
        question: &str,
        cfg: &PipelineConfig,
        reason: RefusalReason,
        error: Option<String>,
    ) -> Self {
        Self {
            question: question.to_owned(),
            answer: cfg.refusal_text.clone(),
            refused: true,
            refusal_reason: Some(reason),
            sources: Vec::new(),
            error,
        }
    }
}

/// An answer together with the prompt that produced it, if one was built.
#[derive(Debug, Clone)]
pub struct AskTrace {
    pub answer: GroundedAnswer,
    pub retrieved: Vec<RetrievedChunk>,
    pub prompt: Option<AssembledPrompt>,
}

pub async fn ask(
    question: &str,
    cfg: &PipelineConfig,
    embedder: &Embedder,
    store: &VectorStore,
    gateway: &ChatGateway,
) -> Result<GroundedAnswer, PipelineError> {
    Ok(ask_traced(question, cfg, embedder, store, gateway)
        .await?
        .answer)
}

pub async fn ask_traced(
    question: &str,
    cfg: &PipelineConfig,
    embedder: &Embedder,
    store: &VectorStore,
    gateway: &ChatGateway,
) -> Result<AskTrace, PipelineError> {
    if question.trim().is_empty() {
        return Err(PipelineError::EmptyQuestion);
    }
    cfg.validate()?;
    let refuse = |reason, retrieved| AskTrace {
        answer: GroundedAnswer::refusal(question, cfg, reason, None),
        retrieved,
        prompt: None,
    };
    if store.is_empty() {
        return Ok(refuse(RefusalReason::EmptyStore, Vec::new()));
    }

    let query = embedder.embed(question).await?;
    let retrieved = store.search(&query, cfg.k)?;
    let best = retrieved.first().map_or(f64::NEG_INFINITY, |r| r.score);
    if best < cfg.refusal_threshold {
        return Ok(refuse(RefusalReason::NoGrounding, retrieved));
    }

    let assembled = assemble_prompt(question, &retrieved, cfg)?;
    let request = ChatRequest {
        model: cfg.generation.model.clone(),
        messages: assembled.messages.clone(),
        temperature: cfg.generation.temperature,
        max_answer_tokens: cfg.generation.max_answer_tokens,
    };
    let answer = match gateway.complete(&request).await {
        Ok(response) => GroundedAnswer {
            question: question.to_owned(),
            answer: response.content,
            refused: false,
            refusal_reason: None,
            sources: assembled.included.clone(),
            error: None,
        },
        Err(e) => GroundedAnswer::refusal(
            question,
            cfg,
            RefusalReason::ProviderError,
            Some(e.to_string()),
        ),
    };
    Ok(AskTrace {
        answer,
        retrieved,
        prompt: Some(assembled),
    })
}

/// A document split into chunks and embedded, not yet stored.
#[derive(Debug, Clone)]
pub struct PreparedDocument {
    pub document_id: String,
    pub items: Vec<(Chunk, Embedding)>,
}

/// Ingests, chunks and embeds one document. Storing the result is left to
/// the caller so that embedding can run without holding a store lock.
pub async fn prepare_document(
    title: &str,
    text: &str,
    metadata: Metadata,
    chunking: &ChunkingConfig,
    embedder: &Embedder,
) -> Result<PreparedDocument, PipelineError> {
    let document = corpus::ingest(title, text, metadata)?;
    let chunks = corpus::chunk_document(&document, chunking)?;
    let texts: Vec<String> = chunks.iter().map(|c| c.content.clone()).collect();
    let embeddings = embedder.embed_batch(&texts).await?;
    Ok(PreparedDocument {
        document_id: document.id,
        items: chunks.into_iter().zip(embeddings).collect(),
    })
}
