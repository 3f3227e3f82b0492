//! Retrieval-augmented question answering with exact source provenance.
//!
//! Documents are split into overlapping fixed-length chunks, embedded, and
//! kept in an in-memory vector store. A question is embedded, the most
//! similar chunks are retrieved, and a prompt is assembled under a token
//! budget. The chat model's answer is returned together with the exact
//! chunks that were placed in the prompt, or a refusal when retrieval finds
//! nothing relevant.

pub mod config;
pub mod corpus;
pub mod embedder;
pub mod llm_gateway;
pub mod pipeline;
pub mod prompt;
pub mod vectorstore;

pub use corpus::{Chunk, ChunkingConfig, Document, Metadata};
pub use embedder::{Embedder, EmbedderConfig, Embedding};
pub use llm_gateway::{ChatGateway, GatewayConfig};
pub use pipeline::{ask, GroundedAnswer, PipelineConfig, RefusalReason};
pub use vectorstore::{RetrievedChunk, VectorStore};
