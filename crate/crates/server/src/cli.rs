//! Command-line interface.
//!
//! Every verb except `serve` loads the store file, acts, and (for verbs that
//! change it) writes it back.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use grounded_rag::config::AppConfig;
use grounded_rag::corpus::{Metadata, SOURCE_KEY};
use grounded_rag::pipeline::{self, GroundedAnswer};
use grounded_rag::{ChatGateway, Embedder, VectorStore};

use crate::api::{self, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "grounded-rag",
    version,
    about = "Answer questions from your own documents, with citations"
)]
pub struct Cli {
    /// Config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true, env = "GROUNDED_RAG_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store file; overrides the configured path.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk, embed and store a UTF-8 text file.
    Ingest {
        file: PathBuf,
        /// Document title; defaults to the file name.
        #[arg(long)]
        title: Option<String>,
        /// Metadata entry, repeatable. `source` defaults to the file name.
        #[arg(long = "meta", value_name = "KEY=VALUE", value_parser = parse_meta)]
        meta: Vec<(String, String)>,
    },
    /// Answer a question from the stored documents.
    Ask {
        question: String,
        /// Number of chunks to retrieve.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Write the store file after every ingest.
        #[arg(long)]
        persist: bool,
    },
    /// Write the store, embeddings included, to a file.
    ExportStore { path: PathBuf },
    /// Replace the store with the contents of an exported file.
    ImportStore { path: PathBuf },
}

fn parse_meta(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_owned(), v.to_owned())),
        _ => Err(format!("expected KEY=VALUE, got {s:?}")),
    }
}

fn load_store(path: &Path) -> Result<VectorStore> {
    if !path.exists() {
        return Ok(VectorStore::new());
    }
    VectorStore::load(path).with_context(|| format!("cannot load store {}", path.display()))
}

fn save_store(store: &VectorStore, path: &Path) -> Result<usize> {
    store
        .save(path)
        .with_context(|| format!("cannot write store {}", path.display()))
}

/// The answer, then one line per source: rank, score, source, line span.
pub fn render_answer(answer: &GroundedAnswer) -> String {
    let mut out = String::new();
    out.push_str(answer.answer.trim_end());
    out.push('\n');
    if let Some(reason) = answer.refusal_reason {
        let _ = writeln!(out, "\n(refused: {})", reason.as_str());
    }
    if !answer.sources.is_empty() {
        out.push_str("\nSOURCES\n");
        for s in &answer.sources {
            let extra: Vec<String> = s
                .chunk
                .metadata
                .iter()
                .filter(|(k, v)| k.as_str() != SOURCE_KEY && !v.is_empty())
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            let _ = write!(
                out,
                "[{}] score {:.4}  source: {}  lines {}-{}",
                s.rank,
                s.score,
                s.chunk.source_label(),
                s.chunk.line_start,
                s.chunk.line_end
            );
            if !extra.is_empty() {
                let _ = write!(out, "  ({})", extra.join(", "));
            }
            out.push('\n');
        }
    }
    out
}

pub async fn run(cli: Cli) -> Result<()> {
    let mut config = AppConfig::load(cli.config.as_deref())?;
    if let Some(store) = cli.store {
        config.server.store_path = store;
    }
    let store_path = config.server.store_path.clone();

    match cli.command {
        Command::Ingest { file, title, meta } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("cannot read {}", file.display()))?;
            let file_name = file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut metadata: Metadata = meta.into_iter().collect();
            metadata
                .entry(SOURCE_KEY.to_owned())
                .or_insert_with(|| file_name.clone());
            let title = title.unwrap_or(file_name);

            let mut store = load_store(&store_path)?;
            let embedder = Embedder::from_config(&config.embedder)?;
            let prepared =
                pipeline::prepare_document(&title, &text, metadata, &config.chunking, &embedder)
                    .await?;
            let chunks = store.add_all(prepared.items)?;
            save_store(&store, &store_path)?;
            println!(
                "ingested {} as document {} ({chunks} chunks, {} in store)",
                file.display(),
                prepared.document_id,
                store.len()
            );
        }
        Command::Ask {
            question,
            k,
            temperature,
        } => {
            let mut cfg = config.pipeline.clone();
            if let Some(k) = k {
                cfg.k = k;
            }
            if let Some(t) = temperature {
                cfg.generation.temperature = t;
            }
            let store = load_store(&store_path)?;
            let embedder = Embedder::from_config(&config.embedder)?;
            let gateway = ChatGateway::from_config(&config.gateway)?;
            let answer = pipeline::ask(&question, &cfg, &embedder, &store, &gateway).await?;
            if let Some(error) = &answer.error {
                bail!("chat model request failed: {error}");
            }
            print!("{}", render_answer(&answer));
        }
        Command::Serve {
            port,
            host,
            persist,
        } => {
            if let Some(port) = port {
                config.server.port = port;
            }
            let store = load_store(&store_path)?;
            let addr: SocketAddr = format!("{host}:{}", config.server.port)
                .parse()
                .with_context(|| format!("invalid listen address {host}"))?;
            let mut state = AppState::new(config, store)?;
            if persist {
                state.persist_to = Some(store_path);
            }
            let listener = tokio::net::TcpListener::bind(addr)
                .await
                .with_context(|| format!("cannot listen on {addr}"))?;
            tracing::info!(%addr, chunks = state.store.read().await.len(), "serving");
            axum::serve(listener, api::router(Arc::new(state)))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
        }
        Command::ExportStore { path } => {
            let store = load_store(&store_path)?;
            let n = save_store(&store, &path)?;
            println!("exported {n} records to {}", path.display());
        }
        Command::ImportStore { path } => {
            let store = VectorStore::load(&path)
                .with_context(|| format!("cannot load store {}", path.display()))?;
            let n = save_store(&store, &store_path)?;
            println!("imported {n} records into {}", store_path.display());
        }
    }
    Ok(())
}
