//! Document ingestion and fixed-length overlapping chunking.
//!
//! Chunk boundaries are purely positional and counted in Unicode scalar
//! values. Windows start at `0, s, 2s, ...` with stride `s = chunk_size -
//! overlap`; the last window is clipped to the end of the body, and a window
//! that would lie entirely inside its predecessor is never emitted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Metadata key that carries the citation label of a chunk.
pub const SOURCE_KEY: &str = "source";
pub const LINES_FROM_KEY: &str = "loc.lines.from";
pub const LINES_TO_KEY: &str = "loc.lines.to";

pub const DEFAULT_CHUNK_SIZE: usize = 2000;
pub const DEFAULT_CHUNK_OVERLAP: usize = 100;

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("document body is empty")]
    EmptyDocument,
    #[error("invalid chunking config: {0}")]
    InvalidConfig(String),
    #[error("malformed chunk record: {0}")]
    MalformedRecord(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    pub metadata: Metadata,
}

impl Document {
    pub fn char_len(&self) -> usize {
        self.body.chars().count()
    }

    pub fn line_count(&self) -> usize {
        self.body.matches('\n').count() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub document_id: String,
    /// Title of the owning document; used as the citation label when the
    /// metadata has no `source` entry.
    pub title: String,
    pub content: String,
    /// Half-open span `[char_start, char_end)` in characters of the body.
    pub char_start: usize,
    pub char_end: usize,
    /// 1-based, inclusive.
    pub line_start: usize,
    pub line_end: usize,
    pub metadata: Metadata,
}

impl Chunk {
    /// The label shown next to this chunk when it is cited.
    pub fn source_label(&self) -> &str {
        match self.metadata.get(SOURCE_KEY) {
            Some(source) if !source.is_empty() => source,
            _ => &self.title,
        }
    }

    pub fn char_len(&self) -> usize {
        self.char_end - self.char_start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

impl ChunkingConfig {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, CorpusError> {
        let cfg = Self {
            chunk_size,
            overlap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_size == 0 {
            return Err(CorpusError::InvalidConfig(
                "chunk_size must be positive".into(),
            ));
        }
        if self.overlap >= self.chunk_size {
            return Err(CorpusError::InvalidConfig(format!(
                "overlap ({}) must be smaller than chunk_size ({})",
                self.overlap, self.chunk_size
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }
}

/// Normalizes `\r\n` and lone `\r` to `\n`.
pub fn normalize_line_endings(text: &str) -> String {
    if !text.contains('\r') {
        return text.to_owned();
    }
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// Builds a [`Document`] with a fresh id.
pub fn ingest(title: &str, body: &str, metadata: Metadata) -> Result<Document, CorpusError> {
    let body = normalize_line_endings(body);
    if body.trim().is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    Ok(Document {
        id: uuid::Uuid::new_v4().to_string(),
        title: title.to_owned(),
        body,
        metadata,
    })
}

/// Character spans `[start, end)` of the chunks of a text of `len` characters.
pub fn chunk_spans(len: usize, cfg: &ChunkingConfig) -> Result<Vec<(usize, usize)>, CorpusError> {
    cfg.validate()?;
    let mut spans = Vec::with_capacity(len / cfg.stride() + 1);
    if len == 0 {
        return Ok(spans);
    }
    let mut start = 0;
    loop {
        let end = (start + cfg.chunk_size).min(len);
        spans.push((start, end));
        // Any later window would end at `len` too and so be contained in this one.
        if end == len {
            break;
        }
        start += cfg.stride();
    }
    Ok(spans)
}

pub fn chunk_document(doc: &Document, cfg: &ChunkingConfig) -> Result<Vec<Chunk>, CorpusError> {
    // Byte offset of every char boundary, including the end of the body.
    let boundaries: Vec<usize> = doc
        .body
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(doc.body.len()))
        .collect();
    let len = boundaries.len() - 1;

    // Line number (1-based) of each character.
    let mut line_of = Vec::with_capacity(len);
    let mut line = 1;
    for c in doc.body.chars() {
        line_of.push(line);
        if c == '\n' {
            line += 1;
        }
    }

    let spans = chunk_spans(len, cfg)?;
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| Chunk {
            id: format!("{}:{}", doc.id, index),
            document_id: doc.id.clone(),
            title: doc.title.clone(),
            content: doc.body[boundaries[start]..boundaries[end]].to_owned(),
            char_start: start,
            char_end: end,
            line_start: line_of[start],
            line_end: line_of[end - 1],
            metadata: doc.metadata.clone(),
        })
        .collect())
}

/// The exported chunk shape: `pageContent` followed by a metadata object
/// whose entries are sorted by key.
#[derive(Serialize)]
struct ExportedChunk<'a> {
    #[serde(rename = "pageContent")]
    page_content: &'a str,
    metadata: Map<String, Value>,
}

/// The chunk's metadata plus its line span, with `source` always present.
pub fn export_metadata(chunk: &Chunk) -> Map<String, Value> {
    // serde_json's default map is ordered by key.
    let mut metadata: Map<String, Value> = chunk
        .metadata
        .iter()
        .map(|(k, v)| (k.clone(), Value::String(v.clone())))
        .collect();
    metadata.insert(LINES_FROM_KEY.into(), Value::from(chunk.line_start));
    metadata.insert(LINES_TO_KEY.into(), Value::from(chunk.line_end));
    metadata
        .entry(SOURCE_KEY)
        .or_insert_with(|| Value::String(String::new()));
    metadata
}

/// Serializes a chunk as a single-line JSON object.
pub fn export_chunk_json(chunk: &Chunk) -> String {
    serde_json::to_string(&ExportedChunk {
        page_content: &chunk.content,
        metadata: export_metadata(chunk),
    })
    .expect("string-keyed map always serializes")
}

/// The fields recoverable from an exported chunk record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFields {
    pub content: String,
    pub line_start: usize,
    pub line_end: usize,
    /// User metadata with the line keys removed; `source` is kept as exported.
    pub metadata: Metadata,
}

pub fn parse_chunk_json(text: &str) -> Result<ExportedFields, CorpusError> {
    #[derive(Deserialize)]
    struct Record {
        #[serde(rename = "pageContent")]
        page_content: String,
        metadata: Map<String, Value>,
    }
    let record: Record =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedRecord(e.to_string()))?;
    let (line_start, line_end, metadata) = split_export_metadata(&record.metadata)?;
    Ok(ExportedFields {
        content: record.page_content,
        line_start,
        line_end,
        metadata,
    })
}

/// Separates the line span from the string entries of an exported metadata
/// object.
pub(crate) fn split_export_metadata(
    metadata: &Map<String, Value>,
) -> Result<(usize, usize, Metadata), CorpusError> {
    let line = |key: &str| {
        metadata
            .get(key)
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .ok_or_else(|| CorpusError::MalformedRecord(format!("missing integer metadata {key}")))
    };
    let line_start = line(LINES_FROM_KEY)?;
    let line_end = line(LINES_TO_KEY)?;
    let mut entries = Metadata::new();
    for (key, v) in metadata {
        if key == LINES_FROM_KEY || key == LINES_TO_KEY {
            continue;
        }
        let s = v.as_str().ok_or_else(|| {
            CorpusError::MalformedRecord(format!("metadata {key} is not a string"))
        })?;
        entries.insert(key.clone(), s.to_owned());
    }
    Ok((line_start, line_end, entries))
}
