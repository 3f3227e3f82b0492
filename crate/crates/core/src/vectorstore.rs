//! In-memory vector store with exact cosine top-k search and
//! newline-delimited JSON persistence.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{self, Chunk, SOURCE_KEY};
use crate::embedder::Embedding;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate chunk id {0}")]
    DuplicateChunkId(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("corrupt store file at line {line}: {reason}")]
    CorruptStoreFile { line: usize, reason: String },
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.is_zero() || b.is_zero() {
        return Ok(0.0);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub chunk: Chunk,
    pub embedding: Embedding,
    pub insert_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub chunk: Chunk,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Default, Clone)]
pub struct VectorStore {
    records: Vec<StoreRecord>,
    ids: HashSet<String>,
    next_seq: u64,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Dimension of stored embeddings, if any are stored.
    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.embedding.dim())
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn add(&mut self, chunk: Chunk, embedding: Embedding) -> Result<&StoreRecord, StoreError> {
        let seq = self.next_seq;
        self.insert(chunk, embedding, seq)
    }

    /// Adds all pairs or none of them.
    pub fn add_all(&mut self, items: Vec<(Chunk, Embedding)>) -> Result<usize, StoreError> {
        let mut seen = HashSet::new();
        for (chunk, embedding) in &items {
            self.check_dim(embedding)?;
            if let Some(first) = items.first() {
                if first.1.dim() != embedding.dim() {
                    return Err(StoreError::DimensionMismatch {
                        expected: first.1.dim(),
                        actual: embedding.dim(),
                    });
                }
            }
            if self.ids.contains(&chunk.id) || !seen.insert(chunk.id.as_str()) {
                return Err(StoreError::DuplicateChunkId(chunk.id.clone()));
            }
        }
        let n = items.len();
        for (chunk, embedding) in items {
            self.add(chunk, embedding)?;
        }
        Ok(n)
    }

    fn check_dim(&self, embedding: &Embedding) -> Result<(), StoreError> {
        match self.dim() {
            Some(expected) if expected != embedding.dim() => Err(StoreError::DimensionMismatch {
                expected,
                actual: embedding.dim(),
            }),
            _ => Ok(()),
        }
    }

    fn insert(
        &mut self,
        chunk: Chunk,
        embedding: Embedding,
        insert_seq: u64,
    ) -> Result<&StoreRecord, StoreError> {
        self.check_dim(&embedding)?;
        if self.ids.contains(&chunk.id) {
            return Err(StoreError::DuplicateChunkId(chunk.id));
        }
        self.ids.insert(chunk.id.clone());
        self.next_seq = self.next_seq.max(insert_seq + 1);
        self.records.push(StoreRecord {
            chunk,
            embedding,
            insert_seq,
        });
        Ok(self.records.last().expect("just pushed"))
    }

    /// The `min(k, len)` most similar records, best first; equal scores keep
    /// insertion order.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<RetrievedChunk>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        if self.records.is_empty() {
            return Ok(Vec::new());
        }
        self.check_dim(query)?;
        let mut scored = self
            .records
            .iter()
            .map(|r| Ok((cosine(query, &r.embedding)?, r)))
            .collect::<Result<Vec<_>, StoreError>>()?;
        let order = |a: &(f64, &StoreRecord), b: &(f64, &StoreRecord)| {
            b.0.total_cmp(&a.0)
                .then(a.1.insert_seq.cmp(&b.1.insert_seq))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, r))| RetrievedChunk {
                chunk: r.chunk.clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    /// Writes one JSON object per record and returns the record count.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<usize, StoreError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(self.records.len())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<(), StoreError> {
        for record in &self.records {
            serde_json::to_writer(&mut *out, &StoreLine::from(record))
                .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Writes every chunk in the exported chunk shape, one per line, in
    /// insertion order.
    pub fn export_chunks(&self, out: &mut impl Write) -> Result<usize, StoreError> {
        for record in &self.records {
            out.write_all(corpus::export_chunk_json(&record.chunk).as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(self.records.len())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self, StoreError> {
        let mut store = Self::new();
        let mut seqs = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| StoreError::CorruptStoreFile {
                line: line_no,
                reason,
            };
            let parsed: StoreLine =
                serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let record = StoreRecord::try_from(parsed).map_err(corrupt)?;
            if !seqs.insert(record.insert_seq) {
                return Err(corrupt(format!(
                    "duplicate insert_seq {}",
                    record.insert_seq
                )));
            }
            store
                .insert(record.chunk, record.embedding, record.insert_seq)
                .map_err(|e| corrupt(e.to_string()))?;
        }
        // Records are kept in insertion order regardless of file order.
        store.records.sort_by_key(|r| r.insert_seq);
        Ok(store)
    }
}

/// Chunk fields beyond the exported `pageContent`/`metadata` pair.
#[derive(Serialize, Deserialize)]
struct ChunkIdentity {
    id: String,
    document_id: String,
    title: String,
    char_start: usize,
    char_end: usize,
}

/// One line of the store file: the exported chunk shape followed by the
/// chunk identity, embedding and insertion sequence.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreLine {
    #[serde(rename = "pageContent")]
    page_content: String,
    metadata: Map<String, Value>,
    chunk: ChunkIdentity,
    embedding: Embedding,
    insert_seq: u64,
}

impl From<&StoreRecord> for StoreLine {
    fn from(record: &StoreRecord) -> Self {
        let chunk = &record.chunk;
        Self {
            page_content: chunk.content.clone(),
            metadata: corpus::export_metadata(chunk),
            chunk: ChunkIdentity {
                id: chunk.id.clone(),
                document_id: chunk.document_id.clone(),
                title: chunk.title.clone(),
                char_start: chunk.char_start,
                char_end: chunk.char_end,
            },
            embedding: record.embedding.clone(),
            insert_seq: record.insert_seq,
        }
    }
}

impl TryFrom<StoreLine> for StoreRecord {
    type Error = String;

    fn try_from(line: StoreLine) -> Result<Self, String> {
        let (line_start, line_end, mut metadata) =
            corpus::split_export_metadata(&line.metadata).map_err(|e| e.to_string())?;
        // Export always writes `source`; an empty one stands for "absent".
        if metadata.get(SOURCE_KEY).is_some_and(String::is_empty) {
            metadata.remove(SOURCE_KEY);
        }
        let chunk = Chunk {
            id: line.chunk.id,
            document_id: line.chunk.document_id,
            title: line.chunk.title,
            content: line.page_content,
            char_start: line.chunk.char_start,
            char_end: line.chunk.char_end,
            line_start,
            line_end,
            metadata,
        };
        if chunk.char_start >= chunk.char_end
            || chunk.content.chars().count() != chunk.char_end - chunk.char_start
        {
            return Err("chunk span does not match its content".into());
        }
        if chunk.line_start == 0 || chunk.line_start > chunk.line_end {
            return Err("invalid line span".into());
        }
        Ok(StoreRecord {
            chunk,
            embedding: line.embedding,
            insert_seq: line.insert_seq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Metadata;

    fn chunk(id: &str) -> Chunk {
        Chunk {
            id: id.into(),
            document_id: "doc".into(),
            title: "title".into(),
            content: format!("content of {id}"),
            char_start: 0,
            char_end: format!("content of {id}").chars().count(),
            line_start: 1,
            line_end: 1,
            metadata: Metadata::new(),
        }
    }

    fn emb(values: &[f64]) -> Embedding {
        Embedding::normalized(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = emb(&[0.3, 0.4, 0.5]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        // (1,0)·(1,1)/√2 = 1/√2
        let c = cosine(&emb(&[1.0, 0.0]), &emb(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&Embedding::zero(2), &emb(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine(&emb(&[1.0, 0.0]), &emb(&[1.0, 0.0, 0.0])),
            Err(StoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn add_and_duplicates() {
        let mut store = VectorStore::new();
        store.add(chunk("a"), emb(&[1.0, 0.0])).unwrap();
        assert_eq!(store.len(), 1);
        assert!(matches!(
            store.add(chunk("a"), emb(&[0.0, 1.0])),
            Err(StoreError::DuplicateChunkId(_))
        ));
        assert!(matches!(
            store.add(chunk("b"), emb(&[0.0, 1.0, 0.0])),
            Err(StoreError::DimensionMismatch { .. })
        ));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn insert_seq_strictly_increasing() {
        let mut store = VectorStore::new();
        for i in 0..20 {
            store
                .add(chunk(&i.to_string()), emb(&[1.0, i as f64]))
                .unwrap();
        }
        assert_eq!(store.len(), 20);
        assert!(store
            .records()
            .windows(2)
            .all(|w| w[0].insert_seq < w[1].insert_seq));
    }

    #[test]
    fn add_all_is_atomic() {
        let mut store = VectorStore::new();
        store.add(chunk("x"), emb(&[1.0, 0.0])).unwrap();
        let err = store.add_all(vec![
            (chunk("y"), emb(&[1.0, 0.0])),
            (chunk("x"), emb(&[0.0, 1.0])),
        ]);
        assert!(err.is_err());
        assert_eq!(store.len(), 1);
        assert!(store
            .add_all(vec![
                (chunk("p"), emb(&[1.0, 0.0])),
                (chunk("p"), emb(&[1.0, 0.0]))
            ])
            .is_err());
        assert_eq!(
            store.add_all(vec![(chunk("y"), emb(&[1.0, 0.0]))]).unwrap(),
            1
        );
    }

    #[test]
    fn search_three_vectors() {
        let mut store = VectorStore::new();
        store.add(chunk("1"), emb(&[1.0, 0.0])).unwrap();
        store.add(chunk("2"), emb(&[0.0, 1.0])).unwrap();
        store.add(chunk("3"), emb(&[0.6, 0.8])).unwrap();
        let hits = store.search(&emb(&[1.0, 0.0]), 2).unwrap();
        let got: Vec<_> = hits
            .iter()
            .map(|h| (h.chunk.id.as_str(), h.score, h.rank))
            .collect();
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].0, got[0].2), ("1", 1));
        assert_eq!((got[1].0, got[1].2), ("3", 2));
        assert!((got[0].1 - 1.0).abs() < 1e-12);
        assert!((got[1].1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn search_edge_cases() {
        let mut store = VectorStore::new();
        assert!(store.search(&emb(&[1.0, 0.0]), 3).unwrap().is_empty());
        assert!(matches!(
            store.search(&emb(&[1.0, 0.0]), 0),
            Err(StoreError::InvalidK)
        ));
        store.add(chunk("a"), emb(&[1.0, 0.0])).unwrap();
        store.add(chunk("b"), emb(&[1.0, 0.0])).unwrap();
        store.add(chunk("c"), emb(&[0.0, 1.0])).unwrap();
        let all = store.search(&emb(&[1.0, 0.0]), 10).unwrap();
        let ids: Vec<_> = all.iter().map(|h| h.chunk.id.as_str()).collect();
        // tie between a and b resolved by insertion order
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(
            all.iter().map(|h| h.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert!(matches!(
            store.search(&emb(&[1.0, 0.0, 0.0]), 1),
            Err(StoreError::DimensionMismatch { .. })
        ));
        let zero_query = store.search(&Embedding::zero(2), 1).unwrap();
        assert_eq!(zero_query[0].score, 0.0);
        assert_eq!(zero_query[0].chunk.id, "a");
    }

    #[test]
    fn empty_store_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        assert_eq!(VectorStore::new().save(&path).unwrap(), 0);
        assert!(VectorStore::load(&path).unwrap().is_empty());
    }

    #[test]
    fn record_line_shape() {
        let mut store = VectorStore::new();
        let mut c = chunk("a");
        c.metadata.insert("source".into(), "book".into());
        store.add(c, emb(&[0.6, 0.8])).unwrap();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line,
            concat!(
                r#"{"pageContent":"content of a","metadata":{"loc.lines.from":1,"loc.lines.to":1,"source":"book"},"#,
                r#""chunk":{"id":"a","document_id":"doc","title":"title","char_start":0,"char_end":12},"#,
                r#""embedding":[0.6,0.8],"insert_seq":0}"#,
                "\n"
            )
        );
        let back = VectorStore::read_from(line.as_bytes()).unwrap();
        assert_eq!(back.records(), store.records());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let mut store = VectorStore::new();
        store.add(chunk("a"), emb(&[1.0, 0.0])).unwrap();
        store.add(chunk("b"), emb(&[0.0, 1.0])).unwrap();
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let cut = &buf[..buf.len() - 10];
        match VectorStore::read_from(cut) {
            Err(StoreError::CorruptStoreFile { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corrupt store, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_records() {
        let bad_norm = r#"{"pageContent":"x","metadata":{"loc.lines.from":1,"loc.lines.to":1,"source":""},"chunk":{"id":"a","document_id":"d","title":"","char_start":0,"char_end":1},"embedding":[3.0,4.0],"insert_seq":0}"#;
        assert!(matches!(
            VectorStore::read_from(bad_norm.as_bytes()),
            Err(StoreError::CorruptStoreFile { line: 1, .. })
        ));
        let bad_span = bad_norm
            .replace("[3.0,4.0]", "[0.6,0.8]")
            .replace(r#""char_end":1"#, r#""char_end":4"#);
        assert!(VectorStore::read_from(bad_span.as_bytes()).is_err());
        let good = bad_norm.replace("[3.0,4.0]", "[0.6,0.8]");
        let dup = format!("{good}\n{good}\n");
        assert!(VectorStore::read_from(dup.as_bytes()).is_err());
        assert!(matches!(
            VectorStore::load("/nonexistent/store.jsonl"),
            Err(StoreError::IoFailure(_))
        ));
    }
}
