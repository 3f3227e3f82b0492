//! The user-message grammar shared by prompt assembly and the stub model.
//!
//! ```text
//! CONTEXT:
//! [1] (source: <label>; lines <from>-<to>)
//! <content>
//! ---
//! [2] ...
//! QUESTION:
//! <question>
//! Answer using ONLY the context above. Cite the bracketed source numbers you used. If the context is insufficient, say so.
//! ```
//!
//! The rendering is byte-exact so that the text can be parsed back.

use thiserror::Error;

use crate::corpus::Chunk;

pub const CONTEXT_HEADER: &str = "CONTEXT:\n";
pub const QUESTION_HEADER: &str = "QUESTION:\n";
pub const ENTRY_TERMINATOR: &str = "\n---\n";
pub const ANSWER_INSTRUCTION: &str = "\nAnswer using ONLY the context above. Cite the bracketed source numbers you used. If the context is insufficient, say so.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptParseError {
    #[error("missing CONTEXT header")]
    MissingContext,
    #[error("malformed header for context entry {0}")]
    BadEntryHeader(usize),
    #[error("unterminated context entry {0}")]
    UnterminatedEntry(usize),
    #[error("missing answer instruction after the question")]
    MissingInstruction,
}

/// Source labels are rendered on one line.
fn sanitize_label(label: &str) -> String {
    label.replace(['\n', '\r'], " ")
}

/// One `[i] (...)\n{content}\n---\n` block; `index` is 1-based.
pub fn render_entry(index: usize, chunk: &Chunk) -> String {
    format!(
        "[{index}] (source: {}; lines {}-{})\n{}{ENTRY_TERMINATOR}",
        sanitize_label(chunk.source_label()),
        chunk.line_start,
        chunk.line_end,
        chunk.content
    )
}

pub fn render_question(question: &str) -> String {
    format!("{QUESTION_HEADER}{question}{ANSWER_INSTRUCTION}")
}

pub fn render_user_message<'a>(
    question: &str,
    chunks: impl IntoIterator<Item = &'a Chunk>,
) -> String {
    let mut out = String::from(CONTEXT_HEADER);
    for (i, chunk) in chunks.into_iter().enumerate() {
        out.push_str(&render_entry(i + 1, chunk));
    }
    out.push_str(&render_question(question));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextEntry {
    pub index: usize,
    pub source: String,
    pub line_start: usize,
    pub line_end: usize,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub entries: Vec<ContextEntry>,
    pub question: String,
}

fn entry_prefix(index: usize) -> String {
    format!("[{index}] (source: ")
}

fn parse_header(index: usize, line: &str) -> Option<(String, usize, usize)> {
    let rest = line.strip_prefix(&entry_prefix(index))?.strip_suffix(')')?;
    let (source, span) = rest.rsplit_once("; lines ")?;
    let (from, to) = span.split_once('-')?;
    Some((source.to_owned(), from.parse().ok()?, to.parse().ok()?))
}

/// Parses a user message produced by [`render_user_message`].
///
/// An entry's content ends at the first terminator that is immediately
/// followed by the next entry's header or by the question header.
pub fn parse_user_message(text: &str) -> Result<ParsedPrompt, PromptParseError> {
    let mut rest = text
        .strip_prefix(CONTEXT_HEADER)
        .ok_or(PromptParseError::MissingContext)?;
    let mut entries = Vec::new();
    loop {
        if let Some(tail) = rest.strip_prefix(QUESTION_HEADER) {
            let question = tail
                .strip_suffix(ANSWER_INSTRUCTION)
                .ok_or(PromptParseError::MissingInstruction)?;
            return Ok(ParsedPrompt {
                entries,
                question: question.to_owned(),
            });
        }
        let index = entries.len() + 1;
        let (header, body) = rest
            .split_once('\n')
            .ok_or(PromptParseError::BadEntryHeader(index))?;
        let (source, line_start, line_end) =
            parse_header(index, header).ok_or(PromptParseError::BadEntryHeader(index))?;
        let next_entry = format!("{ENTRY_TERMINATOR}{}", entry_prefix(index + 1));
        let question_start = format!("{ENTRY_TERMINATOR}{QUESTION_HEADER}");
        // Matches may overlap (content ending in "\n---"), so scan every
        // '\n' rather than using non-overlapping `match_indices`.
        let end = body
            .char_indices()
            .filter(|&(_, c)| c == '\n')
            .map(|(pos, _)| pos)
            .find(|&pos| {
                body[pos..].starts_with(&next_entry) || body[pos..].starts_with(&question_start)
            })
            .ok_or(PromptParseError::UnterminatedEntry(index))?;
        entries.push(ContextEntry {
            index,
            source,
            line_start,
            line_end,
            content: body[..end].to_owned(),
        });
        rest = &body[end + ENTRY_TERMINATOR.len()..];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Metadata;
    use proptest::prelude::*;

    fn chunk(content: &str, title: &str, source: Option<&str>, lines: (usize, usize)) -> Chunk {
        let mut metadata = Metadata::new();
        if let Some(s) = source {
            metadata.insert("source".into(), s.into());
        }
        Chunk {
            id: "c".into(),
            document_id: "d".into(),
            title: title.into(),
            content: content.into(),
            char_start: 0,
            char_end: content.chars().count(),
            line_start: lines.0,
            line_end: lines.1,
            metadata,
        }
    }

    #[test]
    fn renders_exact_bytes() {
        let a = chunk("alpha", "Book A", Some("blob"), (3, 4));
        let b = chunk("beta", "Book B", None, (1, 1));
        assert_eq!(
            render_user_message("why?", [&a, &b]),
            "CONTEXT:\n\
             [1] (source: blob; lines 3-4)\nalpha\n---\n\
             [2] (source: Book B; lines 1-1)\nbeta\n---\n\
             QUESTION:\nwhy?\nAnswer using ONLY the context above. Cite the bracketed source numbers you used. If the context is insufficient, say so."
        );
    }

    #[test]
    fn empty_source_falls_back_to_title() {
        let c = chunk("x", "Title", Some(""), (1, 1));
        assert!(render_entry(1, &c).starts_with("[1] (source: Title; lines 1-1)\n"));
    }

    #[test]
    fn empty_context_block() {
        let text = render_user_message("q", []);
        assert_eq!(text, format!("CONTEXT:\nQUESTION:\nq{ANSWER_INSTRUCTION}"));
        let parsed = parse_user_message(&text).unwrap();
        assert!(parsed.entries.is_empty());
        assert_eq!(parsed.question, "q");
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_user_message("hello"),
            Err(PromptParseError::MissingContext)
        );
        assert_eq!(
            parse_user_message("CONTEXT:\nQUESTION:\nq"),
            Err(PromptParseError::MissingInstruction)
        );
        assert_eq!(
            parse_user_message("CONTEXT:\n[2] (source: a; lines 1-1)\nx\n---\nQUESTION:\nq"),
            Err(PromptParseError::BadEntryHeader(1))
        );
        assert_eq!(
            parse_user_message("CONTEXT:\n[1] (source: a; lines 1-1)\nx"),
            Err(PromptParseError::UnterminatedEntry(1))
        );
    }

    #[test]
    fn content_with_lookalike_delimiters() {
        let tricky = "line\n---\nnot a header\n---\n[9] (source: x; lines 1-1)";
        let c = chunk(tricky, "T", Some("a; lines 2-3"), (5, 6));
        let parsed = parse_user_message(&render_user_message("q", [&c])).unwrap();
        assert_eq!(parsed.entries[0].content, tricky);
        assert_eq!(parsed.entries[0].source, "a; lines 2-3");
        assert_eq!(
            (parsed.entries[0].line_start, parsed.entries[0].line_end),
            (5, 6)
        );
    }

    fn arb_piece() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                Just("\n".to_owned()),
                Just("---".to_owned()),
                Just("[".to_owned()),
                Just("]".to_owned()),
                Just("QUESTION:".to_owned()),
                Just("(source: ".to_owned()),
                "[a-zA-Z0-9 ]{1,6}",
                ".{1,3}",
            ],
            1..30,
        )
        .prop_map(|parts| parts.concat())
    }

    /// Content in which no boundary pattern starts before its own terminator.
    fn well_formed(content: &str) -> bool {
        let rendered = format!("{content}{ENTRY_TERMINATOR}");
        (0..content.len())
            .filter(|&i| rendered.is_char_boundary(i))
            .all(|i| {
                let tail = &rendered[i..];
                !tail.starts_with("\n---\n[") && !tail.starts_with("\n---\nQUESTION:\n")
            })
    }

    proptest! {
        #[test]
        fn well_formed_prompts_parse_back(
            contents in prop::collection::vec(arb_piece(), 0..8),
            labels in prop::collection::vec("[^\n\r]{0,12}", 8),
            question in arb_piece(),
        ) {
            let chunks: Vec<Chunk> = contents
                .iter()
                .filter(|c| well_formed(c))
                .zip(&labels)
                .enumerate()
                .map(|(i, (c, l))| chunk(c, "fallback", Some(l), (i + 1, i + 2)))
                .collect();
            let text = render_user_message(&question, &chunks);
            let parsed = parse_user_message(&text).unwrap();
            prop_assert_eq!(parsed.entries.len(), chunks.len());
            prop_assert_eq!(&parsed.question, &question);
            for (entry, c) in parsed.entries.iter().zip(&chunks) {
                prop_assert_eq!(&entry.content, &c.content);
                prop_assert_eq!(entry.source.as_str(), c.source_label());
                prop_assert_eq!((entry.line_start, entry.line_end), (c.line_start, c.line_end));
            }
        }
    }
}
