//! Document ingestion, paragraph segmentation and token-balanced partitioning.
//!
//! A document's text is stored in canonical form: line endings become `\n`,
//! every paragraph is trimmed and paragraphs are separated by exactly one blank
//! line. All spans in the knowledge base index this canonical text, so the
//! paragraph list joined with [`PARAGRAPH_SEPARATOR`] reproduces it exactly.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ids::Span;

pub const PARAGRAPH_SEPARATOR: &str = "\n\n";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("document `{0}` is empty")]
    EmptyDocument(String),
    #[error("invalid partition config: {0}")]
    InvalidConfig(String),
    #[error("duplicate document id `{0}` in corpus manifest")]
    DuplicateDocId(String),
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    /// Canonical text; see the module docs.
    pub text: String,
    pub source_path: Option<PathBuf>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, raw_text: &str, source_path: Option<PathBuf>) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        let text = canonicalize(raw_text);
        if text.is_empty() {
            return Err(CorpusError::EmptyDocument(doc_id));
        }
        Ok(Document {
            doc_id,
            text,
            source_path,
        })
    }

    /// SHA-256 of the canonical text.
    pub fn content_hash(&self) -> String {
        crate::text::sha256_hex(self.text.as_bytes())
    }
}

/// Normalizes line endings and paragraph breaks. A paragraph break is one or
/// more whitespace-only lines; single newlines stay inside the paragraph.
pub fn canonicalize(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in unified.split('\n') {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n").trim().to_string());
    }
    paragraphs.join(PARAGRAPH_SEPARATOR)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    /// 0-based position in the document. Pieces of a split paragraph share it.
    pub ordinal: usize,
    pub text: String,
    pub span: Span,
}

pub fn segment_paragraphs(document: &Document) -> Result<Vec<Paragraph>, CorpusError> {
    if document.text.trim().is_empty() {
        return Err(CorpusError::EmptyDocument(document.doc_id.clone()));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for block in document.text.split(PARAGRAPH_SEPARATOR) {
        let start = offset;
        offset += block.len() + PARAGRAPH_SEPARATOR.len();
        if block.trim().is_empty() {
            continue;
        }
        out.push(Paragraph {
            doc_id: document.doc_id.clone(),
            ordinal: out.len(),
            text: block.to_string(),
            span: Span::new(start, start + block.len()),
        });
    }
    Ok(out)
}

/// Pluggable token counter. Implementations must return 0 only for
/// empty or whitespace-only input.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// One token per maximal run of non-whitespace characters.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Token count under the default whitespace tokenizer.
pub fn count_tokens(text: &str) -> usize {
    WhitespaceTokenizer.count(text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub ct_min: usize,
    pub ct_max: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            ct_min: 500,
            ct_max: 600,
        }
    }
}

impl PartitionConfig {
    pub fn new(ct_min: usize, ct_max: usize) -> Result<Self, CorpusError> {
        let cfg = PartitionConfig { ct_min, ct_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.ct_min == 0 || self.ct_min >= self.ct_max {
            return Err(CorpusError::InvalidConfig(format!(
                "need 0 < ct_min < ct_max, got ct_min={} ct_max={}",
                self.ct_min, self.ct_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    /// 1-based position within the document.
    pub chunk_index: usize,
    pub text: String,
    pub token_count: usize,
    pub span: Span,
}

fn ends_sentence(word: &str) -> bool {
    let trimmed = word.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    trimmed.ends_with(['.', '!', '?'])
}

/// Splits a paragraph whose token count exceeds `ct_max` into ordered pieces of
/// at most `ct_max` tokens each. Cuts fall on whitespace, with the whitespace
/// kept at the end of the left piece, so concatenating the pieces reproduces
/// the paragraph exactly.
///
/// Each step targets `ceil(n / ceil(n / ct_max))` tokens for the left piece,
/// preferring the nearest sentence end within half a target of that point, and
/// recurses on the remainder.
pub fn split_long_paragraph(paragraph: &Paragraph, ct_max: usize, tokenizer: &dyn Tokenizer) -> Vec<Paragraph> {
    let mut pieces = Vec::new();
    split_rec(paragraph, 0, paragraph.text.len(), ct_max, tokenizer, &mut pieces);
    pieces
}

fn split_rec(
    paragraph: &Paragraph,
    from: usize,
    to: usize,
    ct_max: usize,
    tokenizer: &dyn Tokenizer,
    out: &mut Vec<Paragraph>,
) {
    let text = &paragraph.text[from..to];
    let total = tokenizer.count(text);
    // word start offsets (relative to `text`) and per-word token counts
    let words: Vec<(usize, &str)> = word_starts(text);
    if total <= ct_max || words.len() < 2 {
        if total > ct_max {
            log::warn!(
                "paragraph {} of `{}` has an unsplittable {total}-token run",
                paragraph.ordinal,
                paragraph.doc_id
            );
        }
        out.push(Paragraph {
            doc_id: paragraph.doc_id.clone(),
            ordinal: paragraph.ordinal,
            text: text.to_string(),
            span: Span::new(paragraph.span.start + from, paragraph.span.start + to),
        });
        return;
    }
    let pieces_needed = total.div_ceil(ct_max);
    let target = total.div_ceil(pieces_needed);

    // prefix[c] = tokens in words[..c]
    let mut prefix = Vec::with_capacity(words.len() + 1);
    prefix.push(0usize);
    for (_, w) in &words {
        prefix.push(prefix.last().unwrap() + tokenizer.count(w));
    }

    let mut best_token: Option<(usize, usize)> = None; // (distance, cut)
    let mut best_sentence: Option<(usize, usize)> = None;
    for cut in 1..words.len() {
        let left = prefix[cut];
        if left == 0 || left > ct_max {
            continue;
        }
        let dist = left.abs_diff(target);
        if best_token.is_none_or(|(d, _)| dist < d) {
            best_token = Some((dist, cut));
        }
        if ends_sentence(words[cut - 1].1) && dist <= target / 2 && best_sentence.is_none_or(|(d, _)| dist < d) {
            best_sentence = Some((dist, cut));
        }
    }
    let cut = match best_sentence.or(best_token) {
        Some((_, cut)) => cut,
        None => 1,
    };
    let boundary = from + words[cut].0;
    split_rec(paragraph, from, boundary, ct_max, tokenizer, out);
    split_rec(paragraph, boundary, to, ct_max, tokenizer, out);
}

fn word_starts(text: &str) -> Vec<(usize, &str)> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                words.push((s, &text[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        words.push((s, &text[s..]));
    }
    words
}

struct Segment<'a> {
    text: &'a str,
    span: Span,
    tokens: usize,
}

/// Greedy forward aggregation of paragraphs into chunks bounded by `ct_max`,
/// followed by a tail merge of a final chunk shorter than `ct_min` into its
/// predecessor when the merged size stays within `ct_max`.
pub fn partition(paragraphs: &[Paragraph], config: &PartitionConfig, tokenizer: &dyn Tokenizer) -> Vec<Chunk> {
    let Some(first) = paragraphs.first() else {
        return Vec::new();
    };
    let doc_id = first.doc_id.clone();

    let split_storage: Vec<Vec<Paragraph>> = paragraphs
        .iter()
        .map(|p| {
            if tokenizer.count(&p.text) > config.ct_max {
                split_long_paragraph(p, config.ct_max, tokenizer)
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut segments: Vec<Segment<'_>> = Vec::new();
    for (p, pieces) in paragraphs.iter().zip(&split_storage) {
        if pieces.is_empty() {
            segments.push(Segment {
                text: &p.text,
                span: p.span,
                tokens: tokenizer.count(&p.text),
            });
        } else {
            segments.extend(pieces.iter().map(|q| Segment {
                text: &q.text,
                span: q.span,
                tokens: tokenizer.count(&q.text),
            }));
        }
    }

    let mut groups: Vec<(usize, usize, usize)> = Vec::new(); // [start, end) segment range, tokens
    let mut start = 0;
    let mut tokens = 0;
    for (i, seg) in segments.iter().enumerate() {
        if i > start && tokens + seg.tokens > config.ct_max {
            groups.push((start, i, tokens));
            start = i;
            tokens = 0;
        }
        tokens += seg.tokens;
    }
    groups.push((start, segments.len(), tokens));

    if groups.len() >= 2 {
        let (_, last_end, last_tokens) = groups[groups.len() - 1];
        let (prev_start, _, prev_tokens) = groups[groups.len() - 2];
        if last_tokens < config.ct_min && prev_tokens + last_tokens <= config.ct_max {
            groups.pop();
            groups.pop();
            groups.push((prev_start, last_end, prev_tokens + last_tokens));
        }
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(k, (s, e, _))| {
            let mut text = String::new();
            for (j, seg) in segments[s..e].iter().enumerate() {
                if j > 0 && segments[s + j - 1].span.end != seg.span.start {
                    text.push_str(PARAGRAPH_SEPARATOR);
                }
                text.push_str(seg.text);
            }
            Chunk {
                doc_id: doc_id.clone(),
                chunk_index: k + 1,
                token_count: tokenizer.count(&text),
                span: Span::new(segments[s].span.start, segments[e - 1].span.end),
                text,
            }
        })
        .collect()
}

/// Segments and partitions a document with the given tokenizer.
pub fn chunk_document(
    document: &Document,
    config: &PartitionConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>, CorpusError> {
    let paragraphs = segment_paragraphs(document)?;
    Ok(partition(&paragraphs, config, tokenizer))
}

/// Separator that sits between two adjacent chunks in the canonical text.
pub fn gap_between(prev: &Chunk, next: &Chunk) -> &'static str {
    if prev.span.end == next.span.start {
        ""
    } else {
        PARAGRAPH_SEPARATOR
    }
}

/// Concatenates contiguous chunks of one document, restoring the separators
/// between them. The result equals the canonical text over the covered range.
pub fn reassemble(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    for (i, chunk) in chunks.iter().enumerate() {
        if i > 0 {
            out.push_str(gap_between(&chunks[i - 1], chunk));
        }
        out.push_str(&chunk.text);
    }
    out
}

#[derive(Debug, Deserialize)]
struct ManifestRecord {
    doc_id: String,
    path: PathBuf,
}

/// Loads a corpus manifest: one JSON object per line with `doc_id` and
/// `path` (relative paths resolve against the manifest's directory).
pub fn load_corpus(manifest: &Path) -> Result<Vec<Document>, CorpusError> {
    let io = |path: &Path, source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = std::fs::read_to_string(manifest).map_err(|e| io(manifest, e))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| CorpusError::Manifest {
            path: manifest.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId(rec.doc_id));
        }
        let path = if rec.path.is_absolute() {
            rec.path
        } else {
            base.join(rec.path)
        };
        let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        docs.push(Document::new(rec.doc_id, &text, Some(path))?);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        Document::new("d", text, None).unwrap()
    }

    fn texts(ps: &[Paragraph]) -> Vec<&str> {
        ps.iter().map(|p| p.text.as_str()).collect()
    }

    fn para(text: String) -> Paragraph {
        Paragraph {
            doc_id: "d".into(),
            ordinal: 0,
            span: Span::new(0, text.len()),
            text,
        }
    }

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    /// Builds a document whose paragraphs have the given token counts.
    fn sized_doc(sizes: &[usize]) -> Document {
        let paras: Vec<String> = sizes.iter().map(|&n| words(n)).collect();
        doc(&paras.join("\n\n"))
    }

    #[test]
    fn segment_examples() {
        assert_eq!(texts(&segment_paragraphs(&doc("A.\n\nB.")).unwrap()), ["A.", "B."]);
        assert_eq!(texts(&segment_paragraphs(&doc("A.")).unwrap()), ["A."]);
        assert_eq!(texts(&segment_paragraphs(&doc("A.\n\n\n\nB.")).unwrap()), ["A.", "B."]);
    }

    #[test]
    fn soft_wraps_stay_in_paragraph() {
        let d = doc("line one\nline two\n\n  \t\nnext\r\npara");
        let ps = segment_paragraphs(&d).unwrap();
        assert_eq!(texts(&ps), ["line one\nline two", "next\npara"]);
        assert_eq!(
            ps.iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join("\n\n"),
            d.text
        );
        for p in &ps {
            assert_eq!(&d.text[p.span.start..p.span.end], p.text);
        }
    }

    #[test]
    fn whitespace_document_is_rejected() {
        assert!(matches!(
            Document::new("x", " \n\n\t ", None),
            Err(CorpusError::EmptyDocument(_))
        ));
        let bad = Document {
            doc_id: "x".into(),
            text: "   ".into(),
            source_path: None,
        };
        assert!(matches!(segment_paragraphs(&bad), Err(CorpusError::EmptyDocument(_))));
    }

    #[test]
    fn count_tokens_examples() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("  \n\t"), 0);
        assert_eq!(count_tokens("knowledge graph retrieval"), 3);
        assert_eq!(count_tokens(&"word ".repeat(600)), 600);
    }

    #[test]
    fn split_1300_into_three() {
        let p = para(words(1300));
        let pieces = split_long_paragraph(&p, 600, &WhitespaceTokenizer);
        assert_eq!(pieces.len(), 3);
        assert!(pieces.iter().all(|q| count_tokens(&q.text) <= 600));
        assert_eq!(pieces.iter().map(|q| q.text.as_str()).collect::<String>(), p.text);
    }

    #[test]
    fn split_601_into_two() {
        let p = para(words(601));
        let pieces = split_long_paragraph(&p, 600, &WhitespaceTokenizer);
        assert_eq!(pieces.len(), 2);
        assert!(pieces.iter().all(|q| count_tokens(&q.text) <= 600));
        assert_eq!(pieces.iter().map(|q| q.text.as_str()).collect::<String>(), p.text);
    }

    #[test]
    fn split_prefers_sentence_ends() {
        // 4 sentences of 5 tokens; limit 12 -> target 10, cut after sentence 2
        let text = "a b c d e. f g h i j. k l m n o. p q r s t.".to_string();
        let pieces = split_long_paragraph(&para(text.clone()), 12, &WhitespaceTokenizer);
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[0].text, "a b c d e. f g h i j. ");
        assert!(pieces[0].text.trim_end().ends_with('.'));
        assert_eq!(pieces.iter().map(|q| q.text.as_str()).collect::<String>(), text);
        // spans index the original paragraph
        for q in &pieces {
            assert_eq!(&text[q.span.start..q.span.end], q.text);
        }
    }

    fn sizes(chunks: &[Chunk]) -> Vec<usize> {
        chunks.iter().map(|c| c.token_count).collect()
    }

    fn cfg() -> PartitionConfig {
        PartitionConfig::new(500, 600).unwrap()
    }

    #[test]
    fn partition_keeps_short_tail_when_merge_would_overflow() {
        let d = sized_doc(&[300, 250, 300, 100]);
        let chunks = chunk_document(&d, &cfg(), &WhitespaceTokenizer).unwrap();
        assert_eq!(sizes(&chunks), [550, 400]);
    }

    #[test]
    fn partition_balanced() {
        let d = sized_doc(&[300, 250, 300, 250]);
        let chunks = chunk_document(&d, &cfg(), &WhitespaceTokenizer).unwrap();
        assert_eq!(sizes(&chunks), [550, 550]);
        assert_eq!(chunks.iter().map(|c| c.chunk_index).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn partition_short_document() {
        let d = sized_doc(&[50]);
        let chunks = chunk_document(&d, &cfg(), &WhitespaceTokenizer).unwrap();
        assert_eq!(sizes(&chunks), [50]);
    }

    #[test]
    fn partition_merges_short_tail() {
        let d = sized_doc(&[300, 250, 300, 100, 60]);
        let chunks = chunk_document(&d, &cfg(), &WhitespaceTokenizer).unwrap();
        // greedy: [550], [400], [60] -> tail 60 merges into 400
        assert_eq!(sizes(&chunks), [550, 460]);
    }

    #[test]
    fn partition_routes_long_paragraphs_through_split() {
        let d = sized_doc(&[100, 1300, 20]);
        let chunks = chunk_document(&d, &cfg(), &WhitespaceTokenizer).unwrap();
        assert!(chunks.iter().all(|c| c.token_count <= 600));
        assert_eq!(reassemble(&chunks), d.text);
        for c in &chunks {
            assert_eq!(&d.text[c.span.start..c.span.end], c.text);
        }
    }

    #[test]
    fn invalid_partition_config() {
        assert!(PartitionConfig::new(600, 600).is_err());
        assert!(PartitionConfig::new(0, 10).is_err());
    }

    #[test]
    fn manifest_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "Alpha.\n\nBeta.").unwrap();
        std::fs::write(dir.path().join("m.jsonl"), "{\"doc_id\":\"a\",\"path\":\"a.txt\"}\n\n").unwrap();
        let docs = load_corpus(&dir.path().join("m.jsonl")).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].text, "Alpha.\n\nBeta.");

        std::fs::write(
            dir.path().join("dup.jsonl"),
            "{\"doc_id\":\"a\",\"path\":\"a.txt\"}\n{\"doc_id\":\"a\",\"path\":\"a.txt\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_corpus(&dir.path().join("dup.jsonl")),
            Err(CorpusError::DuplicateDocId(_))
        ));
        std::fs::write(dir.path().join("bad.jsonl"), "{\"doc_id\":1}\n").unwrap();
        assert!(matches!(
            load_corpus(&dir.path().join("bad.jsonl")),
            Err(CorpusError::Manifest { line: 1, .. })
        ));
    }
}
