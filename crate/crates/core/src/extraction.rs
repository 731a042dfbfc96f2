//! Truncated sliding-window knowledge extraction.
//!
//! Chunk `C_i` is extracted together with a bounded prefix of preceding chunks
//! `C_{s(i)}..C_{i-1}`, where
//!
//! ```text
//! tau(i) = floor((i - 1 - g_overlap) / (g_max - g_overlap)) * (g_max - g_overlap) + 1
//! s(i)   = max(1, tau(i))
//! ```
//!
//! The model returns records `{statement, source_span, entities}`. Each
//! accepted record becomes a [`KnowledgeItem`] whose `k_ref` is a verbatim
//! slice of the window text and whose `ref_span` locates it in the document.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::corpus::{reassemble, Chunk};
use crate::ids::{Id, IdKind, Span};
use crate::prompts::{self, Prompts, EXTRACTION_FORMAT, EXTRACTION_SYSTEM};
use crate::providers::{ChatRequest, Provider, ProviderError, Task};
use crate::text::{fnv1a64, normalize_name};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub g_max: usize,
    pub g_overlap: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { g_max: 3, g_overlap: 2 }
    }
}

impl WindowConfig {
    /// Prefix-free extraction: every chunk is extracted on its own.
    pub const NO_PREFIX: WindowConfig = WindowConfig { g_max: 1, g_overlap: 0 };

    pub fn new(g_max: usize, g_overlap: usize) -> Result<Self, ExtractionError> {
        let cfg = WindowConfig { g_max, g_overlap };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        if self.g_max == self.g_overlap {
            return Err(ExtractionError::DegenerateWindow {
                g_max: self.g_max,
                g_overlap: self.g_overlap,
            });
        }
        if self.g_max < 1 || self.g_overlap > self.g_max {
            return Err(ExtractionError::InvalidConfig(format!(
                "need g_max >= 1 and g_overlap < g_max, got g_max={} g_overlap={}",
                self.g_max, self.g_overlap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("degenerate window: g_max ({g_max}) equals g_overlap ({g_overlap})")]
    DegenerateWindow { g_max: usize, g_overlap: usize },
    #[error("invalid window config: {0}")]
    InvalidConfig(String),
    #[error("chunk index {index} out of range 1..={len}")]
    ChunkOutOfRange { index: usize, len: usize },
    #[error("could not parse extraction output for chunk {chunk_index}: {message}")]
    ParseFailure { chunk_index: usize, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("every chunk of `{doc_id}` failed; first failure: {first}")]
    AllChunksFailed { doc_id: String, first: String },
}

/// `s(i)` for 1-based chunk index `i`.
pub fn window_start(i: usize, config: &WindowConfig) -> Result<usize, ExtractionError> {
    config.validate()?;
    if i == 0 {
        return Err(ExtractionError::ChunkOutOfRange { index: 0, len: 0 });
    }
    let step = (config.g_max - config.g_overlap) as i64;
    let offset = i as i64 - 1 - config.g_overlap as i64;
    let tau = offset.div_euclid(step) * step + 1;
    Ok(tau.max(1) as usize)
}

/// The chunks `C_{s(i)}..C_{i-1}`; empty for `i = 1`.
pub fn build_prefix<'a>(chunks: &'a [Chunk], i: usize, config: &WindowConfig) -> Result<&'a [Chunk], ExtractionError> {
    if i == 0 || i > chunks.len() {
        return Err(ExtractionError::ChunkOutOfRange {
            index: i,
            len: chunks.len(),
        });
    }
    let s = window_start(i, config)?;
    Ok(&chunks[s - 1..i - 1])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub item_id: Id,
    pub k_text: String,
    /// Verbatim supporting span, equal to the document text at `ref_span`.
    pub k_ref: String,
    /// Distinct entity names (by normalized form), in first-mention order.
    pub k_entities: Vec<String>,
    /// 1-based extraction order within the document.
    pub k_index: usize,
    pub chunk_index: usize,
    pub ref_span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
struct RawRecord {
    statement: String,
    source_span: String,
    entities: Vec<String>,
}

/// Parses the first JSON array of records in `response`, ignoring any prose
/// around it.
fn parse_records(response: &str) -> Result<Vec<RawRecord>, String> {
    let mut first_error = None;
    for (pos, _) in response.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&response[pos..]).into_iter::<Vec<RawRecord>>();
        match stream.next() {
            Some(Ok(records)) => return Ok(records),
            Some(Err(e)) => {
                first_error.get_or_insert_with(|| e.to_string());
            }
            None => {}
        }
    }
    Err(first_error.unwrap_or_else(|| "no JSON array found".into()))
}

/// Finds `needle` in `haystack`, preferring matches at or after `from`.
/// Falls back to a whitespace-insensitive match. Returns a byte range of
/// `haystack`.
fn locate(haystack: &str, needle: &str, from: usize) -> Option<(usize, usize)> {
    let needle = needle.trim();
    if needle.is_empty() {
        return None;
    }
    if let Some(p) = haystack[from..].find(needle) {
        return Some((from + p, from + p + needle.len()));
    }
    let packed: Vec<(usize, char)> = haystack.char_indices().filter(|(_, c)| !c.is_whitespace()).collect();
    let target: Vec<char> = needle.chars().filter(|c| !c.is_whitespace()).collect();
    let fuzzy = |in_chunk: bool| -> Option<(usize, usize)> {
        if target.len() > packed.len() {
            return None;
        }
        let k = (0..=packed.len() - target.len()).find(|&k| {
            (!in_chunk || packed[k].0 >= from)
                && packed[k..k + target.len()]
                    .iter()
                    .map(|&(_, c)| c)
                    .eq(target.iter().copied())
        })?;
        let (start, _) = packed[k];
        let (last, c) = packed[k + target.len() - 1];
        Some((start, last + c.len_utf8()))
    };
    if let Some(hit) = fuzzy(true) {
        return Some(hit);
    }
    if let Some(p) = haystack.find(needle) {
        return Some((p, p + needle.len()));
    }
    fuzzy(false)
}

/// Distinct entity names by normalized form, dropping names that normalize to
/// nothing.
fn distinct_entities(names: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    names
        .iter()
        .map(|n| n.trim())
        .filter(|n| {
            let key = normalize_name(n);
            !key.is_empty() && seen.insert(key)
        })
        .map(str::to_string)
        .collect()
}

type CacheKey = (String, usize, usize, u64);

/// Bounded memo of extraction responses keyed by `(doc_id, s(i), i-1)` and a
/// fingerprint of the rendered prompt.
#[derive(Debug)]
pub struct PrefixCache {
    inner: Mutex<LruCache<CacheKey, Arc<Vec<RawRecord>>>>,
}

impl PrefixCache {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity).unwrap_or(NonZeroUsize::MIN);
        PrefixCache {
            inner: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &CacheKey) -> Option<Arc<Vec<RawRecord>>> {
        self.inner.lock().expect("cache lock poisoned").get(key).cloned()
    }

    fn put(&self, key: CacheKey, value: Arc<Vec<RawRecord>>) {
        self.inner.lock().expect("cache lock poisoned").put(key, value);
    }
}

/// Per-chunk and per-document extraction against one provider.
pub struct Extractor<'a> {
    pub provider: &'a dyn Provider,
    pub prompts: &'a Prompts,
    pub window: WindowConfig,
    pub cache: Option<&'a PrefixCache>,
    pub max_output_tokens: u32,
}

impl<'a> Extractor<'a> {
    pub fn new(provider: &'a dyn Provider, prompts: &'a Prompts, window: WindowConfig) -> Self {
        Extractor {
            provider,
            prompts,
            window,
            cache: None,
            max_output_tokens: 4096,
        }
    }

    pub fn with_cache(mut self, cache: &'a PrefixCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn call(&self, prompt: String) -> Result<String, ProviderError> {
        let request = ChatRequest::new(Task::Extraction, EXTRACTION_SYSTEM, prompt)
            .with_max_output_tokens(self.max_output_tokens);
        self.provider.chat(&request)
    }

    fn records(&self, prefix_text: &str, chunk: &Chunk) -> Result<Vec<RawRecord>, ExtractionError> {
        let prefix_arg = if prefix_text.is_empty() {
            prompts::NONE
        } else {
            prefix_text
        };
        let prompt = self.prompts.extraction.render(&[
            ("format", EXTRACTION_FORMAT),
            ("prefix", prefix_arg),
            ("chunk", &chunk.text),
        ]);
        let response = self.call(prompt)?;
        match parse_records(&response) {
            Ok(r) => Ok(r),
            Err(first) => {
                log::warn!(
                    "{} chunk {}: unparseable extraction output ({first}); retrying once",
                    chunk.doc_id,
                    chunk.chunk_index
                );
                let repair = self.prompts.extraction_repair.render(&[
                    ("format", EXTRACTION_FORMAT),
                    ("previous", &response),
                    ("prefix", prefix_arg),
                    ("chunk", &chunk.text),
                ]);
                let second = self.call(repair)?;
                parse_records(&second).map_err(|message| ExtractionError::ParseFailure {
                    chunk_index: chunk.chunk_index,
                    message,
                })
            }
        }
    }

    /// Extracts chunk `i` (1-based) of `chunks`. Returned items carry
    /// chunk-local `k_index` values starting at 1 and placeholder ids;
    /// [`Extractor::extract_document`] renumbers them.
    pub fn extract_chunk(&self, chunks: &[Chunk], i: usize) -> Result<Vec<KnowledgeItem>, ExtractionError> {
        let prefix = build_prefix(chunks, i, &self.window)?;
        let chunk = &chunks[i - 1];
        let s = i - prefix.len();
        let prefix_text = reassemble(prefix);
        let window_text = reassemble(&chunks[s - 1..i]);
        let window_origin = chunks[s - 1].span.start;
        let chunk_offset = window_text.len() - chunk.text.len();

        let fingerprint = {
            let mut bytes = prefix_text.as_bytes().to_vec();
            bytes.push(0);
            bytes.extend_from_slice(chunk.text.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(self.prompts.extraction.source().as_bytes());
            fnv1a64(&bytes)
        };
        let key = (chunk.doc_id.clone(), s, i - 1, fingerprint);
        let records = match self.cache.and_then(|c| c.get(&key)) {
            Some(hit) => hit,
            None => {
                let fresh = Arc::new(self.records(&prefix_text, chunk)?);
                if let Some(cache) = self.cache {
                    cache.put(key, fresh.clone());
                }
                fresh
            }
        };

        let mut items = Vec::new();
        for rec in records.iter() {
            let entities = distinct_entities(&rec.entities);
            if entities.len() < 2 || rec.statement.trim().is_empty() {
                log::debug!("dropping record with fewer than two entities: {:?}", rec.statement);
                continue;
            }
            let Some((a, b)) = locate(&window_text, &rec.source_span, chunk_offset) else {
                log::debug!(
                    "dropping record whose source span is not in the window: {:?}",
                    rec.source_span
                );
                continue;
            };
            items.push(KnowledgeItem {
                item_id: Id::new(chunk.doc_id.clone(), IdKind::Item, 0),
                k_text: rec.statement.trim().to_string(),
                k_ref: window_text[a..b].to_string(),
                k_entities: entities,
                k_index: items.len() + 1,
                chunk_index: chunk.chunk_index,
                ref_span: Span::new(window_origin + a, window_origin + b),
            });
        }
        Ok(items)
    }

    /// Extracts every chunk (concurrently where enabled) and numbers the items
    /// 1..n in chunk order. Chunks that fail are skipped with a warning; the
    /// call fails only when all of them do.
    pub fn extract_document(&self, chunks: &[Chunk]) -> Result<Vec<KnowledgeItem>, ExtractionError> {
        self.window.validate()?;
        let Some(first) = chunks.first() else {
            return Ok(Vec::new());
        };
        let doc_id = first.doc_id.clone();
        let results = crate::exec::map_range(chunks.len(), |k| self.extract_chunk(chunks, k + 1));
        let mut items = Vec::new();
        let mut failures = Vec::new();
        for (k, result) in results.into_iter().enumerate() {
            match result {
                Ok(chunk_items) => items.extend(chunk_items),
                Err(err) => {
                    log::warn!("{doc_id} chunk {}: extraction skipped: {err}", k + 1);
                    failures.push(err);
                }
            }
        }
        if failures.len() == chunks.len() {
            let mut failures = failures.into_iter();
            let first = failures.next().expect("at least one chunk");
            return Err(match first {
                ExtractionError::Provider(e) => ExtractionError::Provider(e),
                other => ExtractionError::AllChunksFailed {
                    doc_id,
                    first: other.to_string(),
                },
            });
        }
        for (n, item) in items.iter_mut().enumerate() {
            item.k_index = n + 1;
            item.item_id = Id::new(doc_id.clone(), IdKind::Item, (n + 1) as u32);
        }
        Ok(items)
    }
}
