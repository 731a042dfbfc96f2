//! Knowledge-base persistence and cross-document merge.
//!
//! On-disk layout (one directory):
//!
//! ```text
//! manifest.json      format version, embedding dimension, build hash,
//!                    config snapshot, build flags, per-document stats
//! entities.jsonl     one EntityNode per line
//! hyperedges.jsonl   one Hyperedge per line (embedding inline)
//! edges.jsonl        one Edge per line (embedding inline)
//! clusters.jsonl     one SemanticCluster per line
//! chunks.jsonl       one Chunk per line; resolves provenance spans
//! ```
//!
//! Saves go to a temporary sibling directory that is renamed into place.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::BuildFlags;
use crate::corpus::{reassemble, Chunk};
use crate::ids::Id;
use crate::kbuild::{DocKnowledge, Edge, EntityNode, Hyperedge};
use crate::ssc::SemanticCluster;
use crate::text::{normalize_name, sha256_hex};

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENTITIES_FILE: &str = "entities.jsonl";
pub const HYPEREDGES_FILE: &str = "hyperedges.jsonl";
pub const EDGES_FILE: &str = "edges.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.jsonl";
pub const CHUNKS_FILE: &str = "chunks.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("knowledge base format version {found} does not match supported version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("integrity error in {record}: {message}")]
    Integrity { record: String, message: String },
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("embedding dimension mismatch in {record}: expected {expected}, got {found}")]
    DimensionMismatch {
        record: String,
        expected: usize,
        found: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn integrity(record: impl ToString, message: impl Into<String>) -> StoreError {
    StoreError::Integrity {
        record: record.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocStats {
    pub doc_id: String,
    /// SHA-256 of the document's canonical text.
    pub content_hash: String,
    pub chunks: usize,
    pub entities: usize,
    pub hyperedges: usize,
    pub edges: usize,
    pub clusters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub embedding_dimension: usize,
    pub build_hash: String,
    pub config: serde_json::Value,
    pub flags: BuildFlags,
    pub documents: Vec<DocStats>,
}

/// Build provenance recorded in the manifest.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuildMeta {
    pub build_hash: String,
    pub config: serde_json::Value,
    pub flags: BuildFlags,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Index {
    entities: HashMap<Id, usize>,
    hyperedges: HashMap<Id, usize>,
    edges: HashMap<Id, usize>,
    clusters: HashMap<Id, usize>,
    cluster_of: HashMap<Id, usize>,
    incidence: HashMap<Id, Vec<usize>>,
    by_name: HashMap<String, Vec<usize>>,
    by_alias: HashMap<String, Vec<usize>>,
    doc_texts: HashMap<String, String>,
}

/// Global collections over all documents. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeBase {
    pub manifest: Manifest,
    pub entities: Vec<EntityNode>,
    pub hyperedges: Vec<Hyperedge>,
    pub edges: Vec<Edge>,
    pub clusters: Vec<SemanticCluster>,
    pub chunks: Vec<Chunk>,
    index: Index,
}

fn doc_stats(doc: &DocKnowledge) -> DocStats {
    DocStats {
        doc_id: doc.doc_id.clone(),
        content_hash: sha256_hex(reassemble(&doc.chunks).as_bytes()),
        chunks: doc.chunks.len(),
        entities: doc.entities.len(),
        hyperedges: doc.hyperedges.len(),
        edges: doc.edges.len(),
        clusters: doc.clusters.len(),
    }
}

/// Disjoint union of per-document knowledge. Same-name entities from
/// different documents stay separate nodes.
pub fn merge_documents(docs: &[DocKnowledge], meta: BuildMeta) -> Result<KnowledgeBase, StoreError> {
    if docs.is_empty() {
        return Err(StoreError::EmptyKnowledgeBase);
    }
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(integrity(&d.doc_id, "document merged twice"));
        }
    }
    let dimension = docs
        .iter()
        .flat_map(|d| {
            d.hyperedges
                .iter()
                .map(|h| h.embedding.dimension())
                .chain(d.edges.iter().map(|e| e.embedding.dimension()))
        })
        .next()
        .unwrap_or(0);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        embedding_dimension: dimension,
        build_hash: meta.build_hash,
        config: meta.config,
        flags: meta.flags,
        documents: docs.iter().map(doc_stats).collect(),
    };
    let kb = KnowledgeBase::new(
        manifest,
        docs.iter().flat_map(|d| d.entities.iter().cloned()).collect(),
        docs.iter().flat_map(|d| d.hyperedges.iter().cloned()).collect(),
        docs.iter().flat_map(|d| d.edges.iter().cloned()).collect(),
        docs.iter().flat_map(|d| d.clusters.iter().cloned()).collect(),
        docs.iter().flat_map(|d| d.chunks.iter().cloned()).collect(),
    );
    kb.validate()?;
    Ok(kb)
}

impl KnowledgeBase {
    /// Assembles a knowledge base and its lookup tables without validating.
    pub fn new(
        manifest: Manifest,
        entities: Vec<EntityNode>,
        hyperedges: Vec<Hyperedge>,
        edges: Vec<Edge>,
        clusters: Vec<SemanticCluster>,
        chunks: Vec<Chunk>,
    ) -> Self {
        let positions = |ids: Vec<&Id>| ids.into_iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut cluster_of = HashMap::new();
        for (i, c) in clusters.iter().enumerate() {
            for m in &c.member_hyperedges {
                cluster_of.entry(m.clone()).or_insert(i);
            }
        }
        let mut incidence: HashMap<Id, Vec<usize>> = HashMap::new();
        for (i, h) in hyperedges.iter().enumerate() {
            for v in &h.incident_entities {
                incidence.entry(v.clone()).or_default().push(i);
            }
        }
        let mut by_name: HashMap<String, Vec<usize>> = HashMap::new();
        let mut by_alias: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            by_name.entry(normalize_name(&e.v_name)).or_default().push(i);
            let mut keys: Vec<String> = e
                .aliases
                .iter()
                .map(|a| normalize_name(a))
                .filter(|a| !a.is_empty())
                .collect();
            keys.sort();
            keys.dedup();
            for key in keys {
                by_alias.entry(key).or_default().push(i);
            }
        }
        let mut by_doc: HashMap<&str, Vec<&Chunk>> = HashMap::new();
        for c in &chunks {
            by_doc.entry(c.doc_id.as_str()).or_default().push(c);
        }
        let doc_texts = by_doc
            .into_iter()
            .map(|(doc, mut cs)| {
                cs.sort_by_key(|c| c.chunk_index);
                let owned: Vec<Chunk> = cs.into_iter().cloned().collect();
                (doc.to_string(), reassemble(&owned))
            })
            .collect();
        let index = Index {
            entities: positions(entities.iter().map(|e| &e.entity_id).collect()),
            hyperedges: positions(hyperedges.iter().map(|h| &h.hyperedge_id).collect()),
            edges: positions(edges.iter().map(|e| &e.edge_id).collect()),
            clusters: positions(clusters.iter().map(|c| &c.ch_id).collect()),
            cluster_of,
            incidence,
            by_name,
            by_alias,
            doc_texts,
        };
        KnowledgeBase {
            manifest,
            entities,
            hyperedges,
            edges,
            clusters,
            chunks,
            index,
        }
    }

    pub fn entity(&self, id: &Id) -> Option<&EntityNode> {
        self.index.entities.get(id).map(|&i| &self.entities[i])
    }

    pub fn hyperedge(&self, id: &Id) -> Option<&Hyperedge> {
        self.index.hyperedges.get(id).map(|&i| &self.hyperedges[i])
    }

    pub fn edge(&self, id: &Id) -> Option<&Edge> {
        self.index.edges.get(id).map(|&i| &self.edges[i])
    }

    pub fn cluster(&self, id: &Id) -> Option<&SemanticCluster> {
        self.index.clusters.get(id).map(|&i| &self.clusters[i])
    }

    /// The cluster containing hyperedge `id`, if any.
    pub fn cluster_of(&self, id: &Id) -> Option<&SemanticCluster> {
        self.index.cluster_of.get(id).map(|&i| &self.clusters[i])
    }

    /// Hyperedges incident to entity `id`, in storage order.
    pub fn incident_hyperedges(&self, id: &Id) -> Vec<&Hyperedge> {
        self.index
            .incidence
            .get(id)
            .map(|ix| ix.iter().map(|&i| &self.hyperedges[i]).collect())
            .unwrap_or_default()
    }

    /// Entities whose normalized name equals `key` (already normalized).
    pub fn entities_named(&self, key: &str) -> Vec<&EntityNode> {
        self.index
            .by_name
            .get(key)
            .map(|ix| ix.iter().map(|&i| &self.entities[i]).collect())
            .unwrap_or_default()
    }

    /// Entities listing `key` (already normalized) among their aliases.
    pub fn entities_aliased(&self, key: &str) -> Vec<&EntityNode> {
        self.index
            .by_alias
            .get(key)
            .map(|ix| ix.iter().map(|&i| &self.entities[i]).collect())
            .unwrap_or_default()
    }

    /// Canonical text of a document, rebuilt from its chunks.
    pub fn doc_text(&self, doc_id: &str) -> Option<&str> {
        self.index.doc_texts.get(doc_id).map(String::as_str)
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.manifest.documents.iter().map(|d| d.doc_id.as_str()).collect()
    }

    /// Per-document slice of the knowledge base.
    pub fn document(&self, doc_id: &str) -> Option<DocKnowledge> {
        if !self.manifest.documents.iter().any(|d| d.doc_id == doc_id) {
            return None;
        }
        let mine = |id: &Id| id.doc() == doc_id;
        Some(DocKnowledge {
            doc_id: doc_id.to_string(),
            chunks: self.chunks.iter().filter(|c| c.doc_id == doc_id).cloned().collect(),
            entities: self.entities.iter().filter(|e| mine(&e.entity_id)).cloned().collect(),
            hyperedges: self
                .hyperedges
                .iter()
                .filter(|h| mine(&h.hyperedge_id))
                .cloned()
                .collect(),
            edges: self.edges.iter().filter(|e| mine(&e.edge_id)).cloned().collect(),
            clusters: self.clusters.iter().filter(|c| c.doc_id == doc_id).cloned().collect(),
        })
    }

    /// Checks referential integrity, id uniqueness, provenance spans against
    /// the chunk store, and embedding dimensions.
    pub fn validate(&self) -> Result<(), StoreError> {
        let docs: HashSet<&str> = self.manifest.documents.iter().map(|d| d.doc_id.as_str()).collect();
        if docs.is_empty() {
            return Err(StoreError::EmptyKnowledgeBase);
        }
        let dim = self.manifest.embedding_dimension;
        let check_doc = |id: &Id| {
            if docs.contains(id.doc()) {
                Ok(())
            } else {
                Err(integrity(id, format!("unknown document `{}`", id.doc())))
            }
        };
        let check_dim = |id: &Id, found: usize| {
            if found == dim {
                Ok(())
            } else {
                Err(StoreError::DimensionMismatch {
                    record: id.to_string(),
                    expected: dim,
                    found,
                })
            }
        };
        let unique = |name: &str, ids: Vec<&Id>, indexed: usize| {
            if ids.len() == indexed {
                return Ok(());
            }
            let mut seen = HashSet::new();
            let dup = ids.into_iter().find(|id| !seen.insert(*id)).expect("duplicate exists");
            Err(integrity(dup, format!("duplicate {name} id")))
        };
        unique(
            "entity",
            self.entities.iter().map(|e| &e.entity_id).collect(),
            self.index.entities.len(),
        )?;
        unique(
            "hyperedge",
            self.hyperedges.iter().map(|h| &h.hyperedge_id).collect(),
            self.index.hyperedges.len(),
        )?;
        unique(
            "edge",
            self.edges.iter().map(|e| &e.edge_id).collect(),
            self.index.edges.len(),
        )?;
        unique(
            "cluster",
            self.clusters.iter().map(|c| &c.ch_id).collect(),
            self.index.clusters.len(),
        )?;

        let mut chunk_indices: HashMap<&str, Vec<usize>> = HashMap::new();
        for c in &self.chunks {
            if !docs.contains(c.doc_id.as_str()) {
                return Err(integrity(
                    format!("{}#chunk{}", c.doc_id, c.chunk_index),
                    "unknown document",
                ));
            }
            chunk_indices.entry(c.doc_id.as_str()).or_default().push(c.chunk_index);
        }
        for (doc, mut idx) in chunk_indices {
            idx.sort_unstable();
            if idx.iter().enumerate().any(|(k, &i)| i != k + 1) {
                return Err(integrity(doc, "chunk indices are not 1..N without gaps"));
            }
        }

        let mut degree: HashMap<&Id, usize> = HashMap::new();
        for e in &self.entities {
            check_doc(&e.entity_id)?;
            if e.v_name.trim().is_empty() {
                return Err(integrity(&e.entity_id, "empty entity name"));
            }
        }
        for h in &self.hyperedges {
            check_doc(&h.hyperedge_id)?;
            check_dim(&h.hyperedge_id, h.embedding.dimension())?;
            if h.incident_entities.len() < 2 {
                return Err(integrity(&h.hyperedge_id, "fewer than two incident entities"));
            }
            for v in &h.incident_entities {
                if self.entity(v).is_none() {
                    return Err(integrity(&h.hyperedge_id, format!("dangling entity reference {v}")));
                }
                *degree.entry(v).or_default() += 1;
            }
            let text = self
                .doc_text(h.hyperedge_id.doc())
                .ok_or_else(|| integrity(&h.hyperedge_id, "no chunks stored for document"))?;
            let located = text.get(h.ref_span.start..h.ref_span.end);
            if located != Some(h.h_ref.as_str()) {
                return Err(integrity(
                    &h.hyperedge_id,
                    "source span does not match the stored document text",
                ));
            }
        }
        for e in &self.entities {
            let stored = degree.get(&e.entity_id).copied().unwrap_or(0);
            if stored != e.hyperdegree {
                return Err(integrity(
                    &e.entity_id,
                    format!("hyperdegree {} but {} incident hyperedges", e.hyperdegree, stored),
                ));
            }
        }
        for e in &self.edges {
            check_doc(&e.edge_id)?;
            check_dim(&e.edge_id, e.embedding.dimension())?;
            for v in [&e.source_entity, &e.target_entity] {
                if self.entity(v).is_none() {
                    return Err(integrity(&e.edge_id, format!("dangling entity reference {v}")));
                }
            }
            if e.source_entity == e.target_entity {
                return Err(integrity(&e.edge_id, "edge connects an entity to itself"));
            }
            if e.e_text.trim().is_empty() {
                return Err(integrity(&e.edge_id, "empty relation text"));
            }
            if let Some(p) = &e.provenance {
                if self.hyperedge(p).is_none() {
                    return Err(integrity(&e.edge_id, format!("dangling provenance reference {p}")));
                }
            }
        }
        let mut owner: HashMap<&Id, &Id> = HashMap::new();
        for c in &self.clusters {
            if !docs.contains(c.doc_id.as_str()) || c.ch_id.doc() != c.doc_id {
                return Err(integrity(&c.ch_id, "unknown document"));
            }
            if c.member_hyperedges.is_empty() {
                return Err(integrity(&c.ch_id, "cluster has no members"));
            }
            for m in &c.member_hyperedges {
                if self.hyperedge(m).is_none() {
                    return Err(integrity(&c.ch_id, format!("dangling hyperedge reference {m}")));
                }
                if let Some(other) = owner.insert(m, &c.ch_id) {
                    return Err(integrity(&c.ch_id, format!("hyperedge {m} also belongs to {other}")));
                }
            }
        }
        Ok(())
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, StoreError> {
    let path = dir.join(name);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            file: name.to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn stored_version(dir: &Path) -> Option<u32> {
    let raw = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    let value: serde_json::Value = serde_json::from_str(&raw).ok()?;
    value.get("format_version")?.as_u64().map(|v| v as u32)
}

/// Writes `kb` to `path`, replacing any existing knowledge base atomically.
/// An existing knowledge base in a different format version is only replaced
/// with `force`.
pub fn save_kb(kb: &KnowledgeBase, path: &Path, force: bool) -> Result<(), StoreError> {
    kb.validate()?;
    if let Some(found) = stored_version(path) {
        if found != FORMAT_VERSION && !force {
            return Err(StoreError::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
    }
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "kb".into());
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir(&tmp).map_err(io_err(&tmp))?;

    let manifest_path = tmp.join(MANIFEST_FILE);
    let manifest = serde_json::to_string_pretty(&kb.manifest).expect("manifest serializes");
    fs::write(&manifest_path, manifest + "\n").map_err(io_err(&manifest_path))?;
    write_jsonl(&tmp.join(ENTITIES_FILE), &kb.entities)?;
    write_jsonl(&tmp.join(HYPEREDGES_FILE), &kb.hyperedges)?;
    write_jsonl(&tmp.join(EDGES_FILE), &kb.edges)?;
    write_jsonl(&tmp.join(CLUSTERS_FILE), &kb.clusters)?;
    write_jsonl(&tmp.join(CHUNKS_FILE), &kb.chunks)?;

    if path.exists() {
        let old = parent.join(format!(".{name}.old-{}", std::process::id()));
        if old.exists() {
            fs::remove_dir_all(&old).map_err(io_err(&old))?;
        }
        fs::rename(path, &old).map_err(io_err(path))?;
        fs::rename(&tmp, path).map_err(io_err(path))?;
        fs::remove_dir_all(&old).map_err(io_err(&old))?;
    } else {
        fs::rename(&tmp, path).map_err(io_err(path))?;
    }
    Ok(())
}

/// Reads and fully validates a knowledge base directory.
pub fn load_kb(path: &Path) -> Result<KnowledgeBase, StoreError> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    if !meta.is_dir() {
        return Err(io_err(path)(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "not a knowledge base directory",
        )));
    }
    let manifest_path = path.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        let empty = fs::read_dir(path).map_err(io_err(path))?.next().is_none();
        return Err(if empty {
            StoreError::EmptyKnowledgeBase
        } else {
            io_err(&manifest_path)(std::io::Error::new(std::io::ErrorKind::NotFound, "missing manifest"))
        });
    }
    let raw = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let parse_err = |e: serde_json::Error| StoreError::Parse {
        file: MANIFEST_FILE.into(),
        line: e.line(),
        message: e.to_string(),
    };
    let value: serde_json::Value = serde_json::from_str(&raw).map_err(parse_err)?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(parse_err)?;
    if manifest.documents.is_empty() {
        return Err(StoreError::EmptyKnowledgeBase);
    }
    let kb = KnowledgeBase::new(
        manifest,
        read_jsonl(path, ENTITIES_FILE)?,
        read_jsonl(path, HYPEREDGES_FILE)?,
        read_jsonl(path, EDGES_FILE)?,
        read_jsonl(path, CLUSTERS_FILE)?,
        read_jsonl(path, CHUNKS_FILE)?,
    );
    kb.validate()?;
    Ok(kb)
}
