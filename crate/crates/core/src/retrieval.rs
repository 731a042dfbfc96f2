//! Query-time retrieval: entity matching, similarity search over hyperedges
//! and edges, cluster lookup, evidence assembly and answer generation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::count_tokens;
use crate::ids::{Id, Span};
use crate::kbuild::EntityNode;
use crate::prompts::{self, Prompts};
use crate::providers::{ChatRequest, Embedding, Phase, Provider, ProviderError, Task};
use crate::ssc::{clip_segments, cluster_layout};
use crate::store::KnowledgeBase;
use crate::text::{collapse_whitespace, normalize_name, truncate_tokens};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    /// Entities, hyperedges and clusters.
    Hypergraph,
    /// Entities and edges.
    Graph,
    /// Everything.
    #[default]
    Hybrid,
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrievalMode::Hypergraph => "hypergraph",
            RetrievalMode::Graph => "graph",
            RetrievalMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hypergraph" => Ok(RetrievalMode::Hypergraph),
            "graph" => Ok(RetrievalMode::Graph),
            "hybrid" => Ok(RetrievalMode::Hybrid),
            other => Err(format!(
                "unknown retrieval mode `{other}` (expected hypergraph, graph or hybrid)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Maximum hyperedges returned.
    pub n_hyperedges: usize,
    /// Maximum edges returned.
    pub n_edges: usize,
    /// Hyperedges need similarity strictly above this.
    pub tau_hyperedge: f64,
    /// Edges need similarity strictly above this.
    pub tau_edge: f64,
    pub mode: RetrievalMode,
    /// Upper bound on evidence size in whitespace tokens.
    pub token_budget: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            n_hyperedges: 7,
            n_edges: 3,
            tau_hyperedge: 0.9,
            tau_edge: 0.9,
            mode: RetrievalMode::Hybrid,
            token_budget: 4000,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        for (name, t) in [("tau_hyperedge", self.tau_hyperedge), ("tau_edge", self.tau_edge)] {
            if !(-1.0..=1.0).contains(&t) {
                return Err(RetrievalError::InvalidConfig(format!(
                    "{name} must be in [-1, 1], got {t}"
                )));
            }
        }
        if self.token_budget == 0 {
            return Err(RetrievalError::InvalidConfig("token_budget must be > 0".into()));
        }
        Ok(())
    }
}

/// Query-time module switches. Each flag only removes evidence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// No entity retrieval.
    pub no_enr: bool,
    /// No edge retrieval.
    pub no_er: bool,
    /// No hyperedges in the evidence.
    pub no_hr: bool,
    /// No clusters in the evidence.
    pub no_ssc: bool,
}

/// Which evidence sections a query produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modules {
    pub entities: bool,
    pub edges: bool,
    pub hyperedges: bool,
    pub clusters: bool,
}

impl Modules {
    pub fn new(mode: RetrievalMode, ablation: Ablation) -> Self {
        let graph = mode != RetrievalMode::Hypergraph;
        let hyper = mode != RetrievalMode::Graph;
        Modules {
            entities: !ablation.no_enr,
            edges: graph && !ablation.no_er,
            hyperedges: hyper && !ablation.no_hr,
            clusters: hyper && !ablation.no_ssc,
        }
    }

    /// Hyperedge search runs whenever hyperedges or clusters are wanted,
    /// since clusters are found through retrieved hyperedges.
    pub fn scans_hyperedges(&self) -> bool {
        self.hyperedges || self.clusters
    }

    fn needs_embedding(&self) -> bool {
        self.edges || self.scans_hyperedges()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("query embedding has zero norm")]
    ZeroVector,
    #[error("query embedding has dimension {found}, knowledge base has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// A retrieved record and its similarity to the query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: Id,
    pub score: f64,
}

/// Cosine similarity of `query` against every candidate; `None` for
/// zero-norm or mismatched candidates.
pub fn similarities_seq(query: &Embedding, candidates: &[&Embedding]) -> Vec<Option<f64>> {
    crate::exec::map_seq(candidates, |e| query.cosine(e))
}

#[cfg(feature = "parallel")]
pub fn similarities_par(query: &Embedding, candidates: &[&Embedding]) -> Vec<Option<f64>> {
    crate::exec::map_par(candidates, |e| query.cosine(e))
}

pub fn similarities(query: &Embedding, candidates: &[&Embedding]) -> Vec<Option<f64>> {
    crate::exec::map(candidates, |e| query.cosine(e))
}

/// Exhaustive scan: keeps similarity strictly above `tau`, sorts by
/// similarity descending then id ascending, and keeps at most `n`.
pub fn top_n(
    query: &Embedding,
    candidates: &[(&Id, &Embedding)],
    n: usize,
    tau: f64,
) -> Result<Vec<Scored>, RetrievalError> {
    if query.norm() == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let embeddings: Vec<&Embedding> = candidates.iter().map(|(_, e)| *e).collect();
    let sims = similarities(query, &embeddings);
    let mut hits: Vec<Scored> = candidates
        .iter()
        .zip(sims)
        .filter_map(|((id, _), s)| {
            s.filter(|&s| s > tau).map(|score| Scored {
                id: (*id).clone(),
                score,
            })
        })
        .collect();
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    hits.truncate(n);
    Ok(hits)
}

fn check_query(query: &Embedding, kb: &KnowledgeBase) -> Result<(), RetrievalError> {
    let expected = kb.manifest.embedding_dimension;
    if expected != 0 && query.dimension() != expected {
        return Err(RetrievalError::DimensionMismatch {
            expected,
            found: query.dimension(),
        });
    }
    Ok(())
}

pub fn retrieve_hyperedges(
    query: &Embedding,
    kb: &KnowledgeBase,
    n: usize,
    tau: f64,
) -> Result<Vec<Scored>, RetrievalError> {
    check_query(query, kb)?;
    let candidates: Vec<(&Id, &Embedding)> = kb.hyperedges.iter().map(|h| (&h.hyperedge_id, &h.embedding)).collect();
    top_n(query, &candidates, n, tau)
}

pub fn retrieve_edges(
    query: &Embedding,
    kb: &KnowledgeBase,
    n: usize,
    tau: f64,
) -> Result<Vec<Scored>, RetrievalError> {
    check_query(query, kb)?;
    let candidates: Vec<(&Id, &Embedding)> = kb.edges.iter().map(|e| (&e.edge_id, &e.embedding)).collect();
    top_n(query, &candidates, n, tau)
}

/// Clusters containing at least one retrieved hyperedge, each scored by its
/// best retrieved member, ordered by score descending then id.
pub fn retrieve_clusters(retrieved: &[Scored], kb: &KnowledgeBase) -> Vec<Scored> {
    let mut best: HashMap<&Id, f64> = HashMap::new();
    for hit in retrieved {
        if let Some(c) = kb.cluster_of(&hit.id) {
            let slot = best.entry(&c.ch_id).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(hit.score);
        }
    }
    let mut out: Vec<Scored> = best
        .into_iter()
        .map(|(id, score)| Scored { id: id.clone(), score })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    out
}

/// Asks the provider for the entity names in `query`. Failures degrade to
/// an empty list.
pub fn extract_query_entities(query: &str, provider: &dyn Provider, prompts: &Prompts) -> Vec<String> {
    if query.trim().is_empty() {
        return Vec::new();
    }
    let user = prompts.query_entities.render(&[("query", query)]);
    let request = ChatRequest::new(Task::QueryEntities, prompts::QUERY_SYSTEM, user).with_max_output_tokens(256);
    let raw = match provider.chat(&request) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("query entity extraction failed ({e}); continuing without entity matching");
            return Vec::new();
        }
    };
    let parsed = raw
        .find('[')
        .and_then(|start| {
            serde_json::Deserializer::from_str(&raw[start..])
                .into_iter::<Vec<String>>()
                .next()
        })
        .and_then(Result::ok);
    match parsed {
        Some(names) => {
            let mut seen = HashSet::new();
            names
                .into_iter()
                .map(|n| n.trim().to_string())
                .filter(|n| !n.is_empty() && seen.insert(normalize_name(n)))
                .collect()
        }
        None => {
            log::warn!("could not parse query entities from provider output; continuing without entity matching");
            Vec::new()
        }
    }
}

/// Exact match on normalized names, then the alias table for names that
/// found nothing. Returns every matching node across documents, in query
/// name order then id order, without duplicates.
pub fn match_entities<'kb>(names: &[String], kb: &'kb KnowledgeBase) -> Vec<&'kb EntityNode> {
    let mut out: Vec<&EntityNode> = Vec::new();
    let mut seen: HashSet<&Id> = HashSet::new();
    for name in names {
        let key = normalize_name(name);
        if key.is_empty() {
            continue;
        }
        let mut hits = kb.entities_named(&key);
        if hits.is_empty() {
            hits = kb.entities_aliased(&key);
        }
        hits.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        for e in hits {
            if seen.insert(&e.entity_id) {
                out.push(e);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityEvidence {
    pub entity_id: Id,
    pub name: String,
    pub summary: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvidence {
    pub edge_id: Id,
    pub source: String,
    pub relation: String,
    pub target: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperedgeEvidence {
    pub hyperedge_id: Id,
    pub statement: String,
    pub source_text: String,
    pub score: f64,
}

/// Where a piece of cluster text came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSegment {
    /// Byte range within the evidence text.
    pub start: usize,
    pub end: usize,
    pub hyperedges: Vec<Id>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvidence {
    pub ch_id: Id,
    pub text: String,
    pub score: f64,
    pub segments: Vec<ClusterSegment>,
    /// Set when the text was shortened to fit the token budget.
    pub truncated: bool,
}

/// Counts of candidates found before the budget was applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub matched_entities: usize,
    pub hyperedges: usize,
    pub edges: usize,
    pub clusters: usize,
    /// Items removed to satisfy the token budget.
    pub dropped: usize,
}

/// Evidence passed to the generator, with provenance for every element.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub query: String,
    pub mode: RetrievalMode,
    pub ablation: Ablation,
    pub entities: Vec<EntityEvidence>,
    pub edges: Vec<EdgeEvidence>,
    pub hyperedges: Vec<HyperedgeEvidence>,
    pub clusters: Vec<ClusterEvidence>,
    /// Element id to the document spans supporting it.
    pub provenance: BTreeMap<Id, Vec<Span>>,
    pub stats: RetrievalStats,
}

fn entity_line(e: &EntityEvidence) -> String {
    format!("{}: {}", e.name, collapse_whitespace(&e.summary))
}

fn edge_line(e: &EdgeEvidence) -> String {
    format!("{} | {} | {}", e.source, collapse_whitespace(&e.relation), e.target)
}

fn hyperedge_line(h: &HyperedgeEvidence) -> String {
    collapse_whitespace(&h.statement)
}

fn cluster_line(c: &ClusterEvidence) -> String {
    collapse_whitespace(&c.text)
}

fn render_list(lines: impl Iterator<Item = String>) -> String {
    let items: Vec<String> = lines.map(|l| format!("- {l}")).collect();
    if items.is_empty() {
        prompts::NONE.to_string()
    } else {
        items.join("\n")
    }
}

impl EvidenceBundle {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.edges.is_empty() && self.hyperedges.is_empty() && self.clusters.is_empty()
    }

    /// Evidence size in whitespace tokens, summed over all sections.
    pub fn token_count(&self) -> usize {
        self.entities
            .iter()
            .map(|e| count_tokens(&entity_line(e)))
            .sum::<usize>()
            + self.edges.iter().map(|e| count_tokens(&edge_line(e))).sum::<usize>()
            + self
                .hyperedges
                .iter()
                .map(|h| count_tokens(&hyperedge_line(h)))
                .sum::<usize>()
            + self
                .clusters
                .iter()
                .map(|c| count_tokens(&cluster_line(c)))
                .sum::<usize>()
    }

    /// Renders the generation prompt for this bundle.
    pub fn render(&self, prompts: &Prompts) -> String {
        prompts.generation.render(&[
            ("query", self.query.as_str()),
            ("entities", &render_list(self.entities.iter().map(entity_line))),
            ("edges", &render_list(self.edges.iter().map(edge_line))),
            ("hyperedges", &render_list(self.hyperedges.iter().map(hyperedge_line))),
            ("clusters", &render_list(self.clusters.iter().map(cluster_line))),
        ])
    }

    fn rebuild_provenance(&mut self, kb: &KnowledgeBase) {
        let mut map: BTreeMap<Id, Vec<Span>> = BTreeMap::new();
        for e in &self.entities {
            let mut spans: Vec<Span> = kb
                .incident_hyperedges(&e.entity_id)
                .iter()
                .map(|h| h.ref_span)
                .collect();
            spans.sort();
            spans.dedup();
            map.insert(e.entity_id.clone(), spans);
        }
        for e in &self.edges {
            let spans = kb
                .edge(&e.edge_id)
                .and_then(|e| e.provenance_span)
                .into_iter()
                .collect();
            map.insert(e.edge_id.clone(), spans);
        }
        for h in &self.hyperedges {
            let spans = kb
                .hyperedge(&h.hyperedge_id)
                .map(|h| vec![h.ref_span])
                .unwrap_or_default();
            map.insert(h.hyperedge_id.clone(), spans);
        }
        for c in &self.clusters {
            map.insert(c.ch_id.clone(), c.segments.iter().map(|s| s.span).collect());
        }
        self.provenance = map;
    }
}

/// Raw operator results for one query.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrievalResults<'kb> {
    pub entities: Vec<&'kb EntityNode>,
    pub edges: Vec<Scored>,
    pub hyperedges: Vec<Scored>,
    pub clusters: Vec<Scored>,
}

/// Trims the bundle to `budget` tokens: cluster texts are shortened from
/// the lowest-ranked cluster upward, then whole items are dropped from the
/// tail of the hyperedge, edge and entity sections in that order.
fn enforce_budget(bundle: &mut EvidenceBundle, budget: usize) {
    let mut total = bundle.token_count();
    for c in bundle.clusters.iter_mut().rev() {
        if total <= budget {
            break;
        }
        let size = count_tokens(&c.text);
        let keep = size.saturating_sub(total - budget);
        let (kept, cut) = truncate_tokens(&c.text, keep);
        if cut {
            let len = kept.trim_end().len();
            c.text.truncate(len);
            c.truncated = true;
            let segs = c
                .segments
                .drain(..)
                .map(|s| crate::ssc::TextSegment {
                    range: s.start..s.end,
                    hyperedges: s.hyperedges,
                    span: s.span,
                })
                .collect();
            c.segments = clip_segments(segs, len)
                .into_iter()
                .map(|s| ClusterSegment {
                    start: s.range.start,
                    end: s.range.end,
                    hyperedges: s.hyperedges,
                    span: s.span,
                })
                .collect();
            total = total - size + keep;
        }
    }
    let before = bundle.clusters.len();
    bundle.clusters.retain(|c| !c.text.trim().is_empty());
    let mut dropped = before - bundle.clusters.len();
    while total > budget {
        let removed = if let Some(h) = bundle.hyperedges.pop() {
            count_tokens(&hyperedge_line(&h))
        } else if let Some(e) = bundle.edges.pop() {
            count_tokens(&edge_line(&e))
        } else if let Some(e) = bundle.entities.pop() {
            count_tokens(&entity_line(&e))
        } else {
            break;
        };
        total -= removed;
        dropped += 1;
    }
    bundle.stats.dropped = dropped;
}

/// Builds the bundle from operator results, keeping only the sections the
/// mode and ablation flags allow, then applies the token budget.
pub fn assemble_evidence(
    query: &str,
    mode: RetrievalMode,
    ablation: Ablation,
    results: &RetrievalResults<'_>,
    kb: &KnowledgeBase,
    budget: usize,
) -> EvidenceBundle {
    let modules = Modules::new(mode, ablation);
    let name_of = |id: &Id| {
        kb.entity(id)
            .map(|e| e.v_name.clone())
            .unwrap_or_else(|| id.to_string())
    };
    let mut bundle = EvidenceBundle {
        query: query.to_string(),
        mode,
        ablation,
        stats: RetrievalStats {
            matched_entities: results.entities.len(),
            hyperedges: results.hyperedges.len(),
            edges: results.edges.len(),
            clusters: results.clusters.len(),
            dropped: 0,
        },
        ..EvidenceBundle::default()
    };
    if modules.entities {
        bundle.entities = results
            .entities
            .iter()
            .map(|e| EntityEvidence {
                entity_id: e.entity_id.clone(),
                name: e.v_name.clone(),
                summary: e.v_text.clone(),
            })
            .collect();
    }
    if modules.edges {
        bundle.edges = results
            .edges
            .iter()
            .filter_map(|s| {
                let e = kb.edge(&s.id)?;
                Some(EdgeEvidence {
                    edge_id: e.edge_id.clone(),
                    source: name_of(&e.source_entity),
                    relation: e.e_text.clone(),
                    target: name_of(&e.target_entity),
                    score: s.score,
                })
            })
            .collect();
    }
    if modules.hyperedges {
        bundle.hyperedges = results
            .hyperedges
            .iter()
            .filter_map(|s| {
                let h = kb.hyperedge(&s.id)?;
                Some(HyperedgeEvidence {
                    hyperedge_id: h.hyperedge_id.clone(),
                    statement: h.h_text.clone(),
                    source_text: h.h_ref.clone(),
                    score: s.score,
                })
            })
            .collect();
    }
    if modules.clusters {
        bundle.clusters = results
            .clusters
            .iter()
            .filter_map(|s| {
                let c = kb.cluster(&s.id)?;
                let segments = cluster_layout(c, &kb.hyperedges)
                    .into_iter()
                    .map(|seg| ClusterSegment {
                        start: seg.range.start,
                        end: seg.range.end,
                        hyperedges: seg.hyperedges,
                        span: seg.span,
                    })
                    .collect();
                Some(ClusterEvidence {
                    ch_id: c.ch_id.clone(),
                    text: c.ch_text.clone(),
                    score: s.score,
                    segments,
                    truncated: false,
                })
            })
            .collect();
    }
    enforce_budget(&mut bundle, budget);
    bundle.rebuild_provenance(kb);
    bundle
}

/// Runs every enabled operator for `query` and assembles the evidence.
pub fn retrieve(
    query: &str,
    kb: &KnowledgeBase,
    config: &RetrievalConfig,
    ablation: Ablation,
    provider: &dyn Provider,
    prompts: &Prompts,
) -> Result<EvidenceBundle, RetrievalError> {
    config.validate()?;
    if query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let modules = Modules::new(config.mode, ablation);
    let mut results = RetrievalResults::default();
    if modules.entities {
        let names = extract_query_entities(query, provider, prompts);
        results.entities = match_entities(&names, kb);
    }
    if modules.needs_embedding() {
        let q = provider
            .embed(&[query.to_string()], Phase::Generation)?
            .pop()
            .ok_or_else(|| ProviderError::Malformed("no query embedding returned".into()))?;
        if modules.edges {
            results.edges = retrieve_edges(&q, kb, config.n_edges, config.tau_edge)?;
        }
        if modules.scans_hyperedges() {
            results.hyperedges = retrieve_hyperedges(&q, kb, config.n_hyperedges, config.tau_hyperedge)?;
        }
        if modules.clusters {
            results.clusters = retrieve_clusters(&results.hyperedges, kb);
        }
    }
    Ok(assemble_evidence(
        query,
        config.mode,
        ablation,
        &results,
        kb,
        config.token_budget,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// No evidence was retrieved; the answer rests on the question alone.
    pub low_confidence: bool,
    pub note: Option<String>,
    pub bundle: EvidenceBundle,
}

/// Generation failure; the assembled evidence is kept for inspection.
#[derive(Debug, thiserror::Error)]
#[error("answer generation failed: {source}")]
pub struct GenerationError {
    #[source]
    pub source: ProviderError,
    pub bundle: Box<EvidenceBundle>,
}

pub const NO_EVIDENCE_NOTE: &str = "No evidence was retrieved; the answer is based on the question alone.";

/// One chat call conditioned on the rendered bundle.
pub fn generate_answer(
    bundle: EvidenceBundle,
    provider: &dyn Provider,
    prompts: &Prompts,
    temperature: f32,
) -> Result<Answer, GenerationError> {
    let request = ChatRequest::new(Task::Generation, prompts::GENERATION_SYSTEM, bundle.render(prompts))
        .with_temperature(temperature)
        .with_max_output_tokens(512);
    match provider.chat(&request) {
        Ok(text) => {
            let low_confidence = bundle.is_empty();
            Ok(Answer {
                text: text.trim().to_string(),
                low_confidence,
                note: low_confidence.then(|| NO_EVIDENCE_NOTE.to_string()),
                bundle,
            })
        }
        Err(source) => Err(GenerationError {
            source,
            bundle: Box::new(bundle),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;
    use crate::ids::IdKind;
    use crate::kbuild::{DocKnowledge, Edge, Hyperedge};
    use crate::providers::{MockFaults, MockProvider};
    use crate::ssc::SemanticCluster;
    use crate::store::{merge_documents, BuildMeta};

    fn unit(angle: f64) -> Embedding {
        Embedding(vec![angle.cos() as f32, angle.sin() as f32])
    }

    fn id(kind: IdKind, n: u32) -> Id {
        Id::new("d", kind, n)
    }

    /// A KB whose hyperedge `hk` has similarity `sims[k-1]` with the query
    /// direction (1, 0).
    const SENTENCES: [&str; 5] = [
        "Alice met Bob.",
        "Bob met Acme.",
        "Acme met Alice.",
        "Alice met Acme.",
        "Bob met Alice.",
    ];

    /// A KB whose hyperedge `hk` has similarity `sims[k-1]` with the query
    /// direction (1, 0).
    fn kb_with(sims: &[f64], clusters: &[&[u32]]) -> KnowledgeBase {
        let text = SENTENCES.join(" ");
        let span_of = |i: usize| {
            let s = SENTENCES[i % SENTENCES.len()];
            let start = text.find(s).unwrap();
            Span::new(start, start + s.len())
        };
        let chunk = Chunk {
            doc_id: "d".into(),
            chunk_index: 1,
            token_count: 15,
            span: Span::new(0, text.len()),
            text: text.clone(),
        };
        let entity = |n: u32, name: &str, aliases: Vec<String>| EntityNode {
            entity_id: id(IdKind::Entity, n),
            v_name: name.into(),
            v_text: format!("{name} appears."),
            hyperdegree: sims.len(),
            aliases,
        };
        let hyperedges: Vec<Hyperedge> = sims
            .iter()
            .enumerate()
            .map(|(i, &s)| Hyperedge {
                hyperedge_id: id(IdKind::Hyperedge, i as u32 + 1),
                h_text: format!("statement {}", i + 1),
                h_ref: SENTENCES[i % SENTENCES.len()].into(),
                incident_entities: vec![id(IdKind::Entity, 1), id(IdKind::Entity, 2)],
                k_index: i + 1,
                chunk_index: 1,
                ref_span: span_of(i),
                embedding: unit(s.acos()),
            })
            .collect();
        let edges = sims
            .iter()
            .enumerate()
            .map(|(i, &s)| Edge {
                edge_id: id(IdKind::Edge, i as u32 + 1),
                source_entity: id(IdKind::Entity, 1),
                target_entity: id(IdKind::Entity, 2),
                e_text: format!("relation {}", i + 1),
                provenance: Some(id(IdKind::Hyperedge, i as u32 + 1)),
                provenance_span: Some(span_of(i)),
                embedding: unit(s.acos()),
            })
            .collect();
        let clusters = clusters
            .iter()
            .enumerate()
            .map(|(c, members)| {
                let hs: Vec<&Hyperedge> = members.iter().map(|&m| &hyperedges[m as usize - 1]).collect();
                SemanticCluster {
                    ch_id: id(IdKind::Cluster, c as u32 + 1),
                    doc_id: "d".into(),
                    member_hyperedges: members.iter().map(|&m| id(IdKind::Hyperedge, m)).collect(),
                    ch_text: crate::ssc::cluster_text(&hs, 4000),
                }
            })
            .collect();
        let doc = DocKnowledge {
            doc_id: "d".into(),
            chunks: vec![chunk],
            entities: vec![
                entity(1, "Acme", vec!["Acme Corporation".into()]),
                entity(2, "Bob", Vec::new()),
            ],
            hyperedges,
            edges,
            clusters,
        };
        merge_documents(&[doc], BuildMeta::default()).unwrap()
    }

    fn q() -> Embedding {
        Embedding(vec![1.0, 0.0])
    }

    fn ids(hits: &[Scored]) -> Vec<u32> {
        hits.iter().map(|s| s.id.counter()).collect()
    }

    #[test]
    fn threshold_and_top_n() {
        let kb = kb_with(&[0.95, 0.92, 0.91, 0.85], &[]);
        assert_eq!(ids(&retrieve_hyperedges(&q(), &kb, 2, 0.9).unwrap()), [1, 2]);
        let kb2 = kb_with(&[0.95, 0.92], &[]);
        assert_eq!(ids(&retrieve_hyperedges(&q(), &kb2, 7, 0.9).unwrap()), [1, 2]);
        let kb3 = kb_with(&[0.5, 0.85], &[]);
        assert!(retrieve_hyperedges(&q(), &kb3, 7, 0.9).unwrap().is_empty());
        assert_eq!(ids(&retrieve_edges(&q(), &kb, 2, 0.9).unwrap()), [1, 2]);
        assert!(retrieve_edges(&q(), &kb, 0, 0.9).unwrap().is_empty());
        assert!(matches!(
            retrieve_hyperedges(&Embedding(vec![0.0, 0.0]), &kb, 2, 0.9),
            Err(RetrievalError::ZeroVector)
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let kb = kb_with(&[0.95, 0.97, 0.95], &[]);
        assert_eq!(ids(&retrieve_hyperedges(&q(), &kb, 7, 0.9).unwrap()), [2, 1, 3]);
    }

    #[test]
    fn clusters_intersect_retrieved() {
        let kb = kb_with(&[0.99, 0.95, 0.2, 0.3, 0.97], &[&[1, 2], &[3, 4]]);
        let hits = retrieve_hyperedges(&q(), &kb, 7, 0.9).unwrap();
        let cs = retrieve_clusters(&hits, &kb);
        assert_eq!(ids(&cs), [1]);
        assert!((cs[0].score - 0.99).abs() < 1e-6);
        // h5 is noise
        let only_noise = vec![Scored {
            id: id(IdKind::Hyperedge, 5),
            score: 0.97,
        }];
        assert!(retrieve_clusters(&only_noise, &kb).is_empty());
    }

    #[test]
    fn entity_matching_normalizes_and_uses_aliases() {
        let kb = kb_with(&[0.95], &[]);
        let m = match_entities(&["ACME!".into()], &kb);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].v_name, "Acme");
        assert_eq!(match_entities(&["acme corporation".into()], &kb).len(), 1);
        assert!(match_entities(&["Zed".into()], &kb).is_empty());
    }

    #[test]
    fn mode_contracts() {
        let kb = kb_with(&[0.99, 0.95, 0.93], &[&[1, 2, 3]]);
        let results = RetrievalResults {
            entities: vec![&kb.entities[0]],
            edges: retrieve_edges(&q(), &kb, 3, 0.9).unwrap(),
            hyperedges: retrieve_hyperedges(&q(), &kb, 7, 0.9).unwrap(),
            clusters: vec![Scored {
                id: id(IdKind::Cluster, 1),
                score: 0.99,
            }],
        };
        let graph = assemble_evidence("q", RetrievalMode::Graph, Ablation::default(), &results, &kb, 4000);
        assert!(graph.hyperedges.is_empty() && graph.clusters.is_empty());
        assert_eq!(graph.edges.len(), 3);
        let hyper = assemble_evidence("q", RetrievalMode::Hypergraph, Ablation::default(), &results, &kb, 4000);
        assert!(hyper.edges.is_empty());
        assert_eq!((hyper.hyperedges.len(), hyper.clusters.len()), (3, 1));
        let hybrid = assemble_evidence("q", RetrievalMode::Hybrid, Ablation::default(), &results, &kb, 4000);
        assert_eq!(hybrid.entities.len(), 1);
        assert_eq!(hybrid.provenance.len(), 1 + 3 + 3 + 1);
        let no_hr = assemble_evidence(
            "q",
            RetrievalMode::Hybrid,
            Ablation {
                no_hr: true,
                ..Default::default()
            },
            &results,
            &kb,
            4000,
        );
        assert!(no_hr.hyperedges.is_empty());
        assert_eq!(no_hr.clusters, hybrid.clusters);
    }

    #[test]
    fn budget_truncates_clusters_first() {
        let kb = kb_with(&[0.99, 0.95, 0.93], &[&[1, 2, 3]]);
        let results = RetrievalResults {
            hyperedges: retrieve_hyperedges(&q(), &kb, 7, 0.9).unwrap(),
            clusters: vec![Scored {
                id: id(IdKind::Cluster, 1),
                score: 0.99,
            }],
            ..Default::default()
        };
        // 3 hyperedges x 2 tokens + cluster of 9 tokens = 15
        let full = assemble_evidence("q", RetrievalMode::Hypergraph, Ablation::default(), &results, &kb, 4000);
        assert_eq!(full.token_count(), 15);
        let cut = assemble_evidence("q", RetrievalMode::Hypergraph, Ablation::default(), &results, &kb, 10);
        assert_eq!(cut.token_count(), 10);
        assert_eq!(cut.hyperedges.len(), 3);
        let c = &cut.clusters[0];
        assert!(c.truncated);
        assert_eq!(c.text, "Alice met Bob.\nBob");
        assert_eq!(c.segments.len(), 2);
        assert_eq!(c.segments[1].end, c.text.len());
        assert_eq!(cut.provenance[&c.ch_id], vec![Span::new(0, 14), Span::new(15, 18)]);
        let tight = assemble_evidence("q", RetrievalMode::Hypergraph, Ablation::default(), &results, &kb, 3);
        assert!(tight.clusters.is_empty());
        assert_eq!(tight.hyperedges.len(), 1);
        assert_eq!(tight.stats.dropped, 3);
    }

    #[test]
    fn generation_paths() {
        let prompts = Prompts::default();
        let p = MockProvider::default();
        let empty = EvidenceBundle {
            query: "Who founded Acme?".into(),
            ..Default::default()
        };
        let a = generate_answer(empty.clone(), &p, &prompts, 0.0).unwrap();
        assert!(a.low_confidence);
        assert!(a.note.is_some());
        let down = MockProvider::default().with_faults(MockFaults {
            generation_unavailable: true,
            ..Default::default()
        });
        let err = generate_answer(empty.clone(), &down, &prompts, 0.0).unwrap_err();
        assert_eq!(*err.bundle, empty);
    }

    #[test]
    fn query_entities_via_mock() {
        let prompts = Prompts::default();
        let p = MockProvider::default();
        assert_eq!(extract_query_entities("Who founded Acme?", &p, &prompts), ["Acme"]);
        assert!(extract_query_entities("why?", &p, &prompts).is_empty());
        let down = MockProvider::default().with_faults(MockFaults {
            chat_unavailable: true,
            ..Default::default()
        });
        assert!(extract_query_entities("Who founded Acme?", &down, &prompts).is_empty());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("GRAPH".parse::<RetrievalMode>().unwrap(), RetrievalMode::Graph);
        assert!("both".parse::<RetrievalMode>().is_err());
        assert_eq!(RetrievalMode::default(), RetrievalMode::Hybrid);
    }
}
