//! Per-document knowledge hypergraph and binary knowledge graph.
//!
//! Every knowledge item becomes one hyperedge. Entities are deduplicated
//! within a document by normalized name. Entity summaries are written only
//! after all hyperedges exist: entities with hyperdegree above `tau_s` get a
//! model-written summary, the rest a concatenation of their incident
//! statements. Entities with hyperdegree above `tau_e` become anchors for
//! pairwise edge extraction.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::extraction::KnowledgeItem;
use crate::ids::{Id, IdKind, Span};
use crate::prompts::{self, Prompts, EDGE_SYSTEM, SUMMARY_SYSTEM};
use crate::providers::{ChatRequest, Embedding, Phase, Provider, ProviderError, Task};
use crate::ssc::SemanticCluster;
use crate::text::{normalize_name, truncate_tokens};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KbuildConfig {
    /// Summaries are model-written when hyperdegree exceeds this.
    pub tau_s: usize,
    /// Entities whose hyperdegree exceeds this seed edge extraction.
    pub tau_e: usize,
    /// Token cap for concatenated summaries (tail truncated).
    pub summary_token_budget: usize,
    pub max_output_tokens: u32,
}

impl Default for KbuildConfig {
    fn default() -> Self {
        KbuildConfig {
            tau_s: 9,
            tau_e: 3,
            summary_token_budget: 512,
            max_output_tokens: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: Id,
    pub v_name: String,
    pub v_text: String,
    pub hyperdegree: usize,
    pub aliases: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperedge {
    pub hyperedge_id: Id,
    pub h_text: String,
    pub h_ref: String,
    pub incident_entities: Vec<Id>,
    pub k_index: usize,
    pub chunk_index: usize,
    pub ref_span: Span,
    pub embedding: Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub edge_id: Id,
    pub source_entity: Id,
    pub target_entity: Id,
    pub e_text: String,
    /// Hyperedge whose statement supports the relation.
    pub provenance: Option<Id>,
    pub provenance_span: Option<Span>,
    pub embedding: Embedding,
}

/// Everything built for one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocKnowledge {
    pub doc_id: String,
    pub chunks: Vec<Chunk>,
    pub entities: Vec<EntityNode>,
    pub hyperedges: Vec<Hyperedge>,
    pub edges: Vec<Edge>,
    pub clusters: Vec<SemanticCluster>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Hypergraph {
    pub entities: Vec<EntityNode>,
    pub hyperedges: Vec<Hyperedge>,
}

impl Hypergraph {
    /// Hyperedges incident to each entity, in k_index order.
    pub fn incidence(&self) -> HashMap<&Id, Vec<&Hyperedge>> {
        let mut map: HashMap<&Id, Vec<&Hyperedge>> = HashMap::new();
        for h in &self.hyperedges {
            for v in &h.incident_entities {
                map.entry(v).or_default().push(h);
            }
        }
        for list in map.values_mut() {
            list.sort_by_key(|h| h.k_index);
        }
        map
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KbuildError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Ordered record of build steps, used to check phase ordering.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildTrace {
    pub events: Vec<TraceEvent>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceEvent {
    HyperedgeBuilt(Id),
    SummaryWritten(Id),
    EdgeBuilt(Id),
}

/// Text embedded for a hyperedge: its statement followed by the names of its
/// incident entities.
pub fn hyperedge_embedding_text(h_text: &str, names: &[&str]) -> String {
    format!("{h_text} [{}]", names.join(", "))
}

/// Text embedded for an edge: relation plus both endpoint names.
pub fn edge_embedding_text(source: &str, e_text: &str, target: &str) -> String {
    format!("{source} {e_text} {target}")
}

/// One hyperedge per item, entities merged by normalized name. Embeddings are
/// computed in a single batch. Summaries are left empty.
pub fn build_hypergraph(
    doc_id: &str,
    items: &[KnowledgeItem],
    provider: &dyn Provider,
    trace: &mut BuildTrace,
) -> Result<Hypergraph, KbuildError> {
    let mut entities: Vec<EntityNode> = Vec::new();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    let mut hyperedges = Vec::with_capacity(items.len());
    let mut embed_texts = Vec::with_capacity(items.len());

    for (n, item) in items.iter().enumerate() {
        let mut incident = Vec::new();
        for name in &item.k_entities {
            let key = normalize_name(name);
            if key.is_empty() {
                continue;
            }
            let idx = *by_key.entry(key).or_insert_with(|| {
                entities.push(EntityNode {
                    entity_id: Id::new(doc_id, IdKind::Entity, entities.len() as u32 + 1),
                    v_name: name.trim().to_string(),
                    v_text: String::new(),
                    hyperdegree: 0,
                    aliases: Vec::new(),
                });
                entities.len() - 1
            });
            let entity = &mut entities[idx];
            let surface = name.trim();
            if surface != entity.v_name && !entity.aliases.iter().any(|a| a == surface) {
                entity.aliases.push(surface.to_string());
            }
            if !incident.contains(&idx) {
                entity.hyperdegree += 1;
                incident.push(idx);
            }
        }
        if incident.len() < 2 {
            log::warn!("{doc_id}: item {} has fewer than two entities; skipped", item.k_index);
            for &idx in &incident {
                entities[idx].hyperdegree -= 1;
            }
            continue;
        }
        let names: Vec<&str> = incident.iter().map(|&i| entities[i].v_name.as_str()).collect();
        embed_texts.push(hyperedge_embedding_text(&item.k_text, &names));
        let id = Id::new(doc_id, IdKind::Hyperedge, n as u32 + 1);
        trace.events.push(TraceEvent::HyperedgeBuilt(id.clone()));
        hyperedges.push(Hyperedge {
            hyperedge_id: id,
            h_text: item.k_text.clone(),
            h_ref: item.k_ref.clone(),
            incident_entities: incident.iter().map(|&i| entities[i].entity_id.clone()).collect(),
            k_index: item.k_index,
            chunk_index: item.chunk_index,
            ref_span: item.ref_span,
            embedding: Embedding(Vec::new()),
        });
    }
    entities.retain(|e| e.hyperdegree > 0);

    if !embed_texts.is_empty() {
        let vectors = provider.embed(&embed_texts, Phase::Construction)?;
        for (h, v) in hyperedges.iter_mut().zip(vectors) {
            h.embedding = v;
        }
    }
    Ok(Hypergraph { entities, hyperedges })
}

/// Summary for one entity given its incident statements in k_index order.
pub fn summarize_entity(
    entity: &EntityNode,
    incident_texts: &[&str],
    config: &KbuildConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
) -> String {
    if entity.hyperdegree == 0 || incident_texts.is_empty() {
        return String::new();
    }
    let concatenated = || {
        let joined = incident_texts.join(" ");
        truncate_tokens(&joined, config.summary_token_budget).0.to_string()
    };
    if entity.hyperdegree <= config.tau_s {
        return concatenated();
    }
    let evidence: String = incident_texts.iter().map(|t| format!("- {t}\n")).collect();
    let prompt = prompts
        .summarization
        .render(&[("name", &entity.v_name), ("evidence", evidence.trim_end())]);
    let request =
        ChatRequest::new(Task::Summarization, SUMMARY_SYSTEM, prompt).with_max_output_tokens(config.max_output_tokens);
    match provider.chat(&request) {
        Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
        Ok(_) => {
            log::warn!("empty summary for {}; using concatenation", entity.entity_id);
            concatenated()
        }
        Err(err) => {
            log::warn!("summary for {} failed ({err}); using concatenation", entity.entity_id);
            concatenated()
        }
    }
}

/// Parenthetical or quoted variants written right after `name` in `text`,
/// e.g. `Robert Smith (Bob)` or `Acme Corporation ("Acme")`.
pub fn harvest_aliases(name: &str, text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let needle = name.to_lowercase();
    let mut out = Vec::new();
    if needle.is_empty() || lower.len() != text.len() {
        return out;
    }
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let end = from + pos + needle.len();
        from = end;
        let rest = text[end..].trim_start();
        let inner = if let Some(r) = rest.strip_prefix('(') {
            r.split_once(')').map(|(a, _)| a)
        } else if let Some(r) = rest.strip_prefix('"') {
            r.split_once('"').map(|(a, _)| a)
        } else {
            None
        };
        let Some(inner) = inner else { continue };
        for part in inner.split([',', ';']) {
            let part = part.trim();
            let part = part.strip_prefix("or ").unwrap_or(part);
            let part = part.strip_prefix("also ").unwrap_or(part);
            let part = part.strip_prefix("aka ").unwrap_or(part);
            let candidate = part.trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace());
            if !candidate.is_empty() && candidate.split_whitespace().count() <= 6 {
                out.push(candidate.to_string());
            }
        }
    }
    out
}

fn add_alias(entity: &mut EntityNode, alias: &str) {
    let key = normalize_name(alias);
    if key.is_empty() || key == normalize_name(&entity.v_name) {
        return;
    }
    if entity.aliases.iter().any(|a| normalize_name(a) == key) {
        return;
    }
    entity.aliases.push(alias.to_string());
}

/// Writes every entity summary and harvests aliases from incident texts and
/// the summary. Must run after the document's hyperedges are complete.
pub fn summarize_entities(
    hypergraph: &mut Hypergraph,
    config: &KbuildConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
    trace: &mut BuildTrace,
) {
    let incidence = hypergraph.incidence();
    let texts: Vec<Vec<&str>> = hypergraph
        .entities
        .iter()
        .map(|e| {
            incidence
                .get(&e.entity_id)
                .map(|hs| hs.iter().map(|h| h.h_text.as_str()).collect())
                .unwrap_or_default()
        })
        .collect();
    let refs: Vec<Vec<&str>> = hypergraph
        .entities
        .iter()
        .map(|e| {
            incidence
                .get(&e.entity_id)
                .map(|hs| hs.iter().map(|h| h.h_ref.as_str()).collect())
                .unwrap_or_default()
        })
        .collect();
    let pairs: Vec<(&EntityNode, &Vec<&str>)> = hypergraph.entities.iter().zip(&texts).collect();
    let summaries = crate::exec::map(&pairs, |(e, t)| summarize_entity(e, t, config, provider, prompts));
    drop(pairs);
    let mut harvested: Vec<Vec<String>> = Vec::with_capacity(summaries.len());
    for ((entity, summary), (t, r)) in hypergraph.entities.iter().zip(&summaries).zip(texts.iter().zip(&refs)) {
        let mut found = harvest_aliases(&entity.v_name, summary);
        for text in t.iter().chain(r.iter()) {
            found.extend(harvest_aliases(&entity.v_name, text));
        }
        harvested.push(found);
    }
    drop(incidence);
    for ((entity, summary), found) in hypergraph.entities.iter_mut().zip(summaries).zip(harvested) {
        entity.v_text = summary;
        for alias in found {
            add_alias(entity, &alias);
        }
        trace.events.push(TraceEvent::SummaryWritten(entity.entity_id.clone()));
    }
}

/// Entities with hyperdegree strictly above `tau_e`, by degree descending then
/// name then id.
pub fn select_anchors(entities: &[EntityNode], tau_e: usize) -> Vec<&EntityNode> {
    let mut anchors: Vec<&EntityNode> = entities.iter().filter(|e| e.hyperdegree > tau_e).collect();
    anchors.sort_by(|a, b| {
        b.hyperdegree
            .cmp(&a.hyperdegree)
            .then_with(|| a.v_name.cmp(&b.v_name))
            .then_with(|| a.entity_id.cmp(&b.entity_id))
    });
    anchors
}

/// An edge before ids and embeddings are assigned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeDraft {
    pub source: Id,
    pub target: Id,
    pub e_text: String,
    pub provenance: Option<Id>,
    pub provenance_span: Option<Span>,
}

#[derive(Deserialize)]
struct RawRelation {
    source: String,
    target: String,
    relation: String,
    #[serde(default)]
    evidence: Option<serde_json::Value>,
}

fn parse_relations(response: &str) -> Option<Vec<RawRelation>> {
    response.match_indices('[').find_map(|(pos, _)| {
        serde_json::Deserializer::from_str(&response[pos..])
            .into_iter::<Vec<RawRelation>>()
            .next()
            .and_then(Result::ok)
    })
}

#[derive(Debug, thiserror::Error)]
pub enum EdgeExtractionError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("unparseable edge extraction output for anchor {0}")]
    Parse(Id),
}

/// Pairwise relations between the anchor and its neighbors, as stated in the
/// anchor's incident hyperedges.
pub fn extract_edges(
    anchor: &EntityNode,
    incident: &[&Hyperedge],
    neighbors: &[&EntityNode],
    config: &KbuildConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
) -> Result<Vec<EdgeDraft>, EdgeExtractionError> {
    if incident.is_empty() {
        return Ok(Vec::new());
    }
    let entity_lines: String = neighbors.iter().map(|e| format!("- {}\n", e.v_name)).collect();
    let evidence: String = incident
        .iter()
        .enumerate()
        .map(|(n, h)| format!("- [{}] {}\n", n + 1, h.h_text))
        .collect();
    let prompt = prompts.edge_extraction.render(&[
        ("anchor", &anchor.v_name),
        (
            "entities",
            if entity_lines.is_empty() {
                prompts::NONE
            } else {
                entity_lines.trim_end()
            },
        ),
        ("evidence", evidence.trim_end()),
    ]);
    let request =
        ChatRequest::new(Task::EdgeExtraction, EDGE_SYSTEM, prompt).with_max_output_tokens(config.max_output_tokens);
    let response = provider.chat(&request)?;
    let relations = parse_relations(&response).ok_or_else(|| EdgeExtractionError::Parse(anchor.entity_id.clone()))?;

    let mut lookup: HashMap<String, &EntityNode> = HashMap::new();
    for e in neighbors.iter().copied().chain(std::iter::once(anchor)) {
        lookup.entry(normalize_name(&e.v_name)).or_insert(e);
        for a in &e.aliases {
            lookup.entry(normalize_name(a)).or_insert(e);
        }
    }
    let mut drafts = Vec::new();
    for rel in relations {
        let (Some(src), Some(tgt)) = (
            lookup.get(&normalize_name(&rel.source)),
            lookup.get(&normalize_name(&rel.target)),
        ) else {
            continue;
        };
        let e_text = rel.relation.trim();
        if src.entity_id == tgt.entity_id || e_text.is_empty() {
            continue;
        }
        let evidence_idx = match rel.evidence {
            Some(serde_json::Value::Number(n)) => n.as_u64().map(|n| n as usize),
            Some(serde_json::Value::String(s)) => s.trim().parse().ok(),
            _ => None,
        };
        let supporting = evidence_idx
            .and_then(|n| n.checked_sub(1))
            .and_then(|k| incident.get(k));
        drafts.push(EdgeDraft {
            source: src.entity_id.clone(),
            target: tgt.entity_id.clone(),
            e_text: e_text.to_string(),
            provenance: supporting.map(|h| h.hyperedge_id.clone()),
            provenance_span: supporting.map(|h| h.ref_span),
        });
    }
    Ok(drafts)
}

/// Runs edge extraction for every anchor, deduplicates by
/// `(source, target, normalized relation)` and embeds the survivors.
pub fn build_graph(
    doc_id: &str,
    hypergraph: &Hypergraph,
    config: &KbuildConfig,
    provider: &dyn Provider,
    prompts: &Prompts,
    trace: &mut BuildTrace,
) -> Result<Vec<Edge>, KbuildError> {
    let anchors = select_anchors(&hypergraph.entities, config.tau_e);
    if anchors.is_empty() {
        return Ok(Vec::new());
    }
    let incidence = hypergraph.incidence();
    let by_id: HashMap<&Id, &EntityNode> = hypergraph.entities.iter().map(|e| (&e.entity_id, e)).collect();
    let results = crate::exec::map(&anchors, |anchor| {
        let incident: Vec<&Hyperedge> = incidence.get(&anchor.entity_id).cloned().unwrap_or_default();
        let neighbor_ids: BTreeMap<&Id, ()> = incident
            .iter()
            .flat_map(|h| h.incident_entities.iter())
            .filter(|id| **id != anchor.entity_id)
            .map(|id| (id, ()))
            .collect();
        let neighbors: Vec<&EntityNode> = neighbor_ids.keys().filter_map(|id| by_id.get(id).copied()).collect();
        extract_edges(anchor, &incident, &neighbors, config, provider, prompts)
    });

    let mut seen = HashSet::new();
    let mut drafts = Vec::new();
    for (anchor, result) in anchors.iter().zip(results) {
        match result {
            Ok(list) => {
                for d in list {
                    if seen.insert((d.source.clone(), d.target.clone(), normalize_name(&d.e_text))) {
                        drafts.push(d);
                    }
                }
            }
            Err(err) => log::warn!("{doc_id}: edges for anchor {} skipped: {err}", anchor.entity_id),
        }
    }
    if drafts.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = drafts
        .iter()
        .map(|d| edge_embedding_text(&by_id[&d.source].v_name, &d.e_text, &by_id[&d.target].v_name))
        .collect();
    let vectors = provider.embed(&texts, Phase::Construction)?;
    let edges: Vec<Edge> = drafts
        .into_iter()
        .zip(vectors)
        .enumerate()
        .map(|(n, (d, embedding))| Edge {
            edge_id: Id::new(doc_id, IdKind::Edge, n as u32 + 1),
            source_entity: d.source,
            target_entity: d.target,
            e_text: d.e_text,
            provenance: d.provenance,
            provenance_span: d.provenance_span,
            embedding,
        })
        .collect();
    for e in &edges {
        trace.events.push(TraceEvent::EdgeBuilt(e.edge_id.clone()));
    }
    Ok(edges)
}
