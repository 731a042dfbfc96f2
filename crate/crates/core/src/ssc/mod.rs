//! Structure-aware semantic clustering of a document's hyperedges.
//!
//! Hyperedges are clustered with HDBSCAN under a distance that adds a
//! positional term to cosine distance, so clusters group statements that are
//! both similar and close together in the document. Each cluster carries the
//! concatenated source spans of its members as grounded context.

pub mod distance;
pub mod hdbscan;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{Id, IdKind, Span};
use crate::kbuild::Hyperedge;
use crate::text::truncate_tokens;

pub use distance::{distance_matrix, pair_distance, DistanceMatrix};
pub use hdbscan::{hdbscan, Labels};

/// Separator between member spans in a cluster text.
pub const SPAN_SEPARATOR: &str = "\n";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SscConfig {
    pub alpha: f64,
    pub min_cluster_size: usize,
    pub min_samples: usize,
    /// Divide the index gap by the number of hyperedges.
    pub normalize_position: bool,
    /// Token cap for a cluster text (tail truncated).
    pub max_text_tokens: usize,
}

impl Default for SscConfig {
    fn default() -> Self {
        SscConfig {
            alpha: 0.1,
            min_cluster_size: 3,
            min_samples: 2,
            normalize_position: false,
            max_text_tokens: 4000,
        }
    }
}

impl SscConfig {
    pub fn validate(&self) -> Result<(), SscError> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(SscError::InvalidConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.min_cluster_size < 2 {
            return Err(SscError::InvalidConfig(format!(
                "min_cluster_size must be >= 2, got {}",
                self.min_cluster_size
            )));
        }
        if self.min_samples < 1 {
            return Err(SscError::InvalidConfig("min_samples must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SscError {
    #[error("invalid clustering config: {0}")]
    InvalidConfig(String),
    #[error("zero-norm embedding for {0}")]
    ZeroVector(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least two hyperedges, got {0}")]
    TooFewPoints(usize),
    #[error("{labels} labels for {points} hyperedges")]
    LengthMismatch { labels: usize, points: usize },
    #[error("cluster label {label} has {size} member(s), below min_cluster_size {min}")]
    InconsistentLabels { label: usize, size: usize, min: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticCluster {
    pub ch_id: Id,
    pub doc_id: String,
    /// Members in k_index order.
    pub member_hyperedges: Vec<Id>,
    pub ch_text: String,
}

/// One piece of a cluster text and where it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextSegment {
    /// Byte range within `ch_text`.
    pub range: std::ops::Range<usize>,
    /// Hyperedges sharing this span (more than one when duplicates collapsed).
    pub hyperedges: Vec<Id>,
    /// Span in the document; shortened when the segment was truncated.
    pub span: Span,
}

/// Member spans in k_index order, consecutive identical spans collapsed, with
/// their byte ranges in the untruncated text.
fn segments(members: &[&Hyperedge]) -> (String, Vec<TextSegment>) {
    let mut text = String::new();
    let mut out: Vec<TextSegment> = Vec::new();
    let mut last_ref: Option<&str> = None;
    for h in members {
        if last_ref == Some(h.h_ref.as_str()) {
            out.last_mut()
                .expect("segment exists")
                .hyperedges
                .push(h.hyperedge_id.clone());
            continue;
        }
        if !text.is_empty() {
            text.push_str(SPAN_SEPARATOR);
        }
        let start = text.len();
        text.push_str(&h.h_ref);
        out.push(TextSegment {
            range: start..text.len(),
            hyperedges: vec![h.hyperedge_id.clone()],
            span: h.ref_span,
        });
        last_ref = Some(&h.h_ref);
    }
    (text, out)
}

fn sorted_members<'a>(ids: &[Id], hyperedges: &'a [Hyperedge]) -> Vec<&'a Hyperedge> {
    let by_id: std::collections::HashMap<&Id, &Hyperedge> = hyperedges.iter().map(|h| (&h.hyperedge_id, h)).collect();
    let mut members: Vec<&Hyperedge> = ids.iter().filter_map(|id| by_id.get(id).copied()).collect();
    members.sort_by(|a, b| {
        a.k_index
            .cmp(&b.k_index)
            .then_with(|| a.hyperedge_id.cmp(&b.hyperedge_id))
    });
    members
}

/// The cluster text for `members`, capped at `max_tokens`.
pub fn cluster_text(members: &[&Hyperedge], max_tokens: usize) -> String {
    let (text, _) = segments(members);
    truncate_tokens(&text, max_tokens).0.to_string()
}

/// Segments of `cluster.ch_text` with their provenance, clipped to the stored
/// (possibly truncated) text. `hyperedges` must contain the members.
pub fn cluster_layout(cluster: &SemanticCluster, hyperedges: &[Hyperedge]) -> Vec<TextSegment> {
    let members = sorted_members(&cluster.member_hyperedges, hyperedges);
    let (_, segs) = segments(&members);
    clip_segments(segs, cluster.ch_text.len())
}

/// Keeps the parts of `segs` that fall within the first `len` bytes.
pub fn clip_segments(segs: Vec<TextSegment>, len: usize) -> Vec<TextSegment> {
    segs.into_iter()
        .filter(|s| s.range.start < len)
        .map(|mut s| {
            if s.range.end > len {
                let cut = s.range.end - len;
                s.range.end = len;
                s.span.end = s.span.end.saturating_sub(cut).max(s.span.start);
            }
            s
        })
        .collect()
}

/// One cluster per non-noise label. Every label must have at least
/// `min_cluster_size` members.
pub fn build_clusters(
    doc_id: &str,
    hyperedges: &[Hyperedge],
    labels: &[Option<usize>],
    config: &SscConfig,
) -> Result<Vec<SemanticCluster>, SscError> {
    if labels.len() != hyperedges.len() {
        return Err(SscError::LengthMismatch {
            labels: labels.len(),
            points: hyperedges.len(),
        });
    }
    let mut groups: BTreeMap<usize, Vec<&Hyperedge>> = BTreeMap::new();
    for (h, l) in hyperedges.iter().zip(labels) {
        if let Some(l) = l {
            groups.entry(*l).or_default().push(h);
        }
    }
    for (&label, members) in &groups {
        if members.len() < config.min_cluster_size {
            return Err(SscError::InconsistentLabels {
                label,
                size: members.len(),
                min: config.min_cluster_size,
            });
        }
    }
    Ok(groups
        .into_values()
        .enumerate()
        .map(|(n, mut members)| {
            members.sort_by(|a, b| {
                a.k_index
                    .cmp(&b.k_index)
                    .then_with(|| a.hyperedge_id.cmp(&b.hyperedge_id))
            });
            SemanticCluster {
                ch_id: Id::new(doc_id, IdKind::Cluster, n as u32 + 1),
                doc_id: doc_id.to_string(),
                member_hyperedges: members.iter().map(|h| h.hyperedge_id.clone()).collect(),
                ch_text: cluster_text(&members, config.max_text_tokens),
            }
        })
        .collect())
}

/// Distance matrix, HDBSCAN and cluster assembly for one document.
pub fn cluster_document(
    doc_id: &str,
    hyperedges: &[Hyperedge],
    config: &SscConfig,
) -> Result<Vec<SemanticCluster>, SscError> {
    config.validate()?;
    if hyperedges.len() < config.min_cluster_size.max(2) {
        return Ok(Vec::new());
    }
    let m = distance_matrix(hyperedges, config.alpha, config.normalize_position)?;
    let labels = hdbscan(&m, config.min_cluster_size, config.min_samples);
    build_clusters(doc_id, hyperedges, &labels, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::Embedding;

    fn h(k: usize, text: &str, start: usize, v: Vec<f32>) -> Hyperedge {
        Hyperedge {
            hyperedge_id: Id::new("d", IdKind::Hyperedge, k as u32),
            h_text: text.into(),
            h_ref: text.into(),
            incident_entities: Vec::new(),
            k_index: k,
            chunk_index: 1,
            ref_span: Span::new(start, start + text.len()),
            embedding: Embedding(v),
        }
    }

    #[test]
    fn inconsistent_labels_rejected() {
        let hs: Vec<Hyperedge> = (1..=4).map(|k| h(k, "x", 0, vec![1.0])).collect();
        let err = build_clusters("d", &hs, &[Some(0), Some(0), Some(1), None], &SscConfig::default()).unwrap_err();
        assert!(matches!(err, SscError::InconsistentLabels { label: 0, size: 2, .. }));
        assert!(build_clusters("d", &hs, &[None; 4], &SscConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn text_is_ordered_and_deduplicated() {
        let hs = vec![
            h(3, "C said.", 20, vec![1.0]),
            h(1, "A said.", 0, vec![1.0]),
            h(2, "A said.", 0, vec![1.0]),
            h(4, "D said.", 30, vec![1.0]),
        ];
        let config = SscConfig::default();
        let cs = build_clusters("d", &hs, &[Some(0); 4], &config).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].ch_text, "A said.\nC said.\nD said.");
        assert_eq!(cs[0].ch_id.to_string(), "d:c1");
        let ks: Vec<u32> = cs[0].member_hyperedges.iter().map(|i| i.counter()).collect();
        assert_eq!(ks, [1, 2, 3, 4]);
        let layout = cluster_layout(&cs[0], &hs);
        assert_eq!(layout.len(), 3);
        assert_eq!(layout[0].hyperedges.len(), 2);
        assert_eq!(&cs[0].ch_text[layout[1].range.clone()], "C said.");
    }

    #[test]
    fn text_cap_truncates_tail() {
        let hs = vec![
            h(1, "one two three", 0, vec![1.0]),
            h(2, "four five six", 14, vec![1.0]),
            h(3, "seven", 28, vec![1.0]),
        ];
        let config = SscConfig {
            max_text_tokens: 4,
            ..SscConfig::default()
        };
        let cs = build_clusters("d", &hs, &[Some(0); 3], &config).unwrap();
        assert_eq!(cs[0].ch_text, "one two three\nfour");
        let layout = cluster_layout(&cs[0], &hs);
        assert_eq!(layout.len(), 2);
        assert_eq!(layout[1].span, Span::new(14, 18));
    }

    #[test]
    fn identical_embeddings_split_by_position() {
        let mut hs: Vec<Hyperedge> = (1..=4).map(|k| h(k, "x", 0, vec![1.0, 0.0])).collect();
        hs.extend((40..=43).map(|k| h(k, "y", 0, vec![1.0, 0.0])));
        let cs = cluster_document("d", &hs, &SscConfig::default()).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].member_hyperedges.len(), 4);
    }
}
