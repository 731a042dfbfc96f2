//! Offline construction: partition, extract, build the hypergraph and
//! graph, cluster. Documents are independent and build in parallel.

use crate::config::{BuildFlags, PipelineConfig};
use crate::corpus::{chunk_document, CorpusError, Document, WhitespaceTokenizer};
use crate::extraction::{ExtractionError, Extractor, PrefixCache};
use crate::kbuild::{build_graph, build_hypergraph, summarize_entities, BuildTrace, DocKnowledge, KbuildError};
use crate::prompts::Prompts;
use crate::providers::Provider;
use crate::ssc::{cluster_document, SscError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Kbuild(#[from] KbuildError),
    #[error(transparent)]
    Ssc(#[from] SscError),
}

impl PipelineError {
    /// True when the failure came from the model provider.
    pub fn is_provider(&self) -> bool {
        matches!(
            self,
            PipelineError::Extraction(ExtractionError::Provider(_)) | PipelineError::Kbuild(KbuildError::Provider(_))
        )
    }
}

/// Everything a document build needs besides the document.
pub struct Builder<'a> {
    pub config: &'a PipelineConfig,
    pub flags: BuildFlags,
    pub provider: &'a dyn Provider,
    pub prompts: &'a Prompts,
    pub cache: Option<&'a PrefixCache>,
}

impl Builder<'_> {
    pub fn build_document(&self, doc: &Document) -> Result<DocKnowledge, PipelineError> {
        self.build_document_traced(doc).map(|(k, _)| k)
    }

    /// Like [`Builder::build_document`], also returning the step trace.
    pub fn build_document_traced(&self, doc: &Document) -> Result<(DocKnowledge, BuildTrace), PipelineError> {
        let chunks = chunk_document(doc, &self.config.partition, &WhitespaceTokenizer)?;
        let mut extractor = Extractor::new(self.provider, self.prompts, self.config.effective_window(self.flags));
        if let Some(cache) = self.cache {
            extractor = extractor.with_cache(cache);
        }
        let items = extractor.extract_document(&chunks)?;
        let mut trace = BuildTrace::default();
        let mut hg = build_hypergraph(&doc.doc_id, &items, self.provider, &mut trace)?;
        summarize_entities(&mut hg, &self.config.kbuild, self.provider, self.prompts, &mut trace);
        let edges = build_graph(
            &doc.doc_id,
            &hg,
            &self.config.kbuild,
            self.provider,
            self.prompts,
            &mut trace,
        )?;
        let clusters = if self.flags.no_ssc {
            Vec::new()
        } else {
            cluster_document(&doc.doc_id, &hg.hyperedges, &self.config.ssc)?
        };
        log::info!(
            "{}: {} chunks, {} entities, {} hyperedges, {} edges, {} clusters",
            doc.doc_id,
            chunks.len(),
            hg.entities.len(),
            hg.hyperedges.len(),
            edges.len(),
            clusters.len()
        );
        Ok((
            DocKnowledge {
                doc_id: doc.doc_id.clone(),
                chunks,
                entities: hg.entities,
                hyperedges: hg.hyperedges,
                edges,
                clusters,
            },
            trace,
        ))
    }

    /// Builds every document, in input order, using the configured worker
    /// count (0 means all cores).
    pub fn build_corpus(&self, docs: &[Document]) -> Vec<Result<DocKnowledge, PipelineError>> {
        let run = || crate::exec::map(docs, |d| self.build_document(d));
        match self.config.workers {
            0 => run(),
            n => crate::exec::with_workers(n, run),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kbuild::TraceEvent;
    use crate::providers::MockProvider;

    fn small_config() -> PipelineConfig {
        let mut c = PipelineConfig {
            partition: crate::corpus::PartitionConfig::new(8, 16).unwrap(),
            ..PipelineConfig::default()
        };
        c.kbuild.tau_e = 1;
        c.ssc.min_cluster_size = 2;
        c
    }

    #[test]
    fn builds_a_small_document() {
        let config = small_config();
        let provider = MockProvider::default();
        let prompts = Prompts::default();
        let b = Builder {
            config: &config,
            flags: BuildFlags::default(),
            provider: &provider,
            prompts: &prompts,
            cache: None,
        };
        let doc = Document::new(
            "acme",
            "Alice founded Acme in 1999. Acme hired Bob.\n\nBob joined Acme in 2001. Alice mentored Bob at Acme.",
            None,
        )
        .unwrap();
        let (k, trace) = b.build_document_traced(&doc).unwrap();
        assert!(k.hyperedges.len() >= 3);
        assert!(k.entities.iter().any(|e| e.v_name == "Alice"));
        assert!(!k.edges.is_empty());
        // summaries come after every hyperedge, edges after every summary
        let pos = |f: fn(&TraceEvent) -> bool| trace.events.iter().position(f);
        let last_h = trace
            .events
            .iter()
            .rposition(|e| matches!(e, TraceEvent::HyperedgeBuilt(_)))
            .unwrap();
        let first_e = pos(|e| matches!(e, TraceEvent::EdgeBuilt(_))).unwrap();
        assert!(last_h < first_e);

        let flagged = Builder {
            flags: BuildFlags {
                no_ssc: true,
                no_sw: false,
            },
            ..b
        };
        assert!(flagged.build_document(&doc).unwrap().clusters.is_empty());
        let both = flagged.build_corpus(&[doc.clone(), doc]);
        assert_eq!(both.len(), 2);
    }
}
