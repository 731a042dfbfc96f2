//! Multi-granular structured retrieval over document collections.
//!
//! Documents are partitioned into token-bounded chunks, relational knowledge is
//! extracted with a truncated sliding window of preceding chunks, and each
//! document yields three aligned structures: a knowledge hypergraph (n-ary
//! statements), a binary knowledge graph seeded from high-degree anchor
//! entities, and density-based clusters of hyperedges that carry
//! document-grounded context. At query time the per-document structures are
//! merged and searched at entity, edge, hyperedge and cluster granularity.
//!
//! Parallel execution is provided by rayon behind the `parallel` feature
//! (enabled by default); with the feature off every data-parallel loop runs
//! sequentially with identical results.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod exec;
pub mod extraction;
pub mod ids;
pub mod kbuild;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod retrieval;
pub mod ssc;
pub mod store;
pub mod text;

pub use config::PipelineConfig;
pub use corpus::{Chunk, Document, Paragraph, PartitionConfig};
pub use extraction::{KnowledgeItem, WindowConfig};
pub use ids::{Id, IdKind, Span};
pub use kbuild::{DocKnowledge, Edge, EntityNode, Hyperedge};
pub use providers::{ChatRequest, Embedding, MockProvider, Phase, Provider, ProviderError, Task};
pub use retrieval::{EvidenceBundle, RetrievalConfig, RetrievalMode};
pub use ssc::{SemanticCluster, SscConfig};
pub use store::KnowledgeBase;
