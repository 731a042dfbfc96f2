//! Pipeline configuration. Defaults are the reference settings:
//! `ct_min=500, ct_max=600, g_max=3, g_overlap=2, tau_s=9, tau_e=3,
//! alpha=0.1, n_hyperedges=7, n_edges=3, tau_hyperedge=0.9, tau_edge=0.9`, hybrid mode.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::PartitionConfig;
use crate::extraction::WindowConfig;
use crate::kbuild::KbuildConfig;
use crate::prompts::Prompts;
use crate::providers::{HttpConfig, HttpProvider, MockProvider, Provider, ProviderError};
use crate::retrieval::RetrievalConfig;
use crate::ssc::SscConfig;
use crate::text::sha256_hex;

/// Environment variable that overrides the configured API key.
pub const API_KEY_ENV: &str = "STRUCTRAG_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    Mock {
        #[serde(default = "default_mock_dimension")]
        dimension: usize,
        #[serde(default)]
        seed: u64,
    },
    Http(HttpConfig),
}

fn default_mock_dimension() -> usize {
    256
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Mock {
            dimension: default_mock_dimension(),
            seed: 0,
        }
    }
}

impl ProviderConfig {
    /// Instantiates the provider. For HTTP, `STRUCTRAG_API_KEY` takes
    /// precedence over a key in the file.
    pub fn build(&self) -> Result<Box<dyn Provider>, ProviderError> {
        Ok(match self {
            ProviderConfig::Mock { dimension, seed } => Box::new(MockProvider::new(*dimension, *seed)),
            ProviderConfig::Http(http) => {
                let mut http = http.clone();
                if let Ok(key) = std::env::var(API_KEY_ENV) {
                    if !key.is_empty() {
                        http.api_key = Some(key);
                    }
                }
                Box::new(HttpProvider::new(http)?)
            }
        })
    }

    /// Settings that determine embeddings and extraction output.
    fn fingerprint(&self) -> serde_json::Value {
        match self {
            ProviderConfig::Mock { dimension, seed } => {
                serde_json::json!({"kind": "mock", "dimension": dimension, "seed": seed})
            }
            ProviderConfig::Http(h) => serde_json::json!({
                "kind": "http",
                "endpoint": h.endpoint,
                "chat_model": h.chat_model,
                "embedding_model": h.embedding_model,
            }),
        }
    }
}

/// Build-time ablations. Both are recorded in the knowledge-base manifest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildFlags {
    /// Skip clustering.
    pub no_ssc: bool,
    /// Extract every chunk without a prefix window.
    pub no_sw: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub partition: PartitionConfig,
    pub window: WindowConfig,
    pub kbuild: KbuildConfig,
    pub ssc: SscConfig,
    pub retrieval: RetrievalConfig,
    pub provider: ProviderConfig,
    /// Sampling temperature for answer generation. Construction calls use 0.
    pub generation_temperature: f32,
    /// Directory of prompt template overrides.
    pub prompts_dir: Option<PathBuf>,
    /// Worker threads for document-level parallelism (0 = all cores).
    pub workers: usize,
    /// Entries in the extraction prefix cache.
    pub cache_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            partition: PartitionConfig::default(),
            window: WindowConfig::default(),
            kbuild: KbuildConfig::default(),
            ssc: SscConfig::default(),
            retrieval: RetrievalConfig::default(),
            provider: ProviderConfig::default(),
            generation_temperature: 0.0,
            prompts_dir: None,
            workers: 0,
            cache_capacity: 1024,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("reading prompt overrides from {path}: {source}")]
    Prompts {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.partition.validate().map_err(|e| invalid(&e))?;
        self.window.validate().map_err(|e| invalid(&e))?;
        self.ssc.validate().map_err(|e| invalid(&e))?;
        self.retrieval.validate().map_err(|e| invalid(&e))?;
        if self.generation_temperature.is_nan() || self.generation_temperature < 0.0 {
            return Err(ConfigError::Invalid("generation_temperature must be >= 0".into()));
        }
        if let ProviderConfig::Mock { dimension: 0, .. } = self.provider {
            return Err(ConfigError::Invalid("mock embedding dimension must be > 0".into()));
        }
        Ok(())
    }

    pub fn prompts(&self) -> Result<Prompts, ConfigError> {
        match &self.prompts_dir {
            None => Ok(Prompts::default()),
            Some(dir) => Prompts::with_overrides(dir).map_err(|(path, source)| ConfigError::Prompts { path, source }),
        }
    }

    /// Window actually used for extraction under `flags`.
    pub fn effective_window(&self, flags: BuildFlags) -> WindowConfig {
        if flags.no_sw {
            WindowConfig::NO_PREFIX
        } else {
            self.window
        }
    }

    /// Hash of everything that affects the built knowledge base: build
    /// settings, provider identity, build flags and prompt templates.
    /// Retrieval settings are excluded.
    pub fn build_hash(&self, flags: BuildFlags, prompts: &Prompts) -> String {
        let snapshot = serde_json::json!({
            "partition": self.partition,
            "window": self.effective_window(flags),
            "kbuild": self.kbuild,
            "ssc": self.ssc,
            "provider": self.provider.fingerprint(),
            "flags": flags,
            "prompts": [
                prompts.extraction.source(),
                prompts.extraction_repair.source(),
                prompts.summarization.source(),
                prompts.edge_extraction.source(),
            ],
        });
        sha256_hex(snapshot.to_string().as_bytes())
    }

    /// Serializable snapshot for manifests and reports (no secrets).
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RetrievalMode;

    #[test]
    fn defaults_match_reference_settings() {
        let c = PipelineConfig::default();
        assert_eq!((c.partition.ct_min, c.partition.ct_max), (500, 600));
        assert_eq!((c.window.g_max, c.window.g_overlap), (3, 2));
        assert_eq!((c.kbuild.tau_s, c.kbuild.tau_e), (9, 3));
        assert_eq!(c.ssc.alpha, 0.1);
        assert_eq!((c.retrieval.n_hyperedges, c.retrieval.n_edges), (7, 3));
        assert_eq!((c.retrieval.tau_hyperedge, c.retrieval.tau_edge), (0.9, 0.9));
        assert_eq!(c.retrieval.mode, RetrievalMode::Hybrid);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_window_rejected() {
        let mut c = PipelineConfig::default();
        c.window.g_overlap = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_build_settings_only() {
        let p = Prompts::default();
        let base = PipelineConfig::default();
        let h = base.build_hash(BuildFlags::default(), &p);
        let mut retr = base.clone();
        retr.retrieval.n_hyperedges = 1;
        assert_eq!(retr.build_hash(BuildFlags::default(), &p), h);
        let mut build = base.clone();
        build.kbuild.tau_e = 1;
        assert_ne!(build.build_hash(BuildFlags::default(), &p), h);
        let flagged = BuildFlags {
            no_sw: true,
            ..Default::default()
        };
        assert_ne!(base.build_hash(flagged, &p), h);
    }

    #[test]
    fn api_key_never_serialized() {
        let c = PipelineConfig {
            provider: ProviderConfig::Http(HttpConfig {
                api_key: Some("secret-key".into()),
                ..HttpConfig::default()
            }),
            ..PipelineConfig::default()
        };
        assert!(!c.snapshot().to_string().contains("secret-key"));
    }
}
