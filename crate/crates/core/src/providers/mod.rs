//! Boundary for every model call: chat completion and text embedding.
//!
//! Two implementations ship: [`HttpProvider`] speaks the common JSON
//! chat/embeddings protocol, and [`MockProvider`] is a deterministic,
//! rule-based stand-in used for offline tests and golden runs.

mod http;
mod mock;
mod usage;

pub use http::{HttpConfig, HttpProvider};
pub use mock::{MockFaults, MockProvider};
pub use usage::{PhaseTotals, UsageRecord, UsageReport, UsageTracker};

use serde::{Deserialize, Serialize};

/// Accounting phase for a call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Construction,
    Generation,
}

/// What a chat request is for. Providers may use it for routing; the mock
/// uses it to pick its rule set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Extraction,
    Summarization,
    EdgeExtraction,
    QueryEntities,
    Generation,
}

impl Task {
    pub fn phase(self) -> Phase {
        match self {
            Task::Extraction | Task::Summarization | Task::EdgeExtraction => Phase::Construction,
            Task::QueryEntities | Task::Generation => Phase::Generation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub task: Task,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(task: Task, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        ChatRequest {
            task,
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            max_output_tokens: 2048,
        }
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, max: u32) -> Self {
        self.max_output_tokens = max;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("prompts must be non-empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A dense embedding vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Cosine similarity, or `None` when either vector has zero norm or the
    /// dimensions differ.
    pub fn cosine(&self, other: &Embedding) -> Option<f64> {
        if self.0.len() != other.0.len() {
            return None;
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(&a, &b)| a as f64 * b as f64).sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            None
        } else {
            Some(dot / denom)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("response exceeded max_output_tokens ({limit})")]
    ResponseTooLong { limit: u32 },
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

/// Chat and embedding endpoint. Implementations must be safe to call from
/// many threads and must record every call in their [`UsageTracker`].
pub trait Provider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError>;

    /// Embeds `texts`, returning one vector per input with a common dimension.
    fn embed(&self, texts: &[String], phase: Phase) -> Result<Vec<Embedding>, ProviderError>;

    fn usage(&self) -> &UsageTracker;

    fn name(&self) -> &str;
}

/// Checks that a batch of embeddings is non-degenerate and uniform.
pub(crate) fn check_embeddings(expected_len: usize, vectors: &[Embedding]) -> Result<(), ProviderError> {
    if vectors.len() != expected_len {
        return Err(ProviderError::Malformed(format!(
            "expected {expected_len} embeddings, got {}",
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        let dim = first.dimension();
        for v in vectors {
            if v.dimension() != dim {
                return Err(ProviderError::DimensionMismatch {
                    expected: dim,
                    found: v.dimension(),
                });
            }
            if !v.is_finite() {
                return Err(ProviderError::Malformed("non-finite embedding value".into()));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new(Task::Generation, "sys", "").validate().is_err());
        assert!(ChatRequest::new(Task::Generation, "sys", "q")
            .with_temperature(-1.0)
            .validate()
            .is_err());
        assert!(ChatRequest::new(Task::Generation, "sys", "q").validate().is_ok());
    }

    #[test]
    fn cosine_basics() {
        let a = Embedding(vec![1.0, 0.0]);
        let b = Embedding(vec![0.0, 2.0]);
        assert_eq!(a.cosine(&a), Some(1.0));
        assert_eq!(a.cosine(&b), Some(0.0));
        assert_eq!(a.cosine(&Embedding(vec![0.0, 0.0])), None);
        assert_eq!(a.cosine(&Embedding(vec![1.0])), None);
    }

    #[test]
    fn embedding_batch_checks() {
        let good = vec![Embedding(vec![1.0, 0.0]), Embedding(vec![0.0, 1.0])];
        assert!(check_embeddings(2, &good).is_ok());
        let ragged = vec![Embedding(vec![1.0, 0.0]), Embedding(vec![0.0])];
        assert!(matches!(
            check_embeddings(2, &ragged),
            Err(ProviderError::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(check_embeddings(3, &good).is_err());
    }
}
