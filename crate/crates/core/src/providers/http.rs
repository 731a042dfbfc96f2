//! Client for JSON chat/embeddings endpoints (`/chat/completions`,
//! `/embeddings`).

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_embeddings, ChatRequest, Embedding, Phase, Provider, ProviderError, UsageRecord, UsageTracker};
use crate::corpus::count_tokens;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub chat_model: String,
    pub embedding_model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub embed_batch_size: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: "http://localhost:8000/v1".into(),
            chat_model: "chat-model".into(),
            embedding_model: "embedding-model".into(),
            api_key: None,
            max_concurrency: 4,
            max_retries: 3,
            backoff_ms: 500,
            timeout_secs: 120,
            embed_batch_size: 64,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct HttpProvider {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    slots: Slots,
    usage: UsageTracker,
}

enum Attempt {
    Retry(String),
    Fatal(ProviderError),
}

/// Replaces every occurrence of `secret` in `text`.
pub(crate) fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "***"),
        _ => text.to_string(),
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct TokenUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: Option<usize>,
    embedding: Vec<f32>,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| ProviderError::InvalidRequest(format!("building HTTP client: {e}")))?;
        Ok(HttpProvider {
            slots: Slots::new(config.max_concurrency),
            config,
            client,
            usage: UsageTracker::new(),
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    /// POSTs `body` with retries on transport errors, 429 and 5xx.
    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, ProviderError> {
        let url = self.url(path);
        let key = self.config.api_key.as_deref();
        log::debug!(
            "POST {url} (authorization: {}) {}",
            if key.is_some() { "Bearer ***" } else { "none" },
            redact(&body.to_string(), key)
        );
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let outcome = {
                let _slot = self.slots.acquire();
                self.try_post(&url, body)
            };
            match outcome {
                Ok(value) => {
                    log::debug!("response from {url}: {}", redact(&value.to_string(), key));
                    return Ok(value);
                }
                Err(Attempt::Fatal(err)) => return Err(err),
                Err(Attempt::Retry(message)) => {
                    log::warn!("{url}: attempt {attempt}/{attempts} failed: {}", redact(&message, key));
                    last = message;
                    if attempt < attempts {
                        let backoff = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Err(ProviderError::Unavailable {
            attempts,
            message: redact(&last, key),
        })
    }

    fn try_post(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, Attempt> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ProviderError::Http {
                status: status.as_u16(),
                body: text,
            }));
        }
        serde_json::from_str(&text).map_err(|e| Attempt::Fatal(ProviderError::Malformed(e.to_string())))
    }
}

impl Provider for HttpProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let started = Instant::now();
        let body = json!({
            "model": self.config.chat_model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let value = self.post("chat/completions", &body)?;
        let parsed: ChatResponse =
            serde_json::from_value(value).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no choices in response".into()))?;
        let content = choice.message.content.unwrap_or_default();
        let (prompt_tokens, response_tokens) = match parsed.usage {
            Some(TokenUsage {
                prompt_tokens: Some(p),
                completion_tokens: Some(c),
            }) => (p, c),
            _ => (
                (count_tokens(&request.system_prompt) + count_tokens(&request.user_prompt)) as u64,
                count_tokens(&content) as u64,
            ),
        };
        self.usage.record(UsageRecord {
            phase: request.task.phase(),
            task: Some(request.task),
            prompt_tokens,
            response_tokens,
            wall_time_ms: started.elapsed().as_millis() as u64,
        });
        if choice.finish_reason.as_deref() == Some("length") {
            return Err(ProviderError::ResponseTooLong {
                limit: request.max_output_tokens,
            });
        }
        Ok(content)
    }

    fn embed(&self, texts: &[String], phase: Phase) -> Result<Vec<Embedding>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("no texts to embed".into()));
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.embed_batch_size.max(1)) {
            let started = Instant::now();
            let body = json!({ "model": self.config.embedding_model, "input": batch });
            let value = self.post("embeddings", &body)?;
            let parsed: EmbeddingResponse =
                serde_json::from_value(value).map_err(|e| ProviderError::Malformed(e.to_string()))?;
            let mut data = parsed.data;
            data.sort_by_key(|d| d.index.unwrap_or(usize::MAX));
            let vectors: Vec<Embedding> = data.into_iter().map(|d| Embedding(d.embedding)).collect();
            check_embeddings(batch.len(), &vectors)?;
            if let (Some(prev), Some(first)) = (out.first(), vectors.first()) {
                let (prev, first): (&Embedding, &Embedding) = (prev, first);
                if prev.dimension() != first.dimension() {
                    return Err(ProviderError::DimensionMismatch {
                        expected: prev.dimension(),
                        found: first.dimension(),
                    });
                }
            }
            self.usage.record(UsageRecord {
                phase,
                task: None,
                prompt_tokens: parsed
                    .usage
                    .and_then(|u| u.prompt_tokens)
                    .unwrap_or_else(|| batch.iter().map(|t| count_tokens(t) as u64).sum()),
                response_tokens: 0,
                wall_time_ms: started.elapsed().as_millis() as u64,
            });
            out.extend(vectors);
        }
        Ok(out)
    }

    fn usage(&self) -> &UsageTracker {
        &self.usage
    }

    fn name(&self) -> &str {
        "http"
    }
}
