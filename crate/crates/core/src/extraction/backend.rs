use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::{cache_key, CacheEntry, DecodingParams, ResponseCache};
use super::ExtractionError;
use crate::signals::PromptText;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Full URL of an OpenAI-compatible chat completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub timeout_secs: u64,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub max_concurrency: usize,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "platypus2-70b-instruct".into(),
            temperature: 0.0,
            max_new_tokens: 8,
            timeout_secs: 120,
            retries: 3,
            retry_backoff_ms: 500,
            max_concurrency: 4,
            api_key_env: "VERACITY_API_KEY".into(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ExtractionError> {
        let bad = |m: &str| Err(ExtractionError::Config(m.to_string()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.max_concurrency < 1 {
            return bad("max_concurrency must be >= 1");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be >= 1");
        }
        if self.model.trim().is_empty() {
            return bad("model must not be empty");
        }
        Ok(())
    }

    pub fn decoding(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.temperature,
            max_new_tokens: self.max_new_tokens,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendError {
    Timeout,
    Status {
        code: u16,
        body: String,
    },
    Transport(String),
    Protocol(String),
    /// Replay-only backend asked for a completion that is not cached.
    NotCached,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            BackendError::Protocol(_) | BackendError::NotCached => false,
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Timeout => write!(f, "request timed out"),
            BackendError::Status { code, body } => {
                let snippet: String = body.chars().take(200).collect();
                write!(f, "HTTP status {code}: {snippet}")
            }
            BackendError::Transport(m) => write!(f, "transport failure: {m}"),
            BackendError::Protocol(m) => write!(f, "malformed response: {m}"),
            BackendError::NotCached => write!(f, "completion not in cache (replay mode)"),
        }
    }
}

impl std::error::Error for BackendError {}

/// Anything that turns a prompt into completion text.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &PromptText, cfg: &BackendConfig) -> Result<String, BackendError>;

    /// Short label for logs and manifests.
    fn name(&self) -> &str;
}

/// Backend that only serves what is already cached.
#[derive(Debug, Default, Clone, Copy)]
pub struct ReplayBackend;

impl CompletionBackend for ReplayBackend {
    fn complete(&self, _: &PromptText, _: &BackendConfig) -> Result<String, BackendError> {
        Err(BackendError::NotCached)
    }

    fn name(&self) -> &str {
        "replay"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
    /// Backend calls made (0 on a cache hit).
    pub attempts: u32,
}

/// Cache-first completion with bounded retries. A fresh completion is
/// persisted before it is returned.
pub fn complete(
    prompt: &PromptText,
    cfg: &BackendConfig,
    cache: Option<&ResponseCache>,
    backend: &dyn CompletionBackend,
) -> Result<Completion, ExtractionError> {
    let params = cfg.decoding();
    if let Some(cache) = cache {
        let key = cache_key(&cfg.model, &params, &prompt.text);
        if let Some(hit) = cache.get(&key)? {
            return Ok(Completion {
                text: hit.completion,
                cached: true,
                attempts: 0,
            });
        }
    }

    let mut log = Vec::new();
    let max_attempts = cfg.retries + 1;
    for attempt in 1..=max_attempts {
        match backend.complete(prompt, cfg) {
            Ok(text) => {
                if let Some(cache) = cache {
                    cache.put(&CacheEntry::new(&cfg.model, params, &prompt.text, &text))?;
                }
                return Ok(Completion {
                    text,
                    cached: false,
                    attempts: attempt,
                });
            }
            Err(e) => {
                log::debug!("{} attempt {attempt}/{max_attempts}: {e}", backend.name());
                let retry = e.is_retryable();
                log.push(e);
                if !retry {
                    break;
                }
                if attempt < max_attempts && cfg.retry_backoff_ms > 0 {
                    let backoff = cfg
                        .retry_backoff_ms
                        .saturating_mul(1 << (attempt - 1).min(6));
                    std::thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }
    Err(ExtractionError::Backend { attempts: log })
}
