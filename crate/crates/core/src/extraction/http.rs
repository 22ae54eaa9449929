//! OpenAI-compatible chat completions client.

use serde::{Deserialize, Serialize};

use super::backend::{BackendConfig, BackendError, CompletionBackend};
use crate::signals::PromptText;

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    stream: bool,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Sends each prompt as a single user message.
pub struct OpenAiBackend {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl OpenAiBackend {
    /// Reads the bearer token from `cfg.api_key_env`, if set.
    pub fn new(cfg: &BackendConfig) -> Self {
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, api_key }
    }
}

fn map_err(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        ureq::Error::Json(j) => BackendError::Protocol(j.to_string()),
        other => BackendError::Transport(other.to_string()),
    }
}

impl CompletionBackend for OpenAiBackend {
    fn complete(&self, prompt: &PromptText, cfg: &BackendConfig) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &cfg.model,
            messages: [ChatMessage {
                role: "user",
                content: &prompt.text,
            }],
            temperature: cfg.temperature,
            max_tokens: cfg.max_new_tokens,
            stream: false,
        };
        let mut req = self.agent.post(&cfg.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(map_err)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Status {
                code: status,
                body: text,
            });
        }
        let parsed: ChatResponse = resp.body_mut().read_json().map_err(map_err)?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                BackendError::Protocol("response has no choices[0].message.content".into())
            })
    }

    fn name(&self) -> &str {
        "openai-chat"
    }
}
