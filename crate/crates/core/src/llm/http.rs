use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, CompletionRequest, LlmError};

pub const ENV_API_BASE: &str = "COP_API_BASE";
pub const ENV_API_KEY: &str = "COP_API_KEY";
pub const ENV_MODEL: &str = "COP_MODEL";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub backoff: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "gpt-4".into(),
            timeout: Duration::from_secs(120),
            max_retries: 2,
            backoff: Duration::from_millis(500),
        }
    }
}

impl HttpConfig {
    /// Reads `COP_API_BASE`, `COP_API_KEY` and `COP_MODEL`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(base) = std::env::var(ENV_API_BASE) {
            cfg.base_url = base;
        }
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(ENV_MODEL) {
            cfg.model = model;
        }
        cfg
    }
}

/// OpenAI-compatible chat completions over blocking HTTP.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retryable(LlmError),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| Attempt::Retryable(LlmError::Transport(e.to_string())))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| Attempt::Retryable(LlmError::Transport(e.to_string())))?;
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retryable(LlmError::Provider { status: status.as_u16(), body: text }));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(LlmError::Provider { status: status.as_u16(), body: text }));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(LlmError::Transport(format!("malformed response body: {e}"))))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or("");
        if content.trim().is_empty() {
            return Err(Attempt::Fatal(LlmError::ProviderRefusal));
        }
        Ok(content.to_string())
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        let body = self.body(request);
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(e)) => {
                    if attempt >= self.config.max_retries {
                        return Err(match e {
                            LlmError::Provider { .. } => e,
                            other => LlmError::Transport(other.to_string()),
                        });
                    }
                    tracing::warn!(stage = %request.stage_tag, attempt, error = %e, "retrying completion");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}
