//! Chat-completion abstraction shared by every pipeline stage.
//!
//! Two backends implement [`ChatBackend`]: [`HttpBackend`] talks to any
//! OpenAI-compatible `/chat/completions` endpoint, [`ScriptedBackend`] replays
//! declared responses and is what tests and desk-scale evaluation run on.

mod http;
mod scripted;
mod structured;

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{ScriptedBackend, ScriptedRule};
pub use structured::{complete_json, extract_json, SchemaId, StructuredOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Which pipeline stage issued a request. Drives scripted matching and logging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    RequirementAnalysis,
    AlgorithmDesign,
    CodeImplementation,
    CodeDebugging,
    CodeAnnotation,
}

impl StageTag {
    pub const ALL: [StageTag; 5] = [
        StageTag::RequirementAnalysis,
        StageTag::AlgorithmDesign,
        StageTag::CodeImplementation,
        StageTag::CodeDebugging,
        StageTag::CodeAnnotation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::RequirementAnalysis => "requirement_analysis",
            StageTag::AlgorithmDesign => "algorithm_design",
            StageTag::CodeImplementation => "code_implementation",
            StageTag::CodeDebugging => "code_debugging",
            StageTag::CodeAnnotation => "code_annotation",
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sampling parameters for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    pub temperature: f32,
    pub max_tokens: u32,
}

impl StageSettings {
    /// Structured stages run greedy; code stages get a little sampling room.
    pub fn default_for(stage: StageTag) -> Self {
        match stage {
            StageTag::RequirementAnalysis | StageTag::AlgorithmDesign => {
                StageSettings { temperature: 0.0, max_tokens: 2048 }
            }
            StageTag::CodeImplementation | StageTag::CodeDebugging | StageTag::CodeAnnotation => {
                StageSettings { temperature: 0.2, max_tokens: 4096 }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: u32,
    pub stage_tag: StageTag,
}

impl CompletionRequest {
    pub fn new(stage_tag: StageTag, settings: StageSettings, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
            stage_tag,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| LlmError::InvalidRequest("no messages".into()))?;
        if first.role != Role::System {
            return Err(LlmError::InvalidRequest("first message must have role system".into()));
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.trim().is_empty()) {
            return Err(LlmError::InvalidRequest(format!("message {i} has empty content")));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn system_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("no scripted rule matched {stage} request (last user message: {excerpt:?})")]
    NoScriptedRule { stage: StageTag, excerpt: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("provider returned empty content")]
    ProviderRefusal,
    #[error("structured output for {schema} still invalid after {} attempt(s)", attempts.len())]
    StructuredOutputFailure {
        schema: SchemaId,
        /// One violation list per attempt, in order.
        attempts: Vec<Vec<String>>,
    },
}

impl LlmError {
    /// True for failures that mean the backend could not be reached at all.
    pub fn is_unavailable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::Provider { .. })
    }
}

pub trait ChatBackend: Send + Sync {
    /// Returns the raw text of the model's reply.
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// One request/response pair seen by a [`RecordingBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: CompletionRequest,
    pub response: Result<String, String>,
}

/// Wraps a backend and keeps every exchange, for prompt inspection.
pub struct RecordingBackend<B> {
    inner: B,
    log: Mutex<Vec<Exchange>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("recording log poisoned").clone()
    }

    pub fn requests_for(&self, stage: StageTag) -> Vec<CompletionRequest> {
        self.exchanges()
            .into_iter()
            .filter(|e| e.request.stage_tag == stage)
            .map(|e| e.request)
            .collect()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let out = self.inner.complete(request);
        self.log.lock().expect("recording log poisoned").push(Exchange {
            request: request.clone(),
            response: out.clone().map_err(|e| e.to_string()),
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_must_start_with_system() {
        let req = CompletionRequest::new(
            StageTag::CodeImplementation,
            StageSettings::default_for(StageTag::CodeImplementation),
            vec![ChatMessage::user("hi")],
        );
        assert!(matches!(req.validate(), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn default_temperatures() {
        assert_eq!(StageSettings::default_for(StageTag::RequirementAnalysis).temperature, 0.0);
        assert_eq!(StageSettings::default_for(StageTag::AlgorithmDesign).temperature, 0.0);
        assert_eq!(StageSettings::default_for(StageTag::CodeDebugging).temperature, 0.2);
    }
}
