//! Stage 4: the human-feedback debugging loop.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::implementation::{strip_code_fences, CodeArtifact, PromptContext, Provenance};
use crate::llm::{ChatBackend, ChatMessage, CompletionRequest, LlmError, StageSettings, StageTag};
use crate::pool::{ArtifactKind, InfoPool, Payload, PoolError};
use crate::templates;

pub const DEFAULT_MAX_ITERATIONS: u32 = 3;

/// One round of user feedback: can the code run, and is its output right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugFeedback {
    pub executable: bool,
    #[serde(default)]
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_output: Option<String>,
}

impl DebugFeedback {
    pub fn success() -> Self {
        Self { executable: true, correct: true, error_text: None, observed_output: None }
    }

    pub fn error(text: impl Into<String>) -> Self {
        Self { executable: false, correct: false, error_text: Some(text.into()), observed_output: None }
    }

    pub fn wrong_output(observed: impl Into<String>) -> Self {
        Self { executable: true, correct: false, error_text: None, observed_output: Some(observed.into()) }
    }

    pub fn is_success(&self) -> bool {
        self.executable && self.correct
    }

    pub fn validate(&self) -> Result<(), DebugError> {
        let blank = |s: &Option<String>| s.as_deref().is_none_or(|t| t.trim().is_empty());
        if !self.executable && blank(&self.error_text) {
            return Err(DebugError::InvalidFeedback("non-executable feedback needs error_text".into()));
        }
        if self.executable && !self.correct && blank(&self.observed_output) {
            return Err(DebugError::InvalidFeedback("incorrect-output feedback needs observed_output".into()));
        }
        Ok(())
    }

    /// "Y/Y", "Y/N" or "N/-".
    pub fn shape(&self) -> &'static str {
        match (self.executable, self.correct) {
            (true, true) => "Y/Y",
            (true, false) => "Y/N",
            (false, _) => "N/-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebugState {
    AwaitingFeedback,
    Repairing,
    Annotating,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebugSession {
    pub iteration: u32,
    pub max_iterations: u32,
    pub state: DebugState,
    pub exhausted: bool,
}

impl Default for DebugSession {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_ITERATIONS)
    }
}

impl DebugSession {
    pub fn new(max_iterations: u32) -> Self {
        Self { iteration: 0, max_iterations, state: DebugState::AwaitingFeedback, exhausted: false }
    }

    pub fn expect(&self, state: DebugState) -> Result<(), DebugError> {
        if self.state == state {
            Ok(())
        } else {
            Err(DebugError::WrongState { expected: state, found: self.state })
        }
    }
}

#[derive(Debug, Error)]
pub enum DebugError {
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("debug session is {found:?}, expected {expected:?}")]
    WrongState { expected: DebugState, found: DebugState },
    #[error("model returned no code")]
    EmptyCode,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// Pure transition on feedback. Never calls a backend.
pub fn next_transition(session: DebugSession, fb: &DebugFeedback) -> Result<DebugSession, DebugError> {
    session.expect(DebugState::AwaitingFeedback)?;
    fb.validate()?;
    let mut next = session;
    if fb.is_success() {
        next.state = DebugState::Annotating;
    } else if session.iteration < session.max_iterations {
        next.state = DebugState::Repairing;
        next.iteration += 1;
    } else {
        next.state = DebugState::Annotating;
        next.exhausted = true;
    }
    Ok(next)
}

/// One line of the debug transcript kept in the pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub evaluated_revision: u32,
    pub feedback: DebugFeedback,
    pub next_state: DebugState,
    pub iteration: u32,
    pub exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repaired_revision: Option<u32>,
}

pub fn transcript_entries(pool: &InfoPool) -> Vec<TranscriptEntry> {
    pool.get(ArtifactKind::DebugTranscript)
        .and_then(|e| match &e.payload {
            Payload::Document(v) => v.get("entries").cloned(),
            Payload::Text(_) => None,
        })
        .and_then(|v| serde_json::from_value(v).ok())
        .unwrap_or_default()
}

pub fn append_transcript(pool: &mut InfoPool, entry: &TranscriptEntry) -> Result<(), PoolError> {
    let mut entries = transcript_entries(pool);
    entries.push(entry.clone());
    let doc = json!({ "entries": entries });
    pool.put(ArtifactKind::DebugTranscript, Payload::Document(doc))?;
    Ok(())
}

/// Marks the loop as skipped (feedback mechanism disabled).
pub fn record_skipped(pool: &mut InfoPool) -> Result<(), PoolError> {
    let doc: Value = json!({ "entries": [], "skipped": true });
    pool.put(ArtifactKind::DebugTranscript, Payload::Document(doc))?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct RepairSettings {
    pub stage: StageSettings,
}

impl Default for RepairSettings {
    fn default() -> Self {
        Self { stage: StageSettings::default_for(StageTag::CodeDebugging) }
    }
}

pub fn feedback_text(fb: &DebugFeedback) -> String {
    if !fb.executable {
        format!(
            "Feedback: the program is not executable.\nConsole error:\n{}",
            fb.error_text.as_deref().unwrap_or_default()
        )
    } else if !fb.correct {
        format!(
            "Feedback: the program runs but the result is wrong.\nObserved output:\n{}",
            fb.observed_output.as_deref().unwrap_or_default()
        )
    } else {
        "Feedback: the program runs and the result is correct.".to_string()
    }
}

pub fn repair_request(
    code: &CodeArtifact,
    fb: &DebugFeedback,
    ctx: &PromptContext,
    settings: &RepairSettings,
) -> CompletionRequest {
    let user = if ctx.passthrough.is_some() {
        format!("{}\n\n{}", code.source, feedback_text(fb))
    } else {
        format!(
            "User Requirements Document (shared information pool):\n{}\n\nAlgorithm Design Document (shared information pool):\n{}\n\nCurrent code (revision {}):\n{}\n\n{}",
            ctx.requirements.to_json_pretty(),
            ctx.design.to_json_pretty(),
            code.revision,
            code.source,
            feedback_text(fb)
        )
    };
    CompletionRequest::new(
        StageTag::CodeDebugging,
        settings.stage,
        vec![ChatMessage::system(templates::CODE_DEBUGGING), ChatMessage::user(user)],
    )
}

/// Asks for a corrected program, stores it as the next code draft and logs
/// the round. Leaves the session waiting for feedback on the new revision.
pub fn repair(
    session: &mut DebugSession,
    code: &CodeArtifact,
    fb: &DebugFeedback,
    ctx: &PromptContext,
    backend: &dyn ChatBackend,
    pool: &mut InfoPool,
    settings: &RepairSettings,
) -> Result<CodeArtifact, DebugError> {
    session.expect(DebugState::Repairing)?;
    let reply = backend.complete(&repair_request(code, fb, ctx, settings))?;
    let source = strip_code_fences(&reply);
    if source.trim().is_empty() {
        return Err(DebugError::EmptyCode);
    }
    let entry = pool.put(ArtifactKind::CodeDraft, Payload::Text(source.clone()))?;
    let revision = entry.revision;
    append_transcript(
        pool,
        &TranscriptEntry {
            evaluated_revision: code.revision,
            feedback: fb.clone(),
            next_state: DebugState::Repairing,
            iteration: session.iteration,
            exhausted: false,
            repaired_revision: Some(revision),
        },
    )?;
    session.state = DebugState::AwaitingFeedback;
    Ok(CodeArtifact {
        language: code.language.clone(),
        platform: code.platform.clone(),
        source,
        revision,
        provenance: Provenance::Repaired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_invariants() {
        assert!(DebugFeedback::success().validate().is_ok());
        assert!(DebugFeedback::error("boom").validate().is_ok());
        assert!(DebugFeedback::wrong_output("x").validate().is_ok());
        let bad = DebugFeedback { executable: false, correct: true, error_text: None, observed_output: None };
        assert!(matches!(bad.validate(), Err(DebugError::InvalidFeedback(_))));
        let bad = DebugFeedback { executable: true, correct: false, error_text: None, observed_output: Some("  ".into()) };
        assert!(bad.validate().is_err());
        // correct is ignored when not executable
        let ok = DebugFeedback { executable: false, correct: true, error_text: Some("e".into()), observed_output: None };
        assert!(ok.validate().is_ok());
        assert!(!ok.is_success());
    }

    #[test]
    fn transitions() {
        let s = DebugSession::new(3);
        let n = next_transition(s, &DebugFeedback::success()).unwrap();
        assert_eq!((n.state, n.exhausted, n.iteration), (DebugState::Annotating, false, 0));

        let n = next_transition(s, &DebugFeedback::error("ee.ImageCollection is not defined")).unwrap();
        assert_eq!((n.state, n.iteration), (DebugState::Repairing, 1));

        let s3 = DebugSession { iteration: 3, ..s };
        let n = next_transition(s3, &DebugFeedback::wrong_output("wrong area")).unwrap();
        assert_eq!((n.state, n.exhausted, n.iteration), (DebugState::Annotating, true, 3));

        let rep = DebugSession { state: DebugState::Repairing, ..s };
        assert!(matches!(
            next_transition(rep, &DebugFeedback::success()),
            Err(DebugError::WrongState { .. })
        ));
    }

    #[test]
    fn feedback_serde_defaults() {
        let fb: DebugFeedback = serde_json::from_str(r#"{"executable":false,"error_text":"x"}"#).unwrap();
        assert_eq!(fb, DebugFeedback::error("x"));
    }
}
