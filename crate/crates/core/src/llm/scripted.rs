use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionRequest, LlmError, StageTag};

/// A declared response. Fires when the request's stage matches and its last
/// user message contains `match_substring` (empty matches anything).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub stage_tag: StageTag,
    #[serde(default)]
    pub match_substring: String,
    pub response: String,
    #[serde(default)]
    pub consume_once: bool,
}

impl ScriptedRule {
    pub fn new(stage_tag: StageTag, match_substring: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            stage_tag,
            match_substring: match_substring.into(),
            response: response.into(),
            consume_once: false,
        }
    }

    pub fn once(mut self) -> Self {
        self.consume_once = true;
        self
    }
}

/// Deterministic replay backend. Rules are tried in declaration order and at
/// most one fires per request; consumed one-shot rules never fire again.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptedRule>,
    consumed: Mutex<Vec<bool>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        let consumed = Mutex::new(vec![false; rules.len()]);
        Self { rules, consumed }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn rules(&self) -> &[ScriptedRule] {
        &self.rules
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let last_user = request.last_user_message().unwrap_or("");
        let mut consumed = self.consumed.lock().expect("scripted backend poisoned");
        for (i, rule) in self.rules.iter().enumerate() {
            if consumed[i] || rule.stage_tag != request.stage_tag {
                continue;
            }
            if !last_user.contains(&rule.match_substring) {
                continue;
            }
            if rule.consume_once {
                consumed[i] = true;
            }
            return Ok(rule.response.clone());
        }
        Err(LlmError::NoScriptedRule {
            stage: request.stage_tag,
            excerpt: last_user.chars().take(120).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ChatMessage, StageSettings};

    fn request(stage: StageTag, user: &str) -> CompletionRequest {
        CompletionRequest::new(
            stage,
            StageSettings::default_for(stage),
            vec![ChatMessage::system("sys"), ChatMessage::user(user)],
        )
    }

    #[test]
    fn replays_matching_rule() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(
            StageTag::RequirementAnalysis,
            "circular area",
            "R",
        )]);
        let out = backend
            .complete(&request(StageTag::RequirementAnalysis, "generate a circular area please"))
            .unwrap();
        assert_eq!(out, "R");
    }

    #[test]
    fn zero_rules_is_an_error() {
        let backend = ScriptedBackend::new(vec![]);
        let err = backend.complete(&request(StageTag::CodeImplementation, "x")).unwrap_err();
        assert!(matches!(err, LlmError::NoScriptedRule { stage: StageTag::CodeImplementation, .. }));
    }

    #[test]
    fn reusable_rules_are_deterministic() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(StageTag::CodeDebugging, "", "fixed")]);
        let req = request(StageTag::CodeDebugging, "err");
        assert_eq!(backend.complete(&req).unwrap(), backend.complete(&req).unwrap());
    }

    #[test]
    fn stage_must_match_and_once_rules_are_consumed() {
        let backend = ScriptedBackend::new(vec![
            ScriptedRule::new(StageTag::AlgorithmDesign, "", "first").once(),
            ScriptedRule::new(StageTag::AlgorithmDesign, "", "second"),
        ]);
        assert!(backend.complete(&request(StageTag::CodeImplementation, "a")).is_err());
        let req = request(StageTag::AlgorithmDesign, "a");
        assert_eq!(backend.complete(&req).unwrap(), "first");
        assert_eq!(backend.complete(&req).unwrap(), "second");
        assert_eq!(backend.complete(&req).unwrap(), "second");
    }

    #[test]
    fn script_file_format() {
        let json = r#"[{"stage_tag":"code_implementation","match_substring":"NDVI","response":"var x = 1;"}]"#;
        let backend = ScriptedBackend::from_json(json).unwrap();
        assert!(!backend.rules()[0].consume_once);
        assert_eq!(backend.complete(&request(StageTag::CodeImplementation, "NDVI map")).unwrap(), "var x = 1;");
    }
}
