//! JSON extraction and the bounded re-ask loop for structured stage output.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatBackend, ChatMessage, CompletionRequest, LlmError};
use crate::{design, requirements};

/// Registered document schemas a stage may demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaId {
    /// Requirements document as emitted by extraction: elements may be blank.
    RequirementsDoc,
    AlgorithmDesign,
}

impl SchemaId {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::RequirementsDoc => "requirements-doc",
            SchemaId::AlgorithmDesign => "algorithm-design",
        }
    }

    pub fn validate(self, value: &Value) -> Vec<String> {
        match self {
            SchemaId::RequirementsDoc => requirements::draft_schema_violations(value),
            SchemaId::AlgorithmDesign => design::schema_violations(value),
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredOutput {
    pub value: Value,
    /// The accepted response text, verbatim.
    pub raw: String,
    pub reask_count: u32,
}

/// Pulls a JSON document out of a model reply. Fenced blocks win; otherwise
/// the first balanced object or array is taken, so leading and trailing prose
/// is tolerated.
pub fn extract_json(text: &str) -> Result<Value, String> {
    for block in fenced_blocks(text) {
        if let Ok(v) = serde_json::from_str::<Value>(block.trim()) {
            return Ok(v);
        }
    }
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        return Ok(v);
    }
    let start = text
        .find(['{', '['])
        .ok_or_else(|| "response contains no JSON document".to_string())?;
    let end = balanced_end(&text[start..])
        .ok_or_else(|| "response contains an unterminated JSON document".to_string())?;
    serde_json::from_str(&text[start..start + end]).map_err(|e| format!("invalid JSON: {e}"))
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string (e.g. `json`) up to the end of the line
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

fn balanced_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' | '[' => depth += 1,
            '}' | ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn corrective_message(schema: SchemaId, violations: &[String]) -> String {
    let mut msg = format!(
        "Your previous reply could not be accepted as a {} document:\n",
        schema.as_str()
    );
    for v in violations {
        msg.push_str("- ");
        msg.push_str(v);
        msg.push('\n');
    }
    msg.push_str("Reply again with only the corrected JSON document.");
    msg
}

/// Calls the backend until the reply parses and satisfies `schema`, re-asking
/// at most `max_reasks` times with the violations appended as a user turn.
pub fn complete_json(
    backend: &dyn ChatBackend,
    request: &CompletionRequest,
    schema: SchemaId,
    max_reasks: u32,
) -> Result<StructuredOutput, LlmError> {
    let mut req = request.clone();
    let mut attempts = Vec::new();
    for attempt in 0..=max_reasks {
        let raw = backend.complete(&req)?;
        let violations = match extract_json(&raw) {
            Ok(value) => {
                let v = schema.validate(&value);
                if v.is_empty() {
                    return Ok(StructuredOutput { value, raw, reask_count: attempt });
                }
                v
            }
            Err(e) => vec![e],
        };
        if attempt < max_reasks {
            let echoed = if raw.trim().is_empty() { "(empty reply)".to_string() } else { raw };
            req.messages.push(ChatMessage::assistant(echoed));
            req.messages.push(ChatMessage::user(corrective_message(schema, &violations)));
        }
        attempts.push(violations);
    }
    Err(LlmError::StructuredOutputFailure { schema, attempts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptedBackend, ScriptedRule, StageSettings, StageTag};
    use serde_json::json;

    const DESIGN: &str = r#"{"Document_Type":"Algorithm Design Document","Algorithm":[{"Module_Sequence":1,"Module_Name":"Load","Module_Description":"d","Input":"i","Output":"o","Implementation_Details":"x"}]}"#;

    fn request() -> CompletionRequest {
        CompletionRequest::new(
            StageTag::AlgorithmDesign,
            StageSettings::default_for(StageTag::AlgorithmDesign),
            vec![ChatMessage::system("design"), ChatMessage::user("requirements")],
        )
    }

    #[test]
    fn extracts_fenced_and_prose_wrapped_json() {
        let fenced = "Here you go:\n```json\n{\"a\": 1}\n```\nThanks";
        assert_eq!(extract_json(fenced).unwrap(), json!({"a": 1}));
        let prose = "Sure! {\"a\": {\"b\": \"}\"}} hope that helps";
        assert_eq!(extract_json(prose).unwrap(), json!({"a": {"b": "}"}}));
        assert!(extract_json("no json here").is_err());
        assert!(extract_json("{\"a\": ").is_err());
    }

    #[test]
    fn reask_after_malformed_reply() {
        let backend = ScriptedBackend::new(vec![
            ScriptedRule::new(StageTag::AlgorithmDesign, "", "I think the design is...").once(),
            ScriptedRule::new(StageTag::AlgorithmDesign, "", DESIGN).once(),
        ]);
        let out = complete_json(&backend, &request(), SchemaId::AlgorithmDesign, 2).unwrap();
        assert_eq!(out.reask_count, 1);
        assert_eq!(out.value["Algorithm"][0]["Module_Name"], "Load");
    }

    #[test]
    fn valid_first_reply_needs_no_reask() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(StageTag::AlgorithmDesign, "", DESIGN)]);
        let out = complete_json(&backend, &request(), SchemaId::AlgorithmDesign, 2).unwrap();
        assert_eq!(out.reask_count, 0);
    }

    #[test]
    fn gives_up_after_cap() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(StageTag::AlgorithmDesign, "", "nope")]);
        match complete_json(&backend, &request(), SchemaId::AlgorithmDesign, 2) {
            Err(LlmError::StructuredOutputFailure { attempts, .. }) => assert_eq!(attempts.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrective_turn_names_violations() {
        let missing = r#"{"Document_Type":"Algorithm Design Document","Algorithm":[{"Module_Sequence":1}]}"#;
        let backend = crate::llm::RecordingBackend::new(ScriptedBackend::new(vec![
            ScriptedRule::new(StageTag::AlgorithmDesign, "", missing).once(),
            ScriptedRule::new(StageTag::AlgorithmDesign, "", DESIGN).once(),
        ]));
        complete_json(&backend, &request(), SchemaId::AlgorithmDesign, 2).unwrap();
        let second = &backend.exchanges()[1].request;
        assert!(second.last_user_message().unwrap().contains("Module_Name"));
    }
}
