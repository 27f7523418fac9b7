//! Stage 2: algorithm design. Turns the requirements document into an
//! ordered list of single-purpose modules.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{self, ChatBackend, ChatMessage, CompletionRequest, LlmError, SchemaId, StageSettings, StageTag};
use crate::pool::{ArtifactKind, InfoPool, Payload, PoolError};
use crate::requirements::RequirementsDocument;
use crate::templates;

pub const DOCUMENT_TYPE: &str = "Algorithm Design Document";
pub const DEFAULT_MAX_MODULES: usize = 20;

const TEXT_FIELDS: [&str; 5] = ["Module_Name", "Module_Description", "Input", "Output", "Implementation_Details"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmModule {
    #[serde(rename = "Module_Sequence")]
    pub sequence: u32,
    #[serde(rename = "Module_Name")]
    pub name: String,
    #[serde(rename = "Module_Description")]
    pub description: String,
    #[serde(rename = "Input")]
    pub input: String,
    #[serde(rename = "Output")]
    pub output: String,
    #[serde(rename = "Implementation_Details")]
    pub implementation_details: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmDesignDocument {
    #[serde(rename = "Document_Type")]
    pub document_type: String,
    #[serde(rename = "Algorithm")]
    pub modules: Vec<AlgorithmModule>,
}

impl AlgorithmDesignDocument {
    pub fn new(modules: Vec<AlgorithmModule>) -> Self {
        Self { document_type: DOCUMENT_TYPE.into(), modules }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("design serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("design serializes")
    }

    pub fn module_names(&self) -> impl Iterator<Item = &str> {
        self.modules.iter().map(|m| m.name.as_str())
    }
}

/// Structural schema: field presence and types only. Emptiness, bounds and
/// sequencing are checked by [`validate_design`].
pub fn schema_violations(value: &Value) -> Vec<String> {
    let Some(root) = value.as_object() else {
        return vec!["document is not a JSON object".into()];
    };
    let mut out = Vec::new();
    match root.get("Document_Type") {
        Some(Value::String(s)) if s == DOCUMENT_TYPE => {}
        Some(_) => out.push(format!("Document_Type: expected \"{DOCUMENT_TYPE}\"")),
        None => out.push("Document_Type: missing".into()),
    }
    match root.get("Algorithm") {
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let Some(m) = item.as_object() else {
                    out.push(format!("Algorithm[{i}]: expected an object"));
                    continue;
                };
                match m.get("Module_Sequence") {
                    Some(v) if v.as_u64().is_some() => {}
                    Some(_) => out.push(format!("Algorithm[{i}].Module_Sequence: expected a non-negative integer")),
                    None => out.push(format!("Algorithm[{i}].Module_Sequence: missing")),
                }
                for f in TEXT_FIELDS {
                    match m.get(f) {
                        Some(Value::String(_)) => {}
                        Some(_) => out.push(format!("Algorithm[{i}].{f}: expected a string")),
                        None => out.push(format!("Algorithm[{i}].{f}: missing")),
                    }
                }
            }
        }
        Some(_) => out.push("Algorithm: expected an array".into()),
        None => out.push("Algorithm: missing".into()),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignViolation {
    /// 1-based module position, when the violation concerns one module.
    pub module: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for DesignViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.module, &self.field) {
            (Some(m), Some(field)) => write!(f, "({m}, {field}) {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

fn whole(message: impl Into<String>) -> DesignViolation {
    DesignViolation { module: None, field: None, message: message.into() }
}

pub fn validate_design(doc: &AlgorithmDesignDocument, max_modules: usize) -> Vec<DesignViolation> {
    let mut out = Vec::new();
    if doc.document_type != DOCUMENT_TYPE {
        out.push(whole(format!("document type is not \"{DOCUMENT_TYPE}\"")));
    }
    if doc.modules.is_empty() {
        out.push(whole("empty design"));
        return out;
    }
    if doc.modules.len() > max_modules {
        out.push(whole(format!("module count > {max_modules}")));
    }
    if doc.modules.iter().enumerate().any(|(i, m)| m.sequence as usize != i + 1) {
        out.push(whole("non-consecutive sequence"));
    }
    for (i, m) in doc.modules.iter().enumerate() {
        let fields = [
            ("name", &m.name),
            ("description", &m.description),
            ("input", &m.input),
            ("output", &m.output),
            ("implementation_details", &m.implementation_details),
        ];
        for (field, value) in fields {
            if value.trim().is_empty() {
                out.push(DesignViolation {
                    module: Some(i + 1),
                    field: Some(field.into()),
                    message: "empty".into(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("design invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    DesignInvalid(Vec<DesignViolation>),
    #[error("requirements document in the pool is missing or differs from the one given")]
    RequirementsMismatch,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, Copy)]
pub struct DesignSettings {
    pub stage: StageSettings,
    pub max_reasks: u32,
    pub max_modules: usize,
}

impl Default for DesignSettings {
    fn default() -> Self {
        Self {
            stage: StageSettings::default_for(StageTag::AlgorithmDesign),
            max_reasks: 2,
            max_modules: DEFAULT_MAX_MODULES,
        }
    }
}

/// What the design stage gets to see.
#[derive(Debug, Clone, Copy)]
pub enum DesignInput<'a> {
    /// Read from the shared pool; must equal the given document.
    Pool(&'a RequirementsDocument),
    /// Pool disabled: only the previous stage's output text, verbatim.
    Passthrough(&'a str),
}

pub fn design_request(input: DesignInput<'_>, pool: &InfoPool, settings: &DesignSettings) -> Result<CompletionRequest, DesignError> {
    let user = match input {
        DesignInput::Pool(req) => {
            if pool.requirements().as_ref() != Some(req) {
                return Err(DesignError::RequirementsMismatch);
            }
            format!("User Requirements Document (shared information pool):\n{}", req.to_json_pretty())
        }
        DesignInput::Passthrough(text) => text.to_string(),
    };
    Ok(CompletionRequest::new(
        StageTag::AlgorithmDesign,
        settings.stage,
        vec![ChatMessage::system(templates::ALGORITHM_DESIGN), ChatMessage::user(user)],
    ))
}

/// Calls the backend, validates the design and stores it in the pool. An
/// invalid design is never stored.
pub fn design(
    input: DesignInput<'_>,
    backend: &dyn ChatBackend,
    pool: &mut InfoPool,
    settings: &DesignSettings,
) -> Result<AlgorithmDesignDocument, DesignError> {
    let request = design_request(input, pool, settings)?;
    let out = llm::complete_json(backend, &request, SchemaId::AlgorithmDesign, settings.max_reasks)?;
    let doc: AlgorithmDesignDocument = serde_json::from_value(out.value).map_err(|e| {
        DesignError::DesignInvalid(vec![whole(format!("unreadable design: {e}"))])
    })?;
    let violations = validate_design(&doc, settings.max_modules);
    if !violations.is_empty() {
        return Err(DesignError::DesignInvalid(violations));
    }
    pool.put(ArtifactKind::AlgorithmDesign, Payload::Document(doc.to_value()))?;
    Ok(doc)
}
