//! Stage 5: annotation, plus the mechanical checks an annotated program
//! must pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{format_timestamp, Clock};
use crate::debug::{DebugError, DebugSession, DebugState};
use crate::design::AlgorithmDesignDocument;
use crate::implementation::{strip_code_fences, CodeArtifact, PromptContext};
use crate::llm::{ChatBackend, ChatMessage, CompletionRequest, LlmError, StageSettings, StageTag};
use crate::pool::{ArtifactKind, InfoPool, Payload, PoolError};
use crate::templates;

const COMMENT_TOKENS: &[(&str, &str)] = &[
    ("javascript", "//"),
    ("js", "//"),
    ("python", "#"),
    ("py", "#"),
    ("r", "#"),
];

pub fn comment_token(language: &str) -> Result<&'static str, AnnotationError> {
    let key = language.trim().to_ascii_lowercase();
    COMMENT_TOKENS
        .iter()
        .find(|(lang, _)| *lang == key)
        .map(|(_, tok)| *tok)
        .ok_or_else(|| AnnotationError::UnknownLanguage(language.to_string()))
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("no comment syntax registered for language {0:?}")]
    UnknownLanguage(String),
    #[error("annotation rejected: {}", .0.join("; "))]
    AnnotationInvalid(Vec<String>),
    #[error(transparent)]
    State(#[from] DebugError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationHeader {
    pub created_at: Option<String>,
    pub platform: Option<String>,
    pub summary: Option<String>,
}

impl AnnotationHeader {
    pub fn is_empty(&self) -> bool {
        self.created_at.is_none() && self.platform.is_none() && self.summary.is_none()
    }

    fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.created_at.is_none() {
            out.push("created");
        }
        if self.platform.is_none() {
            out.push("platform");
        }
        if self.summary.is_none() {
            out.push("description");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedCode {
    pub header: AnnotationHeader,
    pub body: String,
    pub comment_token: String,
}

fn header_field(line: &str, token: &str) -> Option<(&'static str, String)> {
    let rest = line.trim().strip_prefix(token)?.trim();
    let (key, value) = rest.split_once(':')?;
    let value = value.trim();
    if value.is_empty() {
        return None;
    }
    let field = match key.trim().to_ascii_lowercase().as_str() {
        "created" | "creation time" | "created at" => "created",
        "platform" => "platform",
        "description" | "summary" => "description",
        _ => return None,
    };
    Some((field, value.to_string()))
}

fn is_rule_line(line: &str, token: &str) -> bool {
    line.trim()
        .strip_prefix(token)
        .is_some_and(|rest| !rest.trim().is_empty() && rest.trim().chars().all(|c| "-=*#/ ".contains(c)))
}

impl AnnotatedCode {
    /// Splits a file into its leading header block and the rest. The header
    /// is the run of leading comment lines carrying known keys (decorative
    /// rule lines allowed); everything after it is body.
    pub fn parse(text: &str, comment_token: &str) -> Self {
        let mut header = AnnotationHeader::default();
        let mut consumed = 0;
        for line in text.split_inclusive('\n') {
            let l = line.trim_end_matches(['\n', '\r']);
            if consumed == 0 && l.trim().is_empty() {
                consumed += line.len();
                continue;
            }
            if let Some((field, value)) = header_field(l, comment_token) {
                let slot = match field {
                    "created" => &mut header.created_at,
                    "platform" => &mut header.platform,
                    _ => &mut header.summary,
                };
                if slot.is_none() {
                    *slot = Some(value);
                    consumed += line.len();
                    continue;
                }
                break;
            }
            if !header.is_empty() && is_rule_line(l, comment_token) {
                consumed += line.len();
                continue;
            }
            break;
        }
        if header.is_empty() {
            consumed = 0;
        }
        Self { header, body: text[consumed..].to_string(), comment_token: comment_token.to_string() }
    }

    pub fn render(&self) -> String {
        let t = &self.comment_token;
        let mut out = String::new();
        if let Some(v) = &self.header.created_at {
            out.push_str(&format!("{t} Created: {v}\n"));
        }
        if let Some(v) = &self.header.platform {
            out.push_str(&format!("{t} Platform: {v}\n"));
        }
        if let Some(v) = &self.header.summary {
            out.push_str(&format!("{t} Description: {v}\n"));
        }
        out.push_str(&self.body);
        out
    }
}

fn is_comment(line: &str, token: &str) -> bool {
    line.trim_start().starts_with(token)
}

fn foreign_token<'a>(line: &str, own: &str) -> Option<&'a str> {
    let t = line.trim_start();
    ["//", "#"].into_iter().filter(|tok| *tok != own).find(|tok| {
        // "#" inside a "//" language is only a comment marker at line start,
        // never a shebang
        t.starts_with(tok) && !t.starts_with("#!")
    })
}

fn normalize(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn code_lines(text: &str, token: &str) -> Vec<String> {
    let mut lines: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !is_comment(l, token) && foreign_token(l, token).is_none())
        .map(normalize)
        .collect();
    lines.sort();
    lines
}

/// Violations of the annotation rules. `original` is the code before
/// annotation; its non-comment lines must survive unchanged.
pub fn check_annotation(
    annotated: &AnnotatedCode,
    original: &str,
    design: &AlgorithmDesignDocument,
    language: &str,
) -> Result<Vec<String>, AnnotationError> {
    let token = comment_token(language)?;
    let mut violations = Vec::new();

    if annotated.header.is_empty() {
        violations.push("missing header".to_string());
    } else {
        let missing = annotated.header.missing();
        if !missing.is_empty() {
            violations.push(format!("incomplete header: missing {}", missing.join(", ")));
        }
    }
    if annotated.comment_token != token {
        violations.push(format!(
            "wrong comment token: header uses {:?}, {language} uses {token:?}",
            annotated.comment_token
        ));
    }

    let comments = annotated.body.lines().filter(|l| is_comment(l, token)).count();
    let modules = design.modules.len();
    if comments < modules {
        violations.push(format!("comments({comments}) < modules({modules})"));
    }

    let foreign = annotated.body.lines().filter(|l| foreign_token(l, token).is_some()).count();
    if foreign > 0 {
        violations.push(format!("wrong comment token: {foreign} line(s) not using {token:?}"));
    }

    if code_lines(&annotated.body, token) != code_lines(original, token) {
        violations.push("body drift: executable lines differ from the code before annotation".to_string());
    }
    if annotated.body.trim().is_empty() {
        violations.push("empty body".to_string());
    }
    Ok(violations)
}

#[derive(Debug, Clone, Copy)]
pub struct AnnotationSettings {
    pub stage: StageSettings,
}

impl Default for AnnotationSettings {
    fn default() -> Self {
        Self { stage: StageSettings::default_for(StageTag::CodeAnnotation) }
    }
}

pub fn annotation_request(
    code: &CodeArtifact,
    ctx: &PromptContext,
    created_at: &str,
    settings: &AnnotationSettings,
) -> Result<CompletionRequest, AnnotationError> {
    let token = comment_token(&code.language)?;
    let system = format!(
        "{}\n\nComment syntax: {token}\nCreation time: {created_at}",
        templates::CODE_ANNOTATION
    );
    let user = if ctx.passthrough.is_some() {
        code.source.clone()
    } else {
        format!(
            "User Requirements Document (shared information pool):\n{}\n\nAlgorithm Design Document (shared information pool):\n{}\n\nFinal code (revision {}):\n{}",
            ctx.requirements.to_json_pretty(),
            ctx.design.to_json_pretty(),
            code.revision,
            code.source
        )
    };
    Ok(CompletionRequest::new(
        StageTag::CodeAnnotation,
        settings.stage,
        vec![ChatMessage::system(system), ChatMessage::user(user)],
    ))
}

/// Produces the annotated program, re-asking once if the first attempt
/// breaks the rules. Stores the result in the pool and finishes the session.
#[allow(clippy::too_many_arguments)]
pub fn annotate(
    session: &mut DebugSession,
    code: &CodeArtifact,
    ctx: &PromptContext,
    backend: &dyn ChatBackend,
    pool: &mut InfoPool,
    clock: &dyn Clock,
    settings: &AnnotationSettings,
) -> Result<AnnotatedCode, AnnotationError> {
    session.expect(DebugState::Annotating)?;
    let token = comment_token(&code.language)?;
    let created_at = format_timestamp(&clock.now());
    let mut request = annotation_request(code, ctx, &created_at, settings)?;

    let mut violations = Vec::new();
    for attempt in 0..2 {
        let reply = backend.complete(&request)?;
        let text = strip_code_fences(&reply);
        let annotated = AnnotatedCode::parse(&text, token);
        violations = check_annotation(&annotated, &code.source, &ctx.design, &code.language)?;
        if violations.is_empty() {
            pool.put(ArtifactKind::AnnotatedCode, Payload::Text(text))?;
            session.state = DebugState::Done;
            return Ok(annotated);
        }
        if attempt == 0 {
            request.messages.push(ChatMessage::assistant(reply));
            request.messages.push(ChatMessage::user(format!(
                "The annotated code breaks these rules:\n- {}\nReturn the corrected annotated code only.",
                violations.join("\n- ")
            )));
        }
    }
    Err(AnnotationError::AnnotationInvalid(violations))
}
