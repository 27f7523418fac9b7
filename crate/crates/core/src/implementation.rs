//! Stage 3: code implementation. Retrieves supporting knowledge, assembles
//! the generation context and stores the first code draft.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AblationConfig;
use crate::design::AlgorithmDesignDocument;
use crate::kb::{KbKind, KnowledgeBases, RetrievalHit, SearchFilters};
use crate::llm::{ChatBackend, ChatMessage, CompletionRequest, LlmError, StageSettings, StageTag};
use crate::pool::{ArtifactKind, InfoPool, Payload, PoolError};
use crate::requirements::RequirementsDocument;
use crate::templates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Generated,
    Repaired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeArtifact {
    pub language: String,
    pub platform: String,
    pub source: String,
    pub revision: u32,
    pub provenance: Provenance,
}

impl CodeArtifact {
    /// Extension for the convenience copy written next to the `.txt` export.
    pub fn extension(&self) -> &'static str {
        match self.language.trim().to_ascii_lowercase().as_str() {
            "javascript" | "js" => "js",
            "python" | "py" => "py",
            "r" => "R",
            _ => "txt",
        }
    }

    /// Writes `<stem>.txt` and, when the language is known, `<stem>.<ext>`.
    pub fn export(&self, dir: &Path, stem: &str) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = vec![dir.join(format!("{stem}.txt"))];
        if self.extension() != "txt" {
            written.push(dir.join(format!("{stem}.{}", self.extension())));
        }
        for path in &written {
            std::fs::write(path, &self.source)?;
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SupportHits {
    pub platform: Vec<RetrievalHit>,
    pub dataset: Vec<RetrievalHit>,
    pub function: Vec<RetrievalHit>,
}

impl SupportHits {
    pub fn is_empty(&self) -> bool {
        self.platform.is_empty() && self.dataset.is_empty() && self.function.is_empty()
    }

    /// Platform, dataset, function; each list in score order.
    pub fn ordered(&self) -> impl Iterator<Item = &RetrievalHit> {
        self.platform.iter().chain(&self.dataset).chain(&self.function)
    }
}

/// Analysis goal, methodology and every module name, space-joined.
pub fn retrieval_query(req: &RequirementsDocument, design: &AlgorithmDesignDocument) -> String {
    let mut parts = vec![req.analysis_goal.as_str(), req.analysis_methodology.as_str()];
    parts.extend(design.module_names());
    parts.join(" ")
}

pub fn retrieve_support(
    req: &RequirementsDocument,
    design: &AlgorithmDesignDocument,
    kbs: &KnowledgeBases,
    k_per_kb: usize,
) -> SupportHits {
    let query = retrieval_query(req, design);
    let scoped = SearchFilters {
        platform: Some(req.platform.clone()),
        language: Some(req.programming_language.clone()),
    };
    let search = |kind: KbKind, q: &str, filters: &SearchFilters| {
        kbs.get(kind).map(|idx| idx.search(q, filters, k_per_kb)).unwrap_or_default()
    };
    SupportHits {
        platform: search(KbKind::Platform, &req.platform, &SearchFilters::none()),
        dataset: search(KbKind::Dataset, &query, &scoped),
        function: search(KbKind::Function, &query, &scoped),
    }
}

/// Documents handed over directly when the pool is disabled.
#[derive(Debug, Clone)]
pub struct DirectInputs {
    pub requirements: RequirementsDocument,
    pub design: AlgorithmDesignDocument,
    /// The design stage's output text, the only thing the prompt may show.
    pub predecessor_output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub requirements: RequirementsDocument,
    pub design: AlgorithmDesignDocument,
    pub kb_snippets: Vec<String>,
    pub ablation: AblationConfig,
    /// Set when the pool is disabled: the prompt shows this text and nothing
    /// else from earlier stages.
    pub passthrough: Option<String>,
}

#[derive(Debug, Error)]
pub enum ImplementationError {
    #[error("{0} is not available to the implementation stage")]
    MissingArtifact(ArtifactKind),
    #[error("model returned no code")]
    EmptyCode,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

pub fn assemble_context(
    pool: &InfoPool,
    direct: Option<&DirectInputs>,
    hits: &SupportHits,
    ablation: AblationConfig,
) -> Result<PromptContext, ImplementationError> {
    let (requirements, design, passthrough) = if ablation.pool {
        let req = pool.requirements().ok_or(ImplementationError::MissingArtifact(ArtifactKind::RequirementsDoc))?;
        let design = pool.design().ok_or(ImplementationError::MissingArtifact(ArtifactKind::AlgorithmDesign))?;
        (req, design, None)
    } else {
        let d = direct.ok_or(ImplementationError::MissingArtifact(ArtifactKind::AlgorithmDesign))?;
        (d.requirements.clone(), d.design.clone(), Some(d.predecessor_output.clone()))
    };
    let kb_snippets = if ablation.retrieval {
        hits.ordered().map(|h| h.snippet.clone()).collect()
    } else {
        Vec::new()
    };
    Ok(PromptContext { requirements, design, kb_snippets, ablation, passthrough })
}

#[derive(Debug, Clone, Copy)]
pub struct GenerationSettings {
    pub stage: StageSettings,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self { stage: StageSettings::default_for(StageTag::CodeImplementation) }
    }
}

pub fn generation_request(ctx: &PromptContext, settings: &GenerationSettings) -> CompletionRequest {
    let mut system = templates::CODE_IMPLEMENTATION.to_string();
    if !ctx.kb_snippets.is_empty() {
        system.push_str("\n\nReference knowledge:\n");
        system.push_str(&ctx.kb_snippets.join("\n"));
    }
    let user = match &ctx.passthrough {
        Some(text) => text.clone(),
        None => format!(
            "User Requirements Document (shared information pool):\n{}\n\nAlgorithm Design Document (shared information pool):\n{}",
            ctx.requirements.to_json_pretty(),
            ctx.design.to_json_pretty()
        ),
    };
    CompletionRequest::new(
        StageTag::CodeImplementation,
        settings.stage,
        vec![ChatMessage::system(system), ChatMessage::user(user)],
    )
}

/// Body of the first fenced block if there is one, else the whole reply;
/// surrounding blank lines and trailing whitespace removed.
pub fn strip_code_fences(reply: &str) -> String {
    let body = match reply.find("```") {
        Some(open) => {
            let after = &reply[open + 3..];
            let start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
            let inner = &after[start..];
            match inner.find("```") {
                Some(close) => &inner[..close],
                None => inner,
            }
        }
        None => reply,
    };
    let trimmed = body.trim_end();
    let first_content = trimmed
        .split_inclusive('\n')
        .take_while(|l| l.trim().is_empty())
        .map(str::len)
        .sum::<usize>();
    trimmed[first_content..].to_string()
}

pub fn generate(
    ctx: &PromptContext,
    backend: &dyn ChatBackend,
    pool: &mut InfoPool,
    settings: &GenerationSettings,
) -> Result<CodeArtifact, ImplementationError> {
    let reply = backend.complete(&generation_request(ctx, settings))?;
    let source = strip_code_fences(&reply);
    if source.trim().is_empty() {
        return Err(ImplementationError::EmptyCode);
    }
    let entry = pool.put(ArtifactKind::CodeDraft, Payload::Text(source.clone()))?;
    Ok(CodeArtifact {
        language: ctx.requirements.programming_language.clone(),
        platform: ctx.requirements.platform.clone(),
        source,
        revision: entry.revision,
        provenance: Provenance::Generated,
    })
}
