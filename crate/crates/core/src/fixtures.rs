//! Bundled fixtures: the eight gold-annotated tasks, small knowledge bases,
//! and scripted backends that play a well-behaved model for any corpus task.

use std::sync::Arc;

use crate::annotation::comment_token;
use crate::config::PipelineConfig;
use crate::design::{AlgorithmDesignDocument, AlgorithmModule};
use crate::evaluation::{parse_corpus, EvalTask};
use crate::kb::{KbIndex, KbKind, KnowledgeBases};
use crate::llm::{ChatBackend, ScriptedBackend, ScriptedRule, StageTag};
use crate::requirements::RequirementsDocument;

pub const SAMPLE_CORPUS_JSON: &str = include_str!("../fixtures/corpus/sample.json");
pub const KB_PLATFORMS_JSON: &str = include_str!("../fixtures/kb/platforms.json");
pub const KB_FUNCTIONS_JSON: &str = include_str!("../fixtures/kb/functions.json");
pub const KB_DATASETS_JSON: &str = include_str!("../fixtures/kb/datasets.json");

/// Timestamp written into scripted annotation headers.
pub const SCRIPTED_CREATED_AT: &str = "2025-01-01T00:00:00Z";

pub fn sample_corpus() -> Vec<EvalTask> {
    parse_corpus(SAMPLE_CORPUS_JSON).expect("bundled corpus is valid")
}

pub fn fixture_kbs() -> KnowledgeBases {
    let mut kbs = KnowledgeBases::default();
    for (kind, text) in [
        (KbKind::Platform, KB_PLATFORMS_JSON),
        (KbKind::Function, KB_FUNCTIONS_JSON),
        (KbKind::Dataset, KB_DATASETS_JSON),
    ] {
        kbs.insert(KbIndex::from_json(text, kind).expect("bundled knowledge base is valid"));
    }
    kbs
}

fn module(seq: u32, name: &str, description: String, input: &str, output: &str, details: String) -> AlgorithmModule {
    AlgorithmModule {
        sequence: seq,
        name: name.to_string(),
        description,
        input: input.to_string(),
        output: output.to_string(),
        implementation_details: details,
    }
}

/// A plausible design derived from a requirements document: load, optional
/// extent steps, the method, export.
pub fn synthetic_design(req: &RequirementsDocument) -> AlgorithmDesignDocument {
    let mut modules = vec![module(
        1,
        "Data loading",
        format!("Load the input data: {}", req.data_source_and_format),
        "Data source reference",
        "Raw dataset",
        format!("Read {} on {}", req.data_source_and_format, req.platform),
    )];
    if let Some(s) = &req.spatial_extent {
        modules.push(module(
            0,
            "Study area definition",
            format!("Define the spatial extent: {s}"),
            "Raw dataset",
            "Dataset limited to the study area",
            format!("Build the {s} boundary geometry and restrict the data to it"),
        ));
    }
    if let Some(t) = &req.temporal_extent {
        modules.push(module(
            0,
            "Temporal filtering",
            format!("Keep observations within {t}"),
            "Dataset limited to the study area",
            "Dataset limited to the study period",
            format!("Filter acquisition dates to {t}"),
        ));
    }
    modules.push(module(
        0,
        &req.analysis_methodology,
        format!("Apply {} to reach the goal: {}", req.analysis_methodology, req.analysis_goal),
        "Prepared dataset",
        "Analysis result",
        format!("Implement {} with {} functions", req.analysis_methodology, req.platform),
    ));
    modules.push(module(
        0,
        "Result export",
        format!("Write the result as {}", req.output_format),
        "Analysis result",
        &req.output_format,
        format!("Export to {}", req.output_format),
    ));
    for (i, m) in modules.iter_mut().enumerate() {
        m.sequence = i as u32 + 1;
    }
    AlgorithmDesignDocument::new(modules)
}

fn quoted(s: &str) -> String {
    s.replace(['"', '\\'], "'")
}

/// One code line per design module, in the document's language.
pub fn synthetic_code_lines(req: &RequirementsDocument, design: &AlgorithmDesignDocument) -> Vec<String> {
    let lang = req.programming_language.trim().to_ascii_lowercase();
    design
        .modules
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let var = format!("step{}", i + 1);
            let prev = if i == 0 { "source".to_string() } else { format!("step{i}") };
            let arg = quoted(&m.implementation_details);
            match lang.as_str() {
                "javascript" | "js" => format!("var {var} = pipeline.apply({prev}, \"{arg}\");"),
                "r" => format!("{var} <- apply_step({prev}, \"{arg}\")"),
                _ => format!("{var} = apply_step({prev}, \"{arg}\")"),
            }
        })
        .collect()
}

pub fn synthetic_code(req: &RequirementsDocument, design: &AlgorithmDesignDocument) -> String {
    synthetic_code_lines(req, design).join("\n") + "\n"
}

/// The base program with a leading comment marking the repair round.
pub fn repaired_code(req: &RequirementsDocument, design: &AlgorithmDesignDocument, revision: u32) -> String {
    let token = comment_token(&req.programming_language).unwrap_or("#");
    format!("{token} revision {revision}: addressed the reported problem\n{}", synthetic_code(req, design))
}

/// Header plus one comment per module above its code line.
pub fn synthetic_annotation(req: &RequirementsDocument, design: &AlgorithmDesignDocument) -> String {
    let token = comment_token(&req.programming_language).unwrap_or("#");
    let mut out = format!(
        "{token} Created: {SCRIPTED_CREATED_AT}\n{token} Platform: {}\n{token} Description: {}\n\n",
        req.platform, req.analysis_goal
    );
    for (m, line) in design.modules.iter().zip(synthetic_code_lines(req, design)) {
        out.push_str(&format!("{token} Module {}: {}\n{line}\n", m.sequence, m.name));
    }
    out
}

fn fenced(lang: &str, body: &str) -> String {
    format!("```{lang}\n{body}\n```")
}

/// Rules for one task. Extraction returns `extraction`; later stages behave
/// like a compliant model. Repairs are scripted for revisions below
/// `max_revisions`.
pub fn task_rules(task: &EvalTask, extraction: &RequirementsDocument, max_revisions: u32) -> Vec<ScriptedRule> {
    let design = synthetic_design(extraction);
    let lang = extraction.programming_language.to_ascii_lowercase();
    let yn = |b: bool| if b { "yes" } else { "no" };
    let mut draft = extraction.to_value();
    if let Some(obj) = draft.as_object_mut() {
        obj.remove("provenance");
    }
    let mut rules = vec![
        ScriptedRule::new(
            StageTag::RequirementAnalysis,
            "User requirements:",
            fenced("json", &serde_json::to_string_pretty(&draft).expect("draft serializes")),
        ),
        ScriptedRule::new(
            StageTag::RequirementAnalysis,
            "Analysis goal:",
            format!(
                "{}/{}",
                yn(task.gold.spatial_extent.is_some()),
                yn(task.gold.temporal_extent.is_some())
            ),
        ),
        ScriptedRule::new(StageTag::RequirementAnalysis, "Requirements:\n", extraction.analysis_methodology.clone()),
        ScriptedRule::new(StageTag::AlgorithmDesign, "", fenced("json", &design.to_json_pretty())),
        ScriptedRule::new(StageTag::CodeImplementation, "", fenced(&lang, &synthetic_code(extraction, &design))),
    ];
    for n in 0..max_revisions {
        rules.push(ScriptedRule::new(
            StageTag::CodeDebugging,
            format!("@rev{n}."),
            fenced(&lang, &repaired_code(extraction, &design, n + 1)),
        ));
    }
    // free-form feedback: step from whatever revision the prompt carries
    for n in (1..max_revisions).rev() {
        rules.push(ScriptedRule::new(
            StageTag::CodeDebugging,
            format!("revision {n}: addressed"),
            fenced(&lang, &repaired_code(extraction, &design, n + 1)),
        ));
    }
    if max_revisions > 0 {
        rules.push(ScriptedRule::new(StageTag::CodeDebugging, "", fenced(&lang, &repaired_code(extraction, &design, 1))));
    }
    rules.push(ScriptedRule::new(StageTag::CodeAnnotation, "", fenced(&lang, &synthetic_annotation(extraction, &design))));
    rules
}

pub fn gold_rules(task: &EvalTask, max_revisions: u32) -> Vec<ScriptedRule> {
    task_rules(task, &task.gold, max_revisions)
}

/// A scripted backend that reproduces the task's gold parse.
pub fn gold_backend(task: &EvalTask, max_revisions: u32) -> ScriptedBackend {
    ScriptedBackend::new(gold_rules(task, max_revisions))
}

/// Backend factory for evaluation runs over any corpus.
pub fn gold_backend_factory(task: &EvalTask, config: &PipelineConfig) -> Arc<dyn ChatBackend> {
    Arc::new(gold_backend(task, config.ablation.max_debug_iterations))
}
