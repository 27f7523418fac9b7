//! Stage 1: requirement analysis.
//!
//! Extracts the eight requirement elements from free text, decides which
//! conditional elements the task needs, checks completeness, drives the
//! clarification loop and finally writes the standardized requirements
//! document into the pool.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::llm::{self, ChatBackend, ChatMessage, CompletionRequest, LlmError, SchemaId, StageSettings, StageTag};
use crate::pool::{ArtifactKind, InfoPool, Payload, PoolError};
use crate::templates;

pub const DOCUMENT_TYPE: &str = "User Requirements Document";

/// The eight requirement elements, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    Platform,
    ProgrammingLanguage,
    AnalysisGoal,
    SpatialExtent,
    TemporalExtent,
    DataSourceAndFormat,
    AnalysisMethodology,
    OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementClass {
    Required,
    Conditional,
    Optional,
}

impl Element {
    pub const ALL: [Element; 8] = [
        Element::Platform,
        Element::ProgrammingLanguage,
        Element::AnalysisGoal,
        Element::SpatialExtent,
        Element::TemporalExtent,
        Element::DataSourceAndFormat,
        Element::AnalysisMethodology,
        Element::OutputFormat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Element::Platform => "platform",
            Element::ProgrammingLanguage => "programming_language",
            Element::AnalysisGoal => "analysis_goal",
            Element::SpatialExtent => "spatial_extent",
            Element::TemporalExtent => "temporal_extent",
            Element::DataSourceAndFormat => "data_source_and_format",
            Element::AnalysisMethodology => "analysis_methodology",
            Element::OutputFormat => "output_format",
        }
    }

    /// Key spelling used in the JSON document.
    pub fn wire_key(self) -> &'static str {
        match self {
            Element::Platform => "Platform",
            Element::ProgrammingLanguage => "Programming_Language",
            Element::AnalysisGoal => "Analysis_Goal",
            Element::SpatialExtent => "Spatial_Extent",
            Element::TemporalExtent => "Temporal_Extent",
            Element::DataSourceAndFormat => "Data_Source_and_Format",
            Element::AnalysisMethodology => "Analysis_Methodology",
            Element::OutputFormat => "Output_Format",
        }
    }

    pub fn class(self) -> ElementClass {
        match self {
            Element::SpatialExtent | Element::TemporalExtent => ElementClass::Conditional,
            Element::AnalysisMethodology => ElementClass::Optional,
            _ => ElementClass::Required,
        }
    }

    pub fn from_wire_key(key: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|e| e.wire_key() == key)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Element {
    type Err = RequirementsError;

    /// Accepts the snake-case name or the document key, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim();
        Element::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(needle) || e.wire_key().eq_ignore_ascii_case(needle))
            .ok_or_else(|| RequirementsError::UnknownElement(s.to_string()))
    }
}

/// Elements as currently known; `None` means not yet known.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawElements {
    pub platform: Option<String>,
    pub programming_language: Option<String>,
    pub analysis_goal: Option<String>,
    pub spatial_extent: Option<String>,
    pub temporal_extent: Option<String>,
    pub data_source_and_format: Option<String>,
    pub analysis_methodology: Option<String>,
    pub output_format: Option<String>,
}

impl RawElements {
    pub fn get(&self, e: Element) -> Option<&str> {
        self.slot(e).as_deref()
    }

    pub fn set(&mut self, e: Element, value: Option<String>) {
        *self.slot_mut(e) = value.map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
    }

    pub fn is_present(&self, e: Element) -> bool {
        self.get(e).is_some_and(|v| !v.trim().is_empty())
    }

    fn slot(&self, e: Element) -> &Option<String> {
        match e {
            Element::Platform => &self.platform,
            Element::ProgrammingLanguage => &self.programming_language,
            Element::AnalysisGoal => &self.analysis_goal,
            Element::SpatialExtent => &self.spatial_extent,
            Element::TemporalExtent => &self.temporal_extent,
            Element::DataSourceAndFormat => &self.data_source_and_format,
            Element::AnalysisMethodology => &self.analysis_methodology,
            Element::OutputFormat => &self.output_format,
        }
    }

    fn slot_mut(&mut self, e: Element) -> &mut Option<String> {
        match e {
            Element::Platform => &mut self.platform,
            Element::ProgrammingLanguage => &mut self.programming_language,
            Element::AnalysisGoal => &mut self.analysis_goal,
            Element::SpatialExtent => &mut self.spatial_extent,
            Element::TemporalExtent => &mut self.temporal_extent,
            Element::DataSourceAndFormat => &mut self.data_source_and_format,
            Element::AnalysisMethodology => &mut self.analysis_methodology,
            Element::OutputFormat => &mut self.output_format,
        }
    }

    /// Reads the `requirements` object of an extraction reply. Blank and null
    /// values become absent.
    pub fn from_draft(value: &Value) -> Result<Self, RequirementsError> {
        let violations = draft_schema_violations(value);
        if !violations.is_empty() {
            return Err(RequirementsError::Schema(violations));
        }
        let mut raw = RawElements::default();
        if let Some(obj) = value.get("requirements").and_then(Value::as_object) {
            for (k, v) in obj {
                if let (Some(e), Some(s)) = (Element::from_wire_key(k), v.as_str()) {
                    raw.set(e, Some(s.to_string()));
                }
            }
        }
        Ok(raw)
    }
}

/// Structural check for an extraction reply: a `requirements` object whose
/// keys are document keys and whose values are strings or null.
pub fn draft_schema_violations(value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(root) = value.as_object() else {
        return vec!["document is not a JSON object".into()];
    };
    if let Some(dt) = root.get("document_type") {
        if dt.as_str() != Some(DOCUMENT_TYPE) {
            out.push(format!("document_type: expected \"{DOCUMENT_TYPE}\""));
        }
    }
    match root.get("requirements") {
        Some(Value::Object(reqs)) => {
            for (k, v) in reqs {
                if Element::from_wire_key(k).is_none() {
                    out.push(format!("requirements.{k}: unknown element"));
                } else if !(v.is_string() || v.is_null()) {
                    out.push(format!("requirements.{k}: expected a string"));
                }
            }
        }
        Some(_) => out.push("requirements: expected an object".into()),
        None => out.push("requirements: missing".into()),
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionalFlags {
    pub spatial_needed: bool,
    pub temporal_needed: bool,
}

impl ConditionalFlags {
    /// A conditional element the user supplied is always kept.
    pub fn with_supplied(self, raw: &RawElements) -> Self {
        ConditionalFlags {
            spatial_needed: self.spatial_needed || raw.is_present(Element::SpatialExtent),
            temporal_needed: self.temporal_needed || raw.is_present(Element::TemporalExtent),
        }
    }

    fn needs(self, e: Element) -> bool {
        match e {
            Element::SpatialExtent => self.spatial_needed,
            Element::TemporalExtent => self.temporal_needed,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementStatus {
    Present,
    Missing,
    Inferred,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overall {
    Complete,
    NeedsClarification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub statuses: BTreeMap<Element, ElementStatus>,
    pub overall: Overall,
}

impl CompletenessReport {
    pub fn status(&self, e: Element) -> ElementStatus {
        self.statuses[&e]
    }

    /// Missing elements in canonical order.
    pub fn missing(&self) -> Vec<Element> {
        Element::ALL
            .into_iter()
            .filter(|e| self.statuses.get(e) == Some(&ElementStatus::Missing))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationRequest {
    pub elements: Vec<Element>,
    pub prompt: String,
}

/// The standardized requirements document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequirementsDocument {
    pub platform: String,
    pub programming_language: String,
    pub analysis_goal: String,
    pub spatial_extent: Option<String>,
    pub temporal_extent: Option<String>,
    pub data_source_and_format: String,
    pub analysis_methodology: String,
    pub output_format: String,
    /// Set when the methodology was inferred by the model rather than given.
    pub methodology_inferred: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentError(Vec<String>);

impl DocumentError {
    pub fn violations(&self) -> Vec<String> {
        self.0.clone()
    }
}

impl fmt::Display for DocumentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("; "))
    }
}

impl std::error::Error for DocumentError {}

impl RequirementsDocument {
    pub fn get(&self, e: Element) -> Option<&str> {
        match e {
            Element::Platform => Some(&self.platform),
            Element::ProgrammingLanguage => Some(&self.programming_language),
            Element::AnalysisGoal => Some(&self.analysis_goal),
            Element::SpatialExtent => self.spatial_extent.as_deref(),
            Element::TemporalExtent => self.temporal_extent.as_deref(),
            Element::DataSourceAndFormat => Some(&self.data_source_and_format),
            Element::AnalysisMethodology => Some(&self.analysis_methodology),
            Element::OutputFormat => Some(&self.output_format),
        }
    }

    pub fn to_raw(&self) -> RawElements {
        let mut raw = RawElements::default();
        for e in Element::ALL {
            raw.set(e, self.get(e).map(str::to_string));
        }
        raw
    }

    pub fn flags(&self) -> ConditionalFlags {
        ConditionalFlags {
            spatial_needed: self.spatial_extent.is_some(),
            temporal_needed: self.temporal_extent.is_some(),
        }
    }

    /// Document invariants: required elements and the methodology non-empty,
    /// conditional elements either absent or non-empty.
    pub fn violations(&self) -> Vec<String> {
        Element::ALL
            .into_iter()
            .filter_map(|e| match self.get(e) {
                Some(v) if v.trim().is_empty() => Some(format!("{}: empty", e.wire_key())),
                _ => None,
            })
            .collect()
    }

    pub fn to_value(&self) -> Value {
        let mut reqs = Map::new();
        for e in Element::ALL {
            if let Some(v) = self.get(e) {
                reqs.insert(e.wire_key().to_string(), Value::String(v.to_string()));
            }
        }
        let mut root = Map::new();
        root.insert("document_type".into(), Value::String(DOCUMENT_TYPE.into()));
        root.insert("requirements".into(), Value::Object(reqs));
        if self.methodology_inferred {
            let mut prov = Map::new();
            prov.insert(Element::AnalysisMethodology.wire_key().into(), Value::String("inferred".into()));
            root.insert("provenance".into(), Value::Object(prov));
        }
        Value::Object(root)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("document serializes")
    }

    pub fn from_value(value: &Value) -> Result<Self, DocumentError> {
        let mut violations = Vec::new();
        if value.get("document_type").and_then(Value::as_str) != Some(DOCUMENT_TYPE) {
            violations.push(format!("document_type: expected \"{DOCUMENT_TYPE}\""));
        }
        let empty = Map::new();
        let reqs = match value.get("requirements") {
            Some(Value::Object(m)) => m,
            _ => {
                violations.push("requirements: missing or not an object".into());
                &empty
            }
        };
        for k in reqs.keys() {
            if Element::from_wire_key(k).is_none() {
                violations.push(format!("requirements.{k}: unknown element"));
            }
        }
        let mut field = |e: Element| -> Option<String> {
            match reqs.get(e.wire_key()) {
                None | Some(Value::Null) => {
                    if e.class() != ElementClass::Conditional {
                        violations.push(format!("{}: missing", e.wire_key()));
                    }
                    None
                }
                Some(Value::String(s)) if s.trim().is_empty() => {
                    violations.push(format!("{}: empty", e.wire_key()));
                    None
                }
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => {
                    violations.push(format!("{}: expected a string", e.wire_key()));
                    None
                }
            }
        };
        let platform = field(Element::Platform);
        let programming_language = field(Element::ProgrammingLanguage);
        let analysis_goal = field(Element::AnalysisGoal);
        let spatial_extent = field(Element::SpatialExtent);
        let temporal_extent = field(Element::TemporalExtent);
        let data_source_and_format = field(Element::DataSourceAndFormat);
        let analysis_methodology = field(Element::AnalysisMethodology);
        let output_format = field(Element::OutputFormat);
        let methodology_inferred = value
            .pointer("/provenance/Analysis_Methodology")
            .and_then(Value::as_str)
            == Some("inferred");
        if !violations.is_empty() {
            return Err(DocumentError(violations));
        }
        Ok(RequirementsDocument {
            platform: platform.unwrap_or_default(),
            programming_language: programming_language.unwrap_or_default(),
            analysis_goal: analysis_goal.unwrap_or_default(),
            spatial_extent,
            temporal_extent,
            data_source_and_format: data_source_and_format.unwrap_or_default(),
            analysis_methodology: analysis_methodology.unwrap_or_default(),
            output_format: output_format.unwrap_or_default(),
            methodology_inferred,
        })
    }
}

impl Serialize for RequirementsDocument {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RequirementsDocument {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        RequirementsDocument::from_value(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum RequirementsError {
    #[error("requirement text is empty")]
    EmptyInput,
    #[error("unknown requirement element {0:?}")]
    UnknownElement(String),
    #[error("empty answer for {0}")]
    EmptyAnswer(Element),
    #[error("nothing is missing; no clarification needed")]
    NothingMissing,
    #[error("requirements incomplete, missing: {}", .0.iter().map(|e| e.name()).collect::<Vec<_>>().join(", "))]
    IncompleteRequirements(Vec<Element>),
    #[error("malformed requirements document: {}", .0.join("; "))]
    Schema(Vec<String>),
    #[error("could not read a yes/no answer from {0:?}")]
    UnparseableAnswer(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

/// Stage-1 backend calls.
#[derive(Debug, Clone, Copy)]
pub struct AnalysisSettings {
    pub stage: StageSettings,
    pub max_reasks: u32,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { stage: StageSettings::default_for(StageTag::RequirementAnalysis), max_reasks: 2 }
    }
}

pub fn extraction_request(user_text: &str, settings: &AnalysisSettings) -> CompletionRequest {
    CompletionRequest::new(
        StageTag::RequirementAnalysis,
        settings.stage,
        vec![
            ChatMessage::system(templates::REQUIREMENT_ANALYSIS),
            ChatMessage::user(format!("User requirements:\n{}", user_text.trim())),
        ],
    )
}

/// Asks the model for the eight elements and reads them back.
pub fn extract_elements(
    user_text: &str,
    backend: &dyn ChatBackend,
    settings: &AnalysisSettings,
) -> Result<RawElements, RequirementsError> {
    if user_text.trim().is_empty() {
        return Err(RequirementsError::EmptyInput);
    }
    let request = extraction_request(user_text, settings);
    let out = llm::complete_json(backend, &request, SchemaId::RequirementsDoc, settings.max_reasks)?;
    RawElements::from_draft(&out.value)
}

const SPATIAL_TERMS: &[&str] = &[
    "area", "areas", "around", "basin", "basins", "border", "boundary", "boundaries", "catchment",
    "cities", "city", "coast", "coastal", "continent", "coordinates", "countries", "country", "county",
    "district", "districts", "extent", "global", "globe", "island", "kilometer", "kilometers",
    "latitude", "longitude", "map", "maps", "municipality", "neighborhood", "neighborhoods",
    "province", "provinces", "radius", "region", "regional", "regions", "state", "states", "territory",
    "watershed", "watersheds", "within", "worldwide",
];

const TEMPORAL_TERMS: &[&str] = &[
    "annual", "annually", "daily", "date", "dates", "decade", "decades", "during", "historical",
    "hourly", "monthly", "period", "periods", "season", "seasonal", "seasons", "since", "temporal",
    "timeline", "trend", "trends", "weekly", "year", "yearly", "years",
    "january", "february", "march", "april", "june", "july", "august", "september",
    "october", "november", "december",
];

/// Capitalized words after these prepositions usually name places.
const PLACE_PREPOSITIONS: &[&str] = &["across", "around", "for", "in", "near", "of", "over", "within"];

/// Capitalized words that follow a preposition but are not places.
const NON_PLACES: &[&str] = &[
    "arcgis", "earth", "engine", "folium", "gdal", "gee", "geopandas", "google", "javascript", "landsat",
    "modis", "python", "qgis", "r", "sentinel", "the", "a", "an",
];

fn is_year(token: &str) -> bool {
    token.len() == 4
        && token.chars().all(|c| c.is_ascii_digit())
        && (token.starts_with("19") || token.starts_with("20"))
}

/// Keyword rule table. Returns `None` when no rule fires for either flag.
pub fn rule_table_flags(analysis_goal: &str) -> Option<ConditionalFlags> {
    let words: Vec<&str> = analysis_goal
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .collect();
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();

    let mut spatial = lower.iter().any(|w| SPATIAL_TERMS.contains(&w.as_str()));
    if !spatial {
        spatial = words.windows(2).any(|pair| {
            let prep = pair[0].to_lowercase();
            let next = pair[1];
            PLACE_PREPOSITIONS.contains(&prep.as_str())
                && next.chars().next().is_some_and(char::is_uppercase)
                && !NON_PLACES.contains(&next.to_lowercase().as_str())
        });
    }

    let temporal = lower.iter().any(|w| {
        TEMPORAL_TERMS.contains(&w.as_str()) || w.split('-').any(is_year)
    }) || analysis_goal.to_lowercase().contains("time series");

    if spatial || temporal {
        Some(ConditionalFlags { spatial_needed: spatial, temporal_needed: temporal })
    } else {
        None
    }
}

fn parse_yes_no_pair(answer: &str) -> Option<(bool, bool)> {
    let votes: Vec<bool> = answer
        .split(|c: char| !c.is_alphanumeric())
        .filter_map(|w| match w.to_lowercase().as_str() {
            "yes" | "y" | "true" => Some(true),
            "no" | "n" | "false" => Some(false),
            _ => None,
        })
        .collect();
    match votes.as_slice() {
        [s, t, ..] => Some((*s, *t)),
        _ => None,
    }
}

/// Decides whether the spatial and temporal extents are needed. The rule
/// table runs first; only when no rule fires is the backend asked, and with
/// no backend both flags default to false.
pub fn classify_conditional_need(
    analysis_goal: &str,
    backend: Option<&dyn ChatBackend>,
    settings: &AnalysisSettings,
) -> Result<ConditionalFlags, RequirementsError> {
    if analysis_goal.trim().is_empty() {
        return Err(RequirementsError::EmptyInput);
    }
    if let Some(flags) = rule_table_flags(analysis_goal) {
        return Ok(flags);
    }
    let Some(backend) = backend else {
        return Ok(ConditionalFlags::default());
    };
    let request = CompletionRequest::new(
        StageTag::RequirementAnalysis,
        settings.stage,
        vec![
            ChatMessage::system(templates::CONDITIONAL_NEED),
            ChatMessage::user(format!("Analysis goal: {}", analysis_goal.trim())),
        ],
    );
    let answer = backend.complete(&request)?;
    let (spatial_needed, temporal_needed) =
        parse_yes_no_pair(&answer).ok_or(RequirementsError::UnparseableAnswer(answer))?;
    Ok(ConditionalFlags { spatial_needed, temporal_needed })
}

pub fn check_completeness(raw: &RawElements, flags: ConditionalFlags) -> CompletenessReport {
    let statuses: BTreeMap<Element, ElementStatus> = Element::ALL
        .into_iter()
        .map(|e| {
            let present = raw.is_present(e);
            let status = match e.class() {
                ElementClass::Required if present => ElementStatus::Present,
                ElementClass::Required => ElementStatus::Missing,
                ElementClass::Conditional if !flags.needs(e) => ElementStatus::NotApplicable,
                ElementClass::Conditional if present => ElementStatus::Present,
                ElementClass::Conditional => ElementStatus::Missing,
                ElementClass::Optional if present => ElementStatus::Present,
                ElementClass::Optional => ElementStatus::Inferred,
            };
            (e, status)
        })
        .collect();
    let overall = if statuses.values().any(|s| *s == ElementStatus::Missing) {
        Overall::NeedsClarification
    } else {
        Overall::Complete
    };
    CompletenessReport { statuses, overall }
}

/// Console text asking for the missing elements, one `Key:` line each.
pub fn clarification_prompt(elements: &[Element]) -> String {
    let mut text = String::from("Based on your input, the following information is still needed:\n\n");
    for e in elements {
        text.push_str(e.wire_key());
        text.push_str(":\n");
    }
    text
}

pub fn build_clarification(report: &CompletenessReport) -> Result<ClarificationRequest, RequirementsError> {
    let elements = report.missing();
    if elements.is_empty() {
        return Err(RequirementsError::NothingMissing);
    }
    let prompt = clarification_prompt(&elements);
    Ok(ClarificationRequest { elements, prompt })
}

/// Fills elements from user answers. All keys are validated before anything
/// is applied.
pub fn merge_answers(
    raw: &RawElements,
    answers: &BTreeMap<String, String>,
) -> Result<RawElements, RequirementsError> {
    let mut parsed = Vec::with_capacity(answers.len());
    for (key, value) in answers {
        let e: Element = key.parse()?;
        if value.trim().is_empty() {
            return Err(RequirementsError::EmptyAnswer(e));
        }
        parsed.push((e, value.clone()));
    }
    let mut merged = raw.clone();
    for (e, v) in parsed {
        merged.set(e, Some(v));
    }
    Ok(merged)
}

pub fn methodology_request(raw: &RawElements, settings: &AnalysisSettings) -> CompletionRequest {
    let mut known = String::new();
    for e in Element::ALL {
        if let Some(v) = raw.get(e) {
            known.push_str(&format!("{}: {}\n", e.wire_key(), v));
        }
    }
    CompletionRequest::new(
        StageTag::RequirementAnalysis,
        settings.stage,
        vec![
            ChatMessage::system(templates::METHODOLOGY_INFERENCE),
            ChatMessage::user(format!("Requirements:\n{known}")),
        ],
    )
}

fn clean_methodology(answer: &str) -> Option<String> {
    let line = answer.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    let line = line.strip_suffix('.').unwrap_or(line).trim();
    (!line.is_empty()).then(|| line.to_string())
}

/// Builds the requirements document (inferring the methodology if needed) and
/// stores it in the pool.
pub fn finalize(
    raw: &RawElements,
    flags: ConditionalFlags,
    backend: &dyn ChatBackend,
    pool: &mut InfoPool,
    settings: &AnalysisSettings,
) -> Result<RequirementsDocument, RequirementsError> {
    let report = check_completeness(raw, flags);
    if report.overall != Overall::Complete {
        return Err(RequirementsError::IncompleteRequirements(report.missing()));
    }
    let (methodology, inferred) = match raw.get(Element::AnalysisMethodology) {
        Some(m) => (m.to_string(), false),
        None => {
            let answer = backend.complete(&methodology_request(raw, settings))?;
            let m = clean_methodology(&answer).ok_or(LlmError::ProviderRefusal)?;
            (m, true)
        }
    };
    let owned = |e: Element| raw.get(e).unwrap_or_default().to_string();
    let conditional = |e: Element| flags.needs(e).then(|| owned(e));
    let doc = RequirementsDocument {
        platform: owned(Element::Platform),
        programming_language: owned(Element::ProgrammingLanguage),
        analysis_goal: owned(Element::AnalysisGoal),
        spatial_extent: conditional(Element::SpatialExtent),
        temporal_extent: conditional(Element::TemporalExtent),
        data_source_and_format: owned(Element::DataSourceAndFormat),
        analysis_methodology: methodology,
        output_format: owned(Element::OutputFormat),
        methodology_inferred: inferred,
    };
    pool.put(ArtifactKind::RequirementsDoc, Payload::Document(doc.to_value()))?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::llm::{ScriptedBackend, ScriptedRule};
    use std::sync::Arc;

    fn raw_full() -> RawElements {
        let mut raw = RawElements::default();
        raw.set(Element::Platform, Some("Google Earth Engine".into()));
        raw.set(Element::ProgrammingLanguage, Some("JavaScript".into()));
        raw.set(Element::AnalysisGoal, Some("Clip Landsat imagery to the Brazilian region.".into()));
        raw.set(Element::SpatialExtent, Some("Brazil".into()));
        raw.set(Element::TemporalExtent, Some("Year 2021".into()));
        raw.set(Element::DataSourceAndFormat, Some("Landsat imagery".into()));
        raw.set(Element::AnalysisMethodology, Some("Image clipping".into()));
        raw.set(Element::OutputFormat, Some("GeoTIFF".into()));
        raw
    }

    fn both() -> ConditionalFlags {
        ConditionalFlags { spatial_needed: true, temporal_needed: true }
    }

    #[test]
    fn canonical_order_and_names() {
        let names: Vec<_> = Element::ALL.iter().map(|e| e.name()).collect();
        assert_eq!(
            names,
            [
                "platform",
                "programming_language",
                "analysis_goal",
                "spatial_extent",
                "temporal_extent",
                "data_source_and_format",
                "analysis_methodology",
                "output_format"
            ]
        );
        assert_eq!("Spatial_Extent".parse::<Element>().unwrap(), Element::SpatialExtent);
        assert!("bogus_field".parse::<Element>().is_err());
    }

    #[test]
    fn rule_table_on_known_goals() {
        let circle = rule_table_flags(
            "Create a circular area with a 10-kilometer radius around the center of San Jose, California.",
        );
        assert_eq!(circle, Some(ConditionalFlags { spatial_needed: true, temporal_needed: false }));
        let cover = rule_table_flags("Generate a 2020 land cover map of Indonesia");
        assert_eq!(cover, Some(both()));
        assert_eq!(rule_table_flags("Compute the mean of a raster band"), None);
        let alaska = rule_table_flags("Calculate the average precipitation for Alaska in 2021");
        assert_eq!(alaska, Some(both()));
    }

    #[test]
    fn fallback_asks_backend_once() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(StageTag::RequirementAnalysis, "", "no/no").once()]);
        let flags =
            classify_conditional_need("Compute the mean of a raster band", Some(&backend), &Default::default())
                .unwrap();
        assert_eq!(flags, ConditionalFlags::default());
        let rec = ScriptedBackend::new(vec![ScriptedRule::new(StageTag::RequirementAnalysis, "", "Yes / no")]);
        let flags = classify_conditional_need("Compute the mean", Some(&rec), &Default::default()).unwrap();
        assert_eq!(flags, ConditionalFlags { spatial_needed: true, temporal_needed: false });
        let bad = ScriptedBackend::new(vec![ScriptedRule::new(StageTag::RequirementAnalysis, "", "maybe")]);
        assert!(matches!(
            classify_conditional_need("Compute the mean", Some(&bad), &Default::default()),
            Err(RequirementsError::UnparseableAnswer(_))
        ));
    }

    #[test]
    fn completeness_rules() {
        let mut raw = raw_full();
        raw.set(Element::TemporalExtent, None);
        let r = check_completeness(&raw, ConditionalFlags { spatial_needed: true, temporal_needed: false });
        assert_eq!(r.overall, Overall::Complete);
        assert_eq!(r.status(Element::TemporalExtent), ElementStatus::NotApplicable);

        let mut raw = raw_full();
        raw.set(Element::SpatialExtent, None);
        raw.set(Element::OutputFormat, None);
        let r = check_completeness(&raw, both());
        assert_eq!(r.overall, Overall::NeedsClarification);
        assert_eq!(r.missing(), vec![Element::SpatialExtent, Element::OutputFormat]);

        let mut raw = raw_full();
        raw.set(Element::AnalysisMethodology, None);
        let r = check_completeness(&raw, both());
        assert_eq!(r.overall, Overall::Complete);
        assert_eq!(r.status(Element::AnalysisMethodology), ElementStatus::Inferred);
    }

    #[test]
    fn clarification_lists_in_canonical_order() {
        let mut raw = raw_full();
        raw.set(Element::OutputFormat, None);
        raw.set(Element::SpatialExtent, None);
        let req = build_clarification(&check_completeness(&raw, both())).unwrap();
        assert_eq!(req.elements, vec![Element::SpatialExtent, Element::OutputFormat]);
        assert_eq!(
            req.prompt,
            "Based on your input, the following information is still needed:\n\nSpatial_Extent:\nOutput_Format:\n"
        );
        let mut raw = raw_full();
        raw.set(Element::Platform, None);
        assert_eq!(build_clarification(&check_completeness(&raw, both())).unwrap().elements.len(), 1);
        assert!(matches!(
            build_clarification(&check_completeness(&raw_full(), both())),
            Err(RequirementsError::NothingMissing)
        ));
    }

    #[test]
    fn merging_answers() {
        let mut raw = raw_full();
        raw.set(Element::SpatialExtent, None);
        let answers = BTreeMap::from([("spatial_extent".to_string(), "Henan Province".to_string())]);
        let merged = merge_answers(&raw, &answers).unwrap();
        assert_eq!(merged.get(Element::SpatialExtent), Some("Henan Province"));
        assert_eq!(merged.get(Element::Platform), raw.get(Element::Platform));

        let bogus = BTreeMap::from([("bogus_field".to_string(), "x".to_string())]);
        assert!(matches!(merge_answers(&raw, &bogus), Err(RequirementsError::UnknownElement(_))));
        let empty = BTreeMap::from([("output_format".to_string(), "".to_string())]);
        assert!(matches!(
            merge_answers(&raw, &empty),
            Err(RequirementsError::EmptyAnswer(Element::OutputFormat))
        ));
    }

    #[test]
    fn finalize_stores_document() {
        let mut pool = InfoPool::new(Arc::new(FixedClock::epoch_2025()));
        let backend = ScriptedBackend::new(vec![]);
        let doc = finalize(&raw_full(), both(), &backend, &mut pool, &Default::default()).unwrap();
        assert_eq!(doc.temporal_extent.as_deref(), Some("Year 2021"));
        assert_eq!(pool.requirements().unwrap(), doc);
        assert!(doc.violations().is_empty());
    }

    #[test]
    fn finalize_rejects_incomplete() {
        let mut pool = InfoPool::new(Arc::new(FixedClock::epoch_2025()));
        let mut raw = raw_full();
        raw.set(Element::OutputFormat, None);
        let err = finalize(&raw, both(), &ScriptedBackend::default(), &mut pool, &Default::default()).unwrap_err();
        assert!(matches!(err, RequirementsError::IncompleteRequirements(ref m) if m == &[Element::OutputFormat]));
        assert!(pool.is_empty());
    }

    #[test]
    fn finalize_infers_missing_methodology() {
        let mut pool = InfoPool::new(Arc::new(FixedClock::epoch_2025()));
        let mut raw = raw_full();
        raw.set(Element::AnalysisMethodology, None);
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(
            StageTag::RequirementAnalysis,
            "Analysis_Goal",
            "NDVI calculation",
        )]);
        let doc = finalize(&raw, both(), &backend, &mut pool, &Default::default()).unwrap();
        assert_eq!(doc.analysis_methodology, "NDVI calculation");
        assert!(doc.methodology_inferred);
        let stored = pool.get(ArtifactKind::RequirementsDoc).unwrap();
        assert_eq!(
            stored.payload.as_document().unwrap()["provenance"]["Analysis_Methodology"],
            "inferred"
        );
    }

    #[test]
    fn finalize_drops_unneeded_conditionals() {
        let mut pool = InfoPool::new(Arc::new(FixedClock::epoch_2025()));
        let flags = ConditionalFlags { spatial_needed: true, temporal_needed: false };
        let doc = finalize(&raw_full(), flags, &ScriptedBackend::default(), &mut pool, &Default::default()).unwrap();
        assert_eq!(doc.temporal_extent, None);
        assert!(!doc.to_value()["requirements"].as_object().unwrap().contains_key("Temporal_Extent"));
    }

    #[test]
    fn document_wire_shape() {
        let doc = RequirementsDocument::from_value(&serde_json::json!({
            "document_type": "User Requirements Document",
            "requirements": {
                "Platform": "Google Earth Engine (GEE)",
                "Programming_Language": "Python",
                "Analysis_Goal": "Assess vegetation coverage in designated areas",
                "Spatial_Extent": "Latitude 34.8522 to 36.7783, Longitude -118.2437 to -119.4179",
                "Temporal_Extent": "2020-01-01 to 2020-12-31",
                "Data_Source_and_Format": "Satellite Imagery in GeoTIFF format",
                "Analysis_Methodology": "Normalized Difference Vegetation Index (NDVI) calculation",
                "Output_Format": "Map image with NDVI overlay and Mean NDVI value, range, and histogram"
            }
        }))
        .unwrap();
        assert_eq!(RequirementsDocument::from_value(&doc.to_value()).unwrap(), doc);
        let missing = serde_json::json!({"document_type": DOCUMENT_TYPE, "requirements": {"Platform": "x"}});
        let err = RequirementsDocument::from_value(&missing).unwrap_err();
        assert!(err.violations().iter().any(|v| v.starts_with("Output_Format")));
    }

    #[test]
    fn extraction_reads_draft() {
        let reply = r#"```json
{"document_type": "User Requirements Document", "requirements": {"Platform": "", "Programming_Language": null}}
```"#;
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(StageTag::RequirementAnalysis, "help me code", reply)]);
        let raw = extract_elements("help me code", &backend, &Default::default()).unwrap();
        assert_eq!(raw, RawElements::default());
        assert!(matches!(
            extract_elements("  ", &backend, &Default::default()),
            Err(RequirementsError::EmptyInput)
        ));
    }
}
