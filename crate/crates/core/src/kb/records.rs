use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::KbKind;

/// Platform / toolkit knowledge-base record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformRecord {
    #[serde(rename = "Platform_id")]
    pub platform_id: String,
    #[serde(rename = "Name")]
    pub name: String,
    #[serde(rename = "Description")]
    pub description: String,
    #[serde(rename = "Platform_type")]
    pub platform_type: String,
    #[serde(rename = "Task_suitability")]
    pub task_suitability: String,
    #[serde(rename = "Data_source_interfaces")]
    pub data_source_interfaces: String,
    #[serde(rename = "Access_permissions")]
    pub access_permissions: String,
    #[serde(rename = "Technical_support")]
    pub technical_support: String,
    #[serde(rename = "Cross_platform_compatibility")]
    pub cross_platform_compatibility: String,
}

/// Function-syntax knowledge-base record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    #[serde(rename = "Operator_id")]
    pub operator_id: String,
    #[serde(rename = "Full_name")]
    pub full_name: String,
    #[serde(rename = "Short_name")]
    pub short_name: String,
    #[serde(rename = "Library_name")]
    pub library_name: String,
    #[serde(rename = "Language")]
    pub language: String,
    #[serde(rename = "Platform")]
    pub platform: String,
    #[serde(rename = "Description")]
    pub description: String,
    #[serde(rename = "Usage")]
    pub usage: String,
    #[serde(rename = "Parameters")]
    pub parameters: String,
    #[serde(rename = "Output_type")]
    pub output_type: String,
}

/// Built-in dataset knowledge-base record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    #[serde(rename = "Dataset_id")]
    pub dataset_id: String,
    #[serde(rename = "Name")]
    pub name: String,
    #[serde(rename = "Provider")]
    pub provider: String,
    /// Code-level access path, e.g. `ee.ImageCollection("MODIS/061/MOD13Q1")`.
    #[serde(rename = "Snippet")]
    pub snippet: String,
    #[serde(rename = "Tags")]
    pub tags: Vec<String>,
    #[serde(rename = "Description")]
    pub description: String,
    #[serde(rename = "DOI")]
    pub doi: String,
    #[serde(rename = "Website")]
    pub website: String,
    /// Hosting platform; optional, used only for filtering.
    #[serde(rename = "Platform", default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FieldType {
    Text,
    /// Must be present and non-blank.
    NonEmptyText,
    TextList,
}

/// Mandatory fields per kind, in file order.
pub(crate) fn required_fields(kind: KbKind) -> &'static [(&'static str, FieldType)] {
    use FieldType::*;
    match kind {
        KbKind::Platform => &[
            ("Platform_id", NonEmptyText),
            ("Name", NonEmptyText),
            ("Description", Text),
            ("Platform_type", Text),
            ("Task_suitability", Text),
            ("Data_source_interfaces", Text),
            ("Access_permissions", Text),
            ("Technical_support", Text),
            ("Cross_platform_compatibility", Text),
        ],
        KbKind::Function => &[
            ("Operator_id", NonEmptyText),
            ("Full_name", NonEmptyText),
            ("Short_name", NonEmptyText),
            ("Library_name", Text),
            ("Language", NonEmptyText),
            ("Platform", NonEmptyText),
            ("Description", Text),
            ("Usage", Text),
            ("Parameters", Text),
            ("Output_type", Text),
        ],
        KbKind::Dataset => &[
            ("Dataset_id", NonEmptyText),
            ("Name", Text),
            ("Provider", Text),
            ("Snippet", NonEmptyText),
            ("Tags", TextList),
            ("Description", Text),
            ("DOI", Text),
            ("Website", Text),
        ],
    }
}

/// Problems with one record's fields as (field, problem) pairs.
pub(crate) fn field_problems(kind: KbKind, record: &Value) -> Vec<(&'static str, &'static str)> {
    let Some(obj) = record.as_object() else {
        return vec![("<record>", "not a JSON object")];
    };
    let mut out = Vec::new();
    for &(name, ty) in required_fields(kind) {
        let problem = match (obj.get(name), ty) {
            (None, _) => Some("missing"),
            (Some(Value::String(s)), FieldType::NonEmptyText) if s.trim().is_empty() => Some("empty"),
            (Some(Value::String(_)), FieldType::Text | FieldType::NonEmptyText) => None,
            (Some(Value::Array(items)), FieldType::TextList) => {
                (!items.iter().all(Value::is_string)).then_some("expected a list of strings")
            }
            (Some(_), FieldType::TextList) => Some("expected a list of strings"),
            (Some(_), _) => Some("expected a string"),
        };
        if let Some(p) = problem {
            out.push((name, p));
        }
    }
    if kind == KbKind::Dataset {
        if let Some(p) = obj.get("Platform") {
            if !(p.is_string() || p.is_null()) {
                out.push(("Platform", "expected a string"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KbRecord {
    Platform(PlatformRecord),
    Function(FunctionRecord),
    Dataset(DatasetRecord),
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl KbRecord {
    pub fn id(&self) -> &str {
        match self {
            KbRecord::Platform(r) => &r.platform_id,
            KbRecord::Function(r) => &r.operator_id,
            KbRecord::Dataset(r) => &r.dataset_id,
        }
    }

    pub fn kind(&self) -> KbKind {
        match self {
            KbRecord::Platform(_) => KbKind::Platform,
            KbRecord::Function(_) => KbKind::Function,
            KbRecord::Dataset(_) => KbKind::Dataset,
        }
    }

    /// The record in its on-disk JSON shape.
    pub fn to_value(&self) -> Value {
        let v = match self {
            KbRecord::Platform(r) => serde_json::to_value(r),
            KbRecord::Function(r) => serde_json::to_value(r),
            KbRecord::Dataset(r) => serde_json::to_value(r),
        };
        v.expect("records serialize")
    }

    /// Text that gets tokenized into the index.
    pub fn index_text(&self) -> String {
        match self {
            KbRecord::Platform(r) => format!("{} {}", r.name, r.description),
            KbRecord::Function(r) => {
                format!("{} {} {} {}", r.short_name, r.full_name, r.description, r.usage)
            }
            KbRecord::Dataset(r) => format!("{} {} {}", r.name, r.description, r.tags.join(" ")),
        }
    }

    pub fn platform(&self) -> Option<&str> {
        match self {
            KbRecord::Platform(_) => None,
            KbRecord::Function(r) => Some(&r.platform),
            KbRecord::Dataset(r) => r.platform.as_deref(),
        }
    }

    pub fn language(&self) -> Option<&str> {
        match self {
            KbRecord::Function(r) => Some(&r.language),
            _ => None,
        }
    }

    /// Single-line labelled block injected into the implementation prompt.
    pub fn render_snippet(&self) -> String {
        match self {
            KbRecord::Function(r) => format!(
                "{} FUNCTION {} | platform={} | usage: {}",
                super::KB_SNIPPET_MARKER,
                one_line(&r.full_name),
                one_line(&r.platform),
                one_line(&r.usage)
            ),
            KbRecord::Dataset(r) => format!(
                "{} DATASET {} | provider={} | snippet: {}",
                super::KB_SNIPPET_MARKER,
                one_line(&r.name),
                one_line(&r.provider),
                one_line(&r.snippet)
            ),
            KbRecord::Platform(r) => format!(
                "{} PLATFORM {} | type={} | {}",
                super::KB_SNIPPET_MARKER,
                one_line(&r.name),
                one_line(&r.platform_type),
                one_line(&r.description)
            ),
        }
    }
}
