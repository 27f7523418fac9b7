//! Knowledge bases: platform/toolkit, function syntax and built-in datasets.
//!
//! Each kind is loaded from a JSON array, validated against its record
//! schema and indexed for BM25 retrieval. Indexes are immutable once built.
//!
//! ```text
//! score(D, Q) = sum over distinct q in Q of
//!     idf(q) * tf(q, D) * (k1 + 1) / (tf(q, D) + k1 * (1 - b + b * |D| / avgdl))
//! idf(q) = ln(1 + (N - df(q) + 0.5) / (df(q) + 0.5))
//! ```

mod records;
mod tokenize;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use records::{DatasetRecord, FunctionRecord, KbRecord, PlatformRecord};
pub use tokenize::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Prefix of every rendered snippet block; its absence from a prompt proves no
/// retrieval output was injected.
pub const KB_SNIPPET_MARKER: &str = "[KB]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbKind {
    Platform,
    Function,
    Dataset,
}

impl KbKind {
    pub const ALL: [KbKind; 3] = [KbKind::Platform, KbKind::Function, KbKind::Dataset];

    pub fn as_str(self) -> &'static str {
        match self {
            KbKind::Platform => "platform",
            KbKind::Function => "function",
            KbKind::Dataset => "dataset",
        }
    }

    /// Conventional file name inside a knowledge-base directory.
    pub fn file_name(self) -> &'static str {
        match self {
            KbKind::Platform => "platforms.json",
            KbKind::Function => "functions.json",
            KbKind::Dataset => "datasets.json",
        }
    }
}

impl fmt::Display for KbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KbKind {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "platform" | "platforms" | "toolkit" => Ok(KbKind::Platform),
            "function" | "functions" => Ok(KbKind::Function),
            "dataset" | "datasets" => Ok(KbKind::Dataset),
            other => Err(KbError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordViolation {
    pub index: usize,
    pub field: String,
    pub problem: String,
}

impl fmt::Display for RecordViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: field {} {}", self.index, self.field, self.problem)
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("knowledge base is not a JSON array of records: {0}")]
    Parse(String),
    #[error("schema violation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    SchemaViolation(Vec<RecordViolation>),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("unknown knowledge-base kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFilters {
    pub platform: Option<String>,
    pub language: Option<String>,
}

impl SearchFilters {
    pub fn none() -> Self {
        Self::default()
    }

    fn admits(&self, record: &KbRecord) -> bool {
        fn eq(filter: &Option<String>, field: Option<&str>) -> bool {
            match (filter, field) {
                (None, _) => true,
                (Some(_), None) => true,
                (Some(want), Some(have)) => want.trim().to_lowercase() == have.trim().to_lowercase(),
            }
        }
        eq(&self.platform, record.platform()) && eq(&self.language, record.language())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub record_id: String,
    pub score: f64,
    pub kb_kind: KbKind,
    pub snippet: String,
}

#[derive(Debug, Clone)]
pub struct KbIndex {
    kind: KbKind,
    records: Vec<KbRecord>,
    by_id: HashMap<String, usize>,
    /// term -> (record position, term frequency), ascending by position.
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

impl KbIndex {
    pub fn load(path: &Path, kind: KbKind) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path).map_err(|source| KbError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text, kind)
    }

    pub fn from_json(text: &str, kind: KbKind) -> Result<Self, KbError> {
        let value: Value = serde_json::from_str(text).map_err(|e| KbError::Parse(e.to_string()))?;
        let Value::Array(items) = value else {
            return Err(KbError::Parse("top-level value is not an array".into()));
        };
        Self::from_values(&items, kind)
    }

    pub fn from_values(items: &[Value], kind: KbKind) -> Result<Self, KbError> {
        let violations: Vec<RecordViolation> = items
            .iter()
            .enumerate()
            .flat_map(|(index, item)| {
                records::field_problems(kind, item).into_iter().map(move |(field, problem)| RecordViolation {
                    index,
                    field: field.to_string(),
                    problem: problem.to_string(),
                })
            })
            .collect();
        if !violations.is_empty() {
            return Err(KbError::SchemaViolation(violations));
        }
        let records = items
            .iter()
            .map(|item| {
                let r = match kind {
                    KbKind::Platform => serde_json::from_value(item.clone()).map(KbRecord::Platform),
                    KbKind::Function => serde_json::from_value(item.clone()).map(KbRecord::Function),
                    KbKind::Dataset => serde_json::from_value(item.clone()).map(KbRecord::Dataset),
                };
                r.map_err(|e| KbError::Parse(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_records(kind, records)
    }

    pub fn from_records(kind: KbKind, records: Vec<KbRecord>) -> Result<Self, KbError> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(records.len());
        for (pos, record) in records.iter().enumerate() {
            if by_id.insert(record.id().to_string(), pos).is_some() {
                return Err(KbError::DuplicateId(record.id().to_string()));
            }
            let tokens = tokenize(&record.index_text());
            doc_lengths.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((pos, count));
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if records.is_empty() { 0.0 } else { total as f64 / records.len() as f64 };
        Ok(Self { kind, records, by_id, postings, doc_lengths, avg_doc_length })
    }

    pub fn kind(&self) -> KbKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[KbRecord] {
        &self.records
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn get_by_id(&self, id: &str) -> Option<&KbRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.records.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-`k` BM25 hits among records admitted by `filters`, ordered by
    /// score descending then record id ascending.
    pub fn search(&self, query: &str, filters: &SearchFilters, k: usize) -> Vec<RetrievalHit> {
        if k == 0 {
            return Vec::new();
        }
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(list.len());
            for &(pos, tf) in list {
                let tf = tf as f64;
                let norm = 1.0 - BM25_B + BM25_B * self.doc_lengths[pos] as f64 / self.avg_doc_length;
                *scores.entry(pos).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            }
        }
        let mut hits: Vec<(usize, f64)> = scores
            .into_iter()
            .filter(|&(pos, _)| filters.admits(&self.records[pos]))
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.records[a.0].id().cmp(self.records[b.0].id()))
        });
        hits.truncate(k);
        hits.into_iter()
            .map(|(pos, score)| {
                let r = &self.records[pos];
                RetrievalHit {
                    record_id: r.id().to_string(),
                    score,
                    kb_kind: self.kind,
                    snippet: r.render_snippet(),
                }
            })
            .collect()
    }
}

/// The three indexes; any may be absent.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBases {
    pub platform: Option<KbIndex>,
    pub function: Option<KbIndex>,
    pub dataset: Option<KbIndex>,
}

impl KnowledgeBases {
    pub fn get(&self, kind: KbKind) -> Option<&KbIndex> {
        match kind {
            KbKind::Platform => self.platform.as_ref(),
            KbKind::Function => self.function.as_ref(),
            KbKind::Dataset => self.dataset.as_ref(),
        }
    }

    pub fn insert(&mut self, index: KbIndex) {
        match index.kind() {
            KbKind::Platform => self.platform = Some(index),
            KbKind::Function => self.function = Some(index),
            KbKind::Dataset => self.dataset = Some(index),
        }
    }

    /// Loads whichever of `platforms.json`, `functions.json`, `datasets.json`
    /// exist in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, KbError> {
        let mut kbs = KnowledgeBases::default();
        for kind in KbKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                kbs.insert(KbIndex::load(&path, kind)?);
            }
        }
        Ok(kbs)
    }
}
