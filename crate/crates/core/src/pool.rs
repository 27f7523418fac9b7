//! Shared information pool: the short-term memory one code-generation task
//! threads through its stages. Holds one current artifact per kind, plus the
//! full revision history for code drafts. Cleared between tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::{Clock, Timestamp};
use crate::design::{self, AlgorithmDesignDocument};
use crate::requirements::RequirementsDocument;

/// Declaration order is the snapshot order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArtifactKind {
    RequirementsDoc,
    AlgorithmDesign,
    CodeDraft,
    DebugTranscript,
    AnnotatedCode,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::RequirementsDoc,
        ArtifactKind::AlgorithmDesign,
        ArtifactKind::CodeDraft,
        ArtifactKind::DebugTranscript,
        ArtifactKind::AnnotatedCode,
    ];

    fn expects_text(self) -> bool {
        matches!(self, ArtifactKind::CodeDraft | ArtifactKind::AnnotatedCode)
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Document(Value),
    Text(String),
}

impl Payload {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(t) => Some(t),
            Payload::Document(_) => None,
        }
    }

    pub fn as_document(&self) -> Option<&Value> {
        match self {
            Payload::Document(v) => Some(v),
            Payload::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub kind: ArtifactKind,
    pub payload: Payload,
    pub revision: u32,
    pub created_at: Timestamp,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("{kind} payload violates its schema: {}", violations.join("; "))]
    SchemaViolation { kind: ArtifactKind, violations: Vec<String> },
    #[error("restored {kind} entry has revision {found}, expected {expected}")]
    RevisionMismatch { kind: ArtifactKind, expected: u32, found: u32 },
}

/// Checks a payload against the schema registered for `kind`.
pub fn schema_violations(kind: ArtifactKind, payload: &Payload) -> Vec<String> {
    match (kind.expects_text(), payload) {
        (true, Payload::Text(t)) => {
            if t.trim().is_empty() {
                vec!["text payload is empty".into()]
            } else {
                vec![]
            }
        }
        (true, Payload::Document(_)) => vec!["expected a text payload".into()],
        (false, Payload::Text(_)) => vec!["expected a structured document".into()],
        (false, Payload::Document(v)) => match kind {
            ArtifactKind::RequirementsDoc => match RequirementsDocument::from_value(v) {
                Ok(_) => vec![],
                Err(e) => e.violations(),
            },
            ArtifactKind::AlgorithmDesign => design::schema_violations(v),
            ArtifactKind::DebugTranscript => match v.get("entries") {
                Some(Value::Array(_)) => vec![],
                _ => vec!["entries: missing or not an array".into()],
            },
            ArtifactKind::CodeDraft | ArtifactKind::AnnotatedCode => unreachable!(),
        },
    }
}

#[derive(Clone)]
pub struct InfoPool {
    clock: Arc<dyn Clock>,
    current: BTreeMap<ArtifactKind, PoolEntry>,
    code_history: Vec<PoolEntry>,
    journal: Vec<PoolEntry>,
}

impl fmt::Debug for InfoPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InfoPool")
            .field("current", &self.current)
            .field("code_history", &self.code_history.len())
            .finish()
    }
}

impl InfoPool {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { clock, current: BTreeMap::new(), code_history: Vec::new(), journal: Vec::new() }
    }

    pub fn put(&mut self, kind: ArtifactKind, payload: Payload) -> Result<PoolEntry, PoolError> {
        let violations = schema_violations(kind, &payload);
        if !violations.is_empty() {
            return Err(PoolError::SchemaViolation { kind, violations });
        }
        let entry = PoolEntry {
            kind,
            payload,
            revision: self.next_revision(kind),
            created_at: self.clock.now(),
        };
        self.insert(entry.clone());
        self.journal.push(entry.clone());
        Ok(entry)
    }

    /// Entries written by `put` since the last drain, in write order.
    /// Restored entries are not journaled.
    pub fn drain_journal(&mut self) -> Vec<PoolEntry> {
        std::mem::take(&mut self.journal)
    }

    /// Re-inserts a previously recorded entry verbatim (event-log replay).
    pub fn restore(&mut self, entry: PoolEntry) -> Result<(), PoolError> {
        let violations = schema_violations(entry.kind, &entry.payload);
        if !violations.is_empty() {
            return Err(PoolError::SchemaViolation { kind: entry.kind, violations });
        }
        let expected = self.next_revision(entry.kind);
        if entry.revision != expected {
            return Err(PoolError::RevisionMismatch { kind: entry.kind, expected, found: entry.revision });
        }
        self.insert(entry);
        Ok(())
    }

    fn next_revision(&self, kind: ArtifactKind) -> u32 {
        if kind == ArtifactKind::CodeDraft {
            self.code_history.len() as u32
        } else {
            0
        }
    }

    fn insert(&mut self, entry: PoolEntry) {
        if entry.kind == ArtifactKind::CodeDraft {
            self.code_history.push(entry.clone());
        }
        self.current.insert(entry.kind, entry);
    }

    pub fn get(&self, kind: ArtifactKind) -> Option<&PoolEntry> {
        self.current.get(&kind)
    }

    pub fn clear(&mut self) {
        self.current.clear();
        self.code_history.clear();
        self.journal.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Current entries in kind order; the code-draft slot expands to its full
    /// revision history, ascending.
    pub fn snapshot(&self) -> Vec<PoolEntry> {
        let mut out = Vec::new();
        for kind in ArtifactKind::ALL {
            if kind == ArtifactKind::CodeDraft {
                out.extend(self.code_history.iter().cloned());
            } else if let Some(e) = self.current.get(&kind) {
                out.push(e.clone());
            }
        }
        out
    }

    pub fn code_history(&self) -> &[PoolEntry] {
        &self.code_history
    }

    pub fn requirements(&self) -> Option<RequirementsDocument> {
        self.get(ArtifactKind::RequirementsDoc)
            .and_then(|e| e.payload.as_document())
            .and_then(|v| RequirementsDocument::from_value(v).ok())
    }

    pub fn design(&self) -> Option<AlgorithmDesignDocument> {
        self.get(ArtifactKind::AlgorithmDesign)
            .and_then(|e| e.payload.as_document())
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    /// Latest code draft as (revision, source).
    pub fn latest_code(&self) -> Option<(u32, &str)> {
        self.get(ArtifactKind::CodeDraft)
            .and_then(|e| e.payload.as_text().map(|t| (e.revision, t)))
    }
}
