//! Measurement harness: the task corpus, the four metrics, mechanism
//! ablations and debug-iteration sweeps.

mod report;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::requirements::{Element, RequirementsDocument};

pub use report::{
    ablation_csv, ablation_json, comparison_text, emit_report, sweep_csv, sweep_json, ReportFormat, ReportTable,
};
pub use run::{
    aggregate, run_ablation, run_debug_sweep, run_task, AblationRow, AblationTable, BackendFactory, SweepRow, SweepTable,
    TaskOutcome,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no verdicts to score")]
    EmptyVerdicts,
    #[error("score out of range: {0}")]
    OutOfRange(String),
    #[error("invalid verdict for {task_id}: correct but not executable")]
    InvalidVerdict { task_id: String },
    #[error("invalid corpus: {0}")]
    Corpus(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EvalError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: p.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| EvalError::Parse { path: p, source })
}

/// A percentage held as integer tenths, so one-decimal output is exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(u32);

impl Percent {
    pub const ZERO: Percent = Percent(0);
    pub const FULL: Percent = Percent(1000);

    /// 100 × num / den, rounded half-up to one decimal. `den` must be > 0.
    pub fn ratio(num: u64, den: u64) -> Percent {
        assert!(den > 0, "percentage of an empty denominator");
        Percent(((2000 * num + den) / (2 * den)) as u32)
    }

    pub fn from_tenths(tenths: u32) -> Percent {
        Percent(tenths)
    }

    pub fn tenths(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !(0.0..=100.0).contains(&v) {
            return Err(serde::de::Error::custom(format!("percentage {v} outside [0, 100]")));
        }
        Ok(Percent((v * 10.0).round() as u32))
    }
}

pub const PRIMARY_CATEGORIES: [&str; 3] =
    ["Data Preparation and Preprocessing", "Data Analysis", "Data Output and Visualization"];

pub const SECONDARY_CATEGORIES: [&str; 8] = [
    "Geometry and Area Definition & Data Extraction",
    "Image and Raster Data Processing",
    "Spatiotemporal Analysis & Data Aggregation",
    "Vegetation Indices & Environmental Metrics Calculation",
    "Land Cover and Classification",
    "Hydrology and Meteorology Analysis",
    "Data Export and Format Conversion",
    "Visualization and Chart Generation",
];

/// Primary category a secondary category belongs to.
pub fn primary_of(secondary: u8) -> Option<u8> {
    match secondary {
        1..=3 => Some(1),
        4..=6 => Some(2),
        7..=8 => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub id: String,
    pub primary_category: u8,
    pub secondary_category: u8,
    pub requirement_text: String,
    pub gold: RequirementsDocument,
    /// Element key to acceptable equivalent strings.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alias_sets: BTreeMap<String, Vec<String>>,
}

impl EvalTask {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Corpus(format!("{}: {m}", self.id)));
        if self.id.trim().is_empty() {
            return Err(EvalError::Corpus("task with empty id".into()));
        }
        match primary_of(self.secondary_category) {
            None => return bad(format!("secondary_category {} not in 1..8", self.secondary_category)),
            Some(p) if p != self.primary_category => {
                return bad(format!(
                    "secondary_category {} belongs to primary {p}, not {}",
                    self.secondary_category, self.primary_category
                ))
            }
            _ => {}
        }
        if self.requirement_text.trim().is_empty() {
            return bad("empty requirement_text".into());
        }
        for key in self.alias_sets.keys() {
            if key.parse::<Element>().is_err() {
                return bad(format!("alias_sets: unknown element {key:?}"));
            }
        }
        Ok(())
    }

    pub fn secondary_name(&self) -> &'static str {
        SECONDARY_CATEGORIES.get(usize::from(self.secondary_category).wrapping_sub(1)).copied().unwrap_or("?")
    }

    pub fn aliases(&self) -> BTreeMap<Element, Vec<String>> {
        self.alias_sets
            .iter()
            .filter_map(|(k, v)| Some((k.parse::<Element>().ok()?, v.clone())))
            .collect()
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<EvalTask>, EvalError> {
    let tasks: Vec<EvalTask> =
        serde_json::from_str(text).map_err(|source| EvalError::Parse { path: "<corpus>".into(), source })?;
    check_corpus(&tasks)?;
    Ok(tasks)
}

pub fn load_corpus(path: &Path) -> Result<Vec<EvalTask>, EvalError> {
    let tasks: Vec<EvalTask> = read_json(path)?;
    check_corpus(&tasks)?;
    Ok(tasks)
}

fn check_corpus(tasks: &[EvalTask]) -> Result<(), EvalError> {
    let mut seen = std::collections::BTreeSet::new();
    for t in tasks {
        t.validate()?;
        if !seen.insert(t.id.as_str()) {
            return Err(EvalError::Corpus(format!("duplicate task id {:?}", t.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    External,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: String,
    pub executable: bool,
    pub correct: bool,
    pub source: VerdictSource,
}

impl Verdict {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.correct && !self.executable {
            return Err(EvalError::InvalidVerdict { task_id: self.task_id.clone() });
        }
        Ok(())
    }
}

pub fn load_verdicts(path: &Path) -> Result<Vec<Verdict>, EvalError> {
    let verdicts: Vec<Verdict> = read_json(path)?;
    verdicts.iter().try_for_each(Verdict::validate)?;
    Ok(verdicts)
}

/// Five expert ratings on a 1..10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExpertScores([u8; 5]);

impl ExpertScores {
    pub fn new(scores: [u8; 5]) -> Result<Self, EvalError> {
        if let Some(s) = scores.iter().find(|s| !(1..=10).contains(*s)) {
            return Err(EvalError::OutOfRange(format!("expert score {s} not in 1..10")));
        }
        Ok(Self(scores))
    }

    pub fn values(&self) -> [u8; 5] {
        self.0
    }

    /// Sum after dropping one highest and one lowest score.
    pub fn trimmed_sum(&self) -> u32 {
        let total: u32 = self.0.iter().map(|&s| u32::from(s)).sum();
        let max = *self.0.iter().max().expect("five scores");
        let min = *self.0.iter().min().expect("five scores");
        total - u32::from(max) - u32::from(min)
    }
}

impl<'de> Deserialize<'de> for ExpertScores {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(d)?;
        let arr: [i64; 5] = v
            .try_into()
            .map_err(|v: Vec<i64>| serde::de::Error::custom(format!("expected 5 scores, got {}", v.len())))?;
        let mut out = [0u8; 5];
        for (o, s) in out.iter_mut().zip(arr) {
            *o = u8::try_from(s).map_err(|_| serde::de::Error::custom(format!("expert score {s} not in 1..10")))?;
        }
        ExpertScores::new(out).map_err(serde::de::Error::custom)
    }
}

pub type ReadabilityScores = BTreeMap<String, ExpertScores>;

pub fn load_readability(path: &Path) -> Result<ReadabilityScores, EvalError> {
    read_json(path)
}

/// Case-folded, trimmed, internal whitespace collapsed, trailing punctuation
/// removed.
pub fn normalize_entity(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches(|c: char| ".,;:!?".contains(c) || c.is_whitespace()).to_string()
}

/// (matched, applicable) element counts against the gold document.
pub fn match_counts(
    pred: &RequirementsDocument,
    gold: &RequirementsDocument,
    aliases: Option<&BTreeMap<Element, Vec<String>>>,
) -> (u32, u32) {
    let mut matched = 0;
    let mut applicable = 0;
    for e in Element::ALL {
        let Some(g) = gold.get(e) else { continue };
        applicable += 1;
        let Some(p) = pred.get(e) else { continue };
        let p = normalize_entity(p);
        let alias_hit = aliases
            .and_then(|a| a.get(&e))
            .is_some_and(|list| list.iter().any(|a| normalize_entity(a) == p));
        if p == normalize_entity(g) || alias_hit {
            matched += 1;
        }
    }
    (matched, applicable)
}

pub fn score_matchability(
    pred: &RequirementsDocument,
    gold: &RequirementsDocument,
    aliases: Option<&BTreeMap<Element, Vec<String>>>,
) -> Percent {
    let (matched, applicable) = match_counts(pred, gold, aliases);
    if applicable == 0 {
        return Percent::FULL;
    }
    Percent::ratio(u64::from(matched), u64::from(applicable))
}

pub fn score_executability(verdicts: &[Verdict]) -> Result<Percent, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyVerdicts);
    }
    let n = verdicts.iter().filter(|v| v.executable).count();
    Ok(Percent::ratio(n as u64, verdicts.len() as u64))
}

/// Correct over all verdicts; a non-executable program counts as incorrect.
pub fn score_accuracy(verdicts: &[Verdict]) -> Result<Percent, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyVerdicts);
    }
    let n = verdicts.iter().filter(|v| v.executable && v.correct).count();
    Ok(Percent::ratio(n as u64, verdicts.len() as u64))
}

pub fn score_readability(scores: &ExpertScores) -> Percent {
    Percent::ratio(u64::from(scores.trimmed_sum()), 30)
}

/// Trimmed mean over several tasks' panels, ×10.
pub fn mean_readability<'a>(panels: impl IntoIterator<Item = &'a ExpertScores>) -> Option<Percent> {
    let (sum, n) = panels.into_iter().fold((0u64, 0u64), |(s, n), p| (s + u64::from(p.trimmed_sum()), n + 1));
    (n > 0).then(|| Percent::ratio(sum, 30 * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricReport {
    pub matchability: Percent,
    pub executability: Percent,
    pub accuracy: Percent,
    /// Absent when no expert panel was supplied.
    pub readability: Option<Percent>,
}

/// Signed differences in tenths of a percentage point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub matchability: i64,
    pub executability: i64,
    pub accuracy: i64,
    pub readability: Option<i64>,
}

impl MetricReport {
    pub fn delta_from(&self, baseline: &MetricReport) -> MetricDelta {
        let d = |a: Percent, b: Percent| i64::from(a.tenths()) - i64::from(b.tenths());
        MetricDelta {
            matchability: d(self.matchability, baseline.matchability),
            executability: d(self.executability, baseline.executability),
            accuracy: d(self.accuracy, baseline.accuracy),
            readability: match (self.readability, baseline.readability) {
                (Some(a), Some(b)) => Some(d(a, b)),
                _ => None,
            },
        }
    }
}

/// Declared per-task outcome for desk-scale runs: the first code revision
/// that runs and produces the right result, and optionally the first that
/// merely runs. `None` means never.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictScript {
    pub task_id: String,
    pub first_passing_revision: Option<u32>,
    #[serde(default)]
    pub executable_from: Option<u32>,
}

impl VerdictScript {
    pub fn passing_at(task_id: impl Into<String>, revision: u32) -> Self {
        Self { task_id: task_id.into(), first_passing_revision: Some(revision), executable_from: None }
    }

    pub fn never(task_id: impl Into<String>) -> Self {
        Self { task_id: task_id.into(), first_passing_revision: None, executable_from: None }
    }

    pub fn is_executable(&self, revision: u32) -> bool {
        self.is_correct(revision) || self.executable_from.is_some_and(|e| e <= revision)
    }

    pub fn is_correct(&self, revision: u32) -> bool {
        self.first_passing_revision.is_some_and(|r| r <= revision)
    }

    pub fn verdict(&self, revision: u32) -> Verdict {
        Verdict {
            task_id: self.task_id.clone(),
            executable: self.is_executable(revision),
            correct: self.is_correct(revision),
            source: VerdictSource::Simulated,
        }
    }

    /// What a user would report after running `revision`.
    pub fn feedback(&self, revision: u32) -> crate::debug::DebugFeedback {
        use crate::debug::DebugFeedback;
        if self.is_correct(revision) {
            DebugFeedback::success()
        } else if self.is_executable(revision) {
            DebugFeedback::wrong_output(format!("{} simulated-wrong-output@rev{revision}.", self.task_id))
        } else {
            DebugFeedback::error(format!("{} simulated-error@rev{revision}.", self.task_id))
        }
    }
}

pub fn load_verdict_scripts(path: &Path) -> Result<Vec<VerdictScript>, EvalError> {
    read_json(path)
}
