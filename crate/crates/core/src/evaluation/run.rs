use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    match_counts, mean_readability, score_accuracy, score_executability, EvalError, EvalTask, MetricReport,
    Percent, ReadabilityScores, Verdict, VerdictScript, VerdictSource,
};
use crate::config::{AblationConfig, PipelineConfig};
use crate::engine::Engine;
use crate::llm::ChatBackend;
use crate::requirements::Element;
use crate::session::{Phase, Session};

/// Supplies a fresh backend per pipeline run.
pub trait BackendFactory: Sync {
    fn backend_for(&self, task: &EvalTask, config: &PipelineConfig) -> Arc<dyn ChatBackend>;
}

impl<F> BackendFactory for F
where
    F: Fn(&EvalTask, &PipelineConfig) -> Arc<dyn ChatBackend> + Sync,
{
    fn backend_for(&self, task: &EvalTask, config: &PipelineConfig) -> Arc<dyn ChatBackend> {
        self(task, config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub ablation: AblationConfig,
    pub phase: Phase,
    pub matched: u32,
    pub applicable: u32,
    pub verdict: Verdict,
    /// Last code revision the user ran, if any code was produced.
    pub final_revision: Option<u32>,
    pub exhausted: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub session: Option<Session>,
}

fn not_executable(task_id: &str) -> Verdict {
    Verdict { task_id: task_id.to_string(), executable: false, correct: false, source: VerdictSource::Simulated }
}

/// Runs one task end to end, answering clarifications from the gold
/// document and debug rounds from the verdict script. Never panics on
/// pipeline failure; the error is recorded in the outcome.
pub fn run_task(engine: &Engine, task: &EvalTask, config: &PipelineConfig, script: &VerdictScript) -> TaskOutcome {
    let applicable = Element::ALL.iter().filter(|e| task.gold.get(**e).is_some()).count() as u32;
    let mut outcome = TaskOutcome {
        task_id: task.id.clone(),
        ablation: config.ablation,
        phase: Phase::Failed,
        matched: 0,
        applicable,
        verdict: not_executable(&task.id),
        final_revision: None,
        exhausted: false,
        error: None,
        session: None,
    };
    let mut session = match Session::create(task.id.clone(), &task.requirement_text, config.clone(), engine) {
        Ok(s) => s,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };

    let mut step_error = None;
    while session.phase() == Phase::Clarifying {
        let Some(clar) = session.clarification() else { break };
        let answers: BTreeMap<String, String> = clar
            .request
            .elements
            .iter()
            .map(|e| (e.name().to_string(), task.gold.get(*e).unwrap_or("Not applicable").to_string()))
            .collect();
        if let Err(e) = session.post_answers(&answers, engine) {
            step_error = Some(e.to_string());
            break;
        }
    }
    while step_error.is_none() && session.phase() == Phase::AwaitingFeedback {
        let Some((revision, _)) = session.pool().latest_code() else { break };
        if let Err(e) = session.post_feedback(&script.feedback(revision), engine) {
            step_error = Some(e.to_string());
        }
    }

    if let Some(doc) = session.pool().requirements() {
        outcome.matched = match_counts(&doc, &task.gold, Some(&task.aliases())).0;
    }
    if let Some((revision, _)) = session.pool().latest_code() {
        outcome.final_revision = Some(revision);
        outcome.verdict = script.verdict(revision);
    }
    outcome.phase = session.phase();
    outcome.exhausted = session.debug_session().is_some_and(|d| d.exhausted);
    outcome.error = step_error.or_else(|| session.error().map(str::to_owned));
    outcome.session = Some(session);
    outcome
}

/// Corpus-level metrics over a set of outcomes.
pub fn aggregate(outcomes: &[TaskOutcome], readability: Option<&ReadabilityScores>) -> Result<MetricReport, EvalError> {
    let verdicts: Vec<Verdict> = outcomes.iter().map(|o| o.verdict.clone()).collect();
    let (matched, applicable) =
        outcomes.iter().fold((0u64, 0u64), |(m, a), o| (m + u64::from(o.matched), a + u64::from(o.applicable)));
    let matchability = if applicable == 0 { Percent::FULL } else { Percent::ratio(matched, applicable) };
    let readability =
        readability.and_then(|r| mean_readability(outcomes.iter().filter_map(|o| r.get(&o.task_id))));
    Ok(MetricReport {
        matchability,
        executability: score_executability(&verdicts)?,
        accuracy: score_accuracy(&verdicts)?,
        readability,
    })
}

fn script_for<'a>(
    scripts: &'a BTreeMap<String, VerdictScript>,
    task: &EvalTask,
    fallback: &'a mut Option<VerdictScript>,
) -> &'a VerdictScript {
    match scripts.get(&task.id) {
        Some(s) => s,
        None => fallback.insert(VerdictScript::never(task.id.clone())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub report: MetricReport,
    pub outcomes: Vec<TaskOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, pool: bool, retrieval: bool, feedback: bool) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| (r.config.pool, r.config.retrieval, r.config.feedback) == (pool, retrieval, feedback))
    }

    pub fn cells(&self) -> usize {
        self.rows.iter().map(|r| r.outcomes.len()).sum()
    }
}

/// One pipeline run per (task, config). Tasks without a verdict script are
/// treated as never passing.
pub fn run_ablation(
    tasks: &[EvalTask],
    configs: &[AblationConfig],
    engine: &Engine,
    backends: &dyn BackendFactory,
    scripts: &BTreeMap<String, VerdictScript>,
    readability: Option<&ReadabilityScores>,
) -> Result<AblationTable, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyVerdicts);
    }
    let mut rows = Vec::with_capacity(configs.len());
    for ablation in configs {
        let config = PipelineConfig::with_ablation(*ablation);
        let outcomes: Vec<TaskOutcome> = tasks
            .iter()
            .map(|task| {
                let mut fallback = None;
                let script = script_for(scripts, task, &mut fallback);
                let engine = engine.with_backend(backends.backend_for(task, &config));
                run_task(&engine, task, &config, script)
            })
            .collect();
        let report = aggregate(&outcomes, readability)?;
        rows.push(AblationRow { config: *ablation, report, outcomes });
    }
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: u32,
    pub label: String,
    pub executability: Percent,
    pub accuracy: Percent,
    pub outcomes: Vec<TaskOutcome>,
}

impl SweepRow {
    /// Task id to whether it ended executable and correct.
    pub fn successes(&self) -> BTreeMap<String, bool> {
        self.outcomes.iter().map(|o| (o.task_id.clone(), o.verdict.correct)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Full pipeline with the debug cap set to each k in turn.
pub fn run_debug_sweep(
    tasks: &[EvalTask],
    ks: &[u32],
    engine: &Engine,
    backends: &dyn BackendFactory,
    scripts: &BTreeMap<String, VerdictScript>,
) -> Result<SweepTable, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyVerdicts);
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let config = PipelineConfig::with_ablation(AblationConfig { max_debug_iterations: k, ..Default::default() });
        let outcomes: Vec<TaskOutcome> = tasks
            .iter()
            .map(|task| {
                let mut fallback = None;
                let script = script_for(scripts, task, &mut fallback);
                let engine = engine.with_backend(backends.backend_for(task, &config));
                run_task(&engine, task, &config, script)
            })
            .collect();
        let report = aggregate(&outcomes, None)?;
        rows.push(SweepRow {
            k,
            label: format!("Debugging@{k}"),
            executability: report.executability,
            accuracy: report.accuracy,
            outcomes,
        });
    }
    Ok(SweepTable { rows })
}
