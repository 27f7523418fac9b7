//! Python module `pycop`: knowledge-base search, sessions, metrics,
//! annotation checks and replay. Structured values cross the boundary as
//! plain dicts and lists.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use cop_core::annotation::{check_annotation as check, comment_token, AnnotatedCode};
use cop_core::clock::{Clock, FixedClock, SystemClock};
use cop_core::config::PipelineConfig;
use cop_core::debug::DebugFeedback;
use cop_core::design::AlgorithmDesignDocument;
use cop_core::engine::Engine;
use cop_core::evaluation::{self, ExpertScores, Verdict, VerdictSource};
use cop_core::fixtures;
use cop_core::kb::{KbIndex, KbKind, KnowledgeBases, SearchFilters};
use cop_core::llm::{ChatBackend, HttpBackend, HttpConfig, ScriptedBackend};
use cop_core::requirements::RequirementsDocument;
use cop_core::session::{parse_log, Session, SessionError, SessionService, SessionStore};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(pycop, WrongPhaseError, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn session_err(e: SessionError) -> PyErr {
    match e {
        SessionError::UnknownSession(_) => PyKeyError::new_err(e.to_string()),
        SessionError::WrongPhase { .. } => WrongPhaseError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Serializable value to Python objects via the json module.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Python object to a serde value via the json module.
fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn kind(name: &str) -> PyResult<KbKind> {
    name.parse().map_err(value_err)
}

/// One searchable knowledge base.
#[pyclass(module = "pycop")]
struct KnowledgeBase {
    index: KbIndex,
}

#[pymethods]
impl KnowledgeBase {
    /// Loads `path`, or the bundled sample KB of that kind when omitted.
    #[new]
    #[pyo3(signature = (kind_name, path=None))]
    fn new(kind_name: &str, path: Option<&str>) -> PyResult<Self> {
        let k = kind(kind_name)?;
        let index = match path {
            Some(p) => KbIndex::load(Path::new(p), k).map_err(value_err)?,
            None => fixtures::fixture_kbs().get(k).cloned().ok_or_else(|| value_err("no sample KB"))?,
        };
        Ok(Self { index })
    }

    #[staticmethod]
    fn from_json(kind_name: &str, text: &str) -> PyResult<Self> {
        Ok(Self { index: KbIndex::from_json(text, kind(kind_name)?).map_err(value_err)? })
    }

    #[pyo3(signature = (query, platform=None, language=None, k=5))]
    fn search(
        &self,
        py: Python<'_>,
        query: &str,
        platform: Option<String>,
        language: Option<String>,
        k: usize,
    ) -> PyResult<Py<PyAny>> {
        to_py(py, &self.index.search(query, &SearchFilters { platform, language }, k))
    }

    fn __len__(&self) -> usize {
        self.index.len()
    }

    #[getter]
    fn kind(&self) -> String {
        self.index.kind().to_string()
    }
}

/// Session host. Uses a scripted backend when rules are given, otherwise
/// the HTTP backend configured from COP_API_BASE / COP_API_KEY.
#[pyclass(module = "pycop")]
struct Service {
    inner: SessionService,
}

#[pymethods]
impl Service {
    #[new]
    #[pyo3(signature = (script_rules=None, kb_dir=None, sessions_dir=None, seed=None, fixed_clock=false))]
    fn new(
        py: Python<'_>,
        script_rules: Option<&Bound<'_, PyAny>>,
        kb_dir: Option<&str>,
        sessions_dir: Option<&str>,
        seed: Option<u64>,
        fixed_clock: bool,
    ) -> PyResult<Self> {
        let backend: Arc<dyn ChatBackend> = match script_rules {
            Some(rules) => Arc::new(ScriptedBackend::new(from_py(py, rules)?)),
            None => Arc::new(HttpBackend::new(HttpConfig::from_env()).map_err(value_err)?),
        };
        let kbs = match kb_dir {
            Some(d) => KnowledgeBases::load_dir(Path::new(d)).map_err(value_err)?,
            None => fixtures::fixture_kbs(),
        };
        let clock: Arc<dyn Clock> =
            if fixed_clock { Arc::new(FixedClock::epoch_2025()) } else { Arc::new(SystemClock) };
        let mut inner = SessionService::new(Engine::new(backend, Arc::new(kbs), clock), PipelineConfig::default());
        if let Some(seed) = seed {
            inner = inner.with_id_seed(seed);
        }
        if let Some(dir) = sessions_dir {
            inner = inner.with_store(SessionStore::open(dir).map_err(session_err)?).map_err(session_err)?;
        }
        Ok(Self { inner })
    }

    #[pyo3(signature = (requirement_text, config=None))]
    fn create(&self, py: Python<'_>, requirement_text: &str, config: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let config: Option<PipelineConfig> = config.map(|c| from_py(py, c)).transpose()?;
        let text = requirement_text.to_string();
        let view = py.detach(|| self.inner.create(&text, config)).map_err(session_err)?;
        to_py(py, &view)
    }

    fn answer(&self, py: Python<'_>, session_id: &str, answers: BTreeMap<String, String>) -> PyResult<Py<PyAny>> {
        let view = py.detach(|| self.inner.post_answers(session_id, &answers)).map_err(session_err)?;
        to_py(py, &view)
    }

    #[pyo3(signature = (session_id, executable, correct=false, error_text=None, observed_output=None))]
    fn feedback(
        &self,
        py: Python<'_>,
        session_id: &str,
        executable: bool,
        correct: bool,
        error_text: Option<String>,
        observed_output: Option<String>,
    ) -> PyResult<Py<PyAny>> {
        let fb = DebugFeedback { executable, correct, error_text, observed_output };
        let view = py.detach(|| self.inner.post_feedback(session_id, &fb)).map_err(session_err)?;
        to_py(py, &view)
    }

    fn view(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.view(session_id).map_err(session_err)?)
    }

    fn artifacts(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.artifacts(session_id).map_err(session_err)?)
    }

    /// The session's append-only event log as JSON lines.
    fn event_log(&self, session_id: &str) -> PyResult<String> {
        Ok(self.inner.session_snapshot(session_id).map_err(session_err)?.event_log_jsonl())
    }

    #[pyo3(signature = (kind_name, query, platform=None, k=5))]
    fn search_kb(&self, py: Python<'_>, kind_name: &str, query: &str, platform: Option<&str>, k: usize) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.search_kb(kind(kind_name)?, query, platform, k).map_err(session_err)?)
    }
}

/// Rebuilds a session from JSON-lines and returns its artifacts view.
#[pyfunction]
fn replay(py: Python<'_>, jsonl: &str) -> PyResult<Py<PyAny>> {
    let events = parse_log(jsonl).map_err(session_err)?;
    let session = Session::replay(&events, Arc::new(FixedClock::epoch_2025())).map_err(session_err)?;
    to_py(py, &session.artifacts())
}

fn verdicts(pairs: Vec<(bool, bool)>) -> Vec<Verdict> {
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (executable, correct))| Verdict {
            task_id: i.to_string(),
            executable,
            correct,
            source: VerdictSource::External,
        })
        .collect()
}

/// Percentage of executable programs from (executable, correct) pairs.
#[pyfunction]
fn score_executability(pairs: Vec<(bool, bool)>) -> PyResult<f64> {
    Ok(evaluation::score_executability(&verdicts(pairs)).map_err(value_err)?.value())
}

#[pyfunction]
fn score_accuracy(pairs: Vec<(bool, bool)>) -> PyResult<f64> {
    Ok(evaluation::score_accuracy(&verdicts(pairs)).map_err(value_err)?.value())
}

/// Five expert scores, best and worst dropped, scaled to 100.
#[pyfunction]
fn score_readability(scores: [u8; 5]) -> PyResult<f64> {
    Ok(evaluation::score_readability(&ExpertScores::new(scores).map_err(value_err)?).value())
}

/// Both arguments are requirements documents as dicts.
#[pyfunction]
fn score_matchability(py: Python<'_>, extracted: &Bound<'_, PyAny>, gold: &Bound<'_, PyAny>) -> PyResult<f64> {
    let doc = |o: &Bound<'_, PyAny>| -> PyResult<RequirementsDocument> {
        RequirementsDocument::from_value(&from_py(py, o)?).map_err(value_err)
    };
    Ok(evaluation::score_matchability(&doc(extracted)?, &doc(gold)?, None).value())
}

/// Rule violations of an annotated program; empty when compliant.
#[pyfunction]
fn check_annotation(
    py: Python<'_>,
    annotated: &str,
    original: &str,
    design: &Bound<'_, PyAny>,
    language: &str,
) -> PyResult<Vec<String>> {
    let design: AlgorithmDesignDocument = from_py(py, design)?;
    let token = comment_token(language).map_err(value_err)?;
    check(&AnnotatedCode::parse(annotated, token), original, &design, language).map_err(value_err)
}

#[pyfunction]
fn sample_corpus(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_py(py, &fixtures::sample_corpus())
}

/// Scripted rules reproducing the gold parse of a bundled task.
#[pyfunction]
#[pyo3(signature = (task_id, max_revisions=3))]
fn gold_rules(py: Python<'_>, task_id: &str, max_revisions: u32) -> PyResult<Py<PyAny>> {
    let task = fixtures::sample_corpus()
        .into_iter()
        .find(|t| t.id == task_id)
        .ok_or_else(|| PyKeyError::new_err(task_id.to_string()))?;
    to_py(py, &fixtures::gold_rules(&task, max_revisions))
}

#[pymodule]
fn pycop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<KnowledgeBase>()?;
    m.add_class::<Service>()?;
    m.add("WrongPhaseError", m.py().get_type::<WrongPhaseError>())?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(score_executability, m)?)?;
    m.add_function(wrap_pyfunction!(score_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(score_readability, m)?)?;
    m.add_function(wrap_pyfunction!(score_matchability, m)?)?;
    m.add_function(wrap_pyfunction!(check_annotation, m)?)?;
    m.add_function(wrap_pyfunction!(sample_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(gold_rules, m)?)?;
    Ok(())
}
