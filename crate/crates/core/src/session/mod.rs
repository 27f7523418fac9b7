//! Interactive sessions: a phase machine over the five stages whose every
//! step is an event in an append-only log. Replaying the log rebuilds the
//! session without calling a backend.

mod service;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{self, AnnotationError};
use crate::clock::{Clock, Timestamp};
use crate::config::PipelineConfig;
use crate::debug::{self, DebugError, DebugFeedback, DebugSession, DebugState, TranscriptEntry};
use crate::design::{self, AlgorithmDesignDocument, DesignInput};
use crate::engine::Engine;
use crate::implementation::{self, CodeArtifact, DirectInputs, PromptContext, Provenance, SupportHits};
use crate::llm::StageTag;
use crate::pool::{ArtifactKind, InfoPool, PoolEntry};
use crate::requirements::{
    self, ClarificationRequest, ConditionalFlags, Element, Overall, RawElements, RequirementsDocument,
};

pub use service::SessionService;
pub use store::{parse_log, SessionStore, ENV_SESSIONS_DIR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Clarifying,
    Designing,
    Generating,
    AwaitingFeedback,
    Annotating,
    Done,
    Failed,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Clarifying,
        Phase::Designing,
        Phase::Generating,
        Phase::AwaitingFeedback,
        Phase::Annotating,
        Phase::Done,
        Phase::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }

    /// The declared phase graph.
    pub fn can_move_to(self, next: Phase) -> bool {
        use Phase::*;
        match (self, next) {
            (_, Failed) => !self.is_terminal(),
            (Clarifying, Clarifying | Designing) => true,
            (Designing, Generating) => true,
            (Generating, AwaitingFeedback | Annotating) => true,
            (AwaitingFeedback, AwaitingFeedback | Annotating) => true,
            (Annotating, Done) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationState {
    pub round: u32,
    pub raw: RawElements,
    pub flags: ConditionalFlags,
    pub request: ClarificationRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    TaskCreated {
        session_id: String,
        requirement_text: String,
        config: PipelineConfig,
    },
    ClarificationAsked {
        round: u32,
        raw: RawElements,
        flags: ConditionalFlags,
        request: ClarificationRequest,
    },
    AnswersReceived {
        round: u32,
        answers: BTreeMap<String, String>,
    },
    StageCompleted {
        stage: StageTag,
        phase: Phase,
        entries: Vec<PoolEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retrieval: Option<SupportHits>,
    },
    FeedbackReceived {
        feedback: DebugFeedback,
        debug: DebugSession,
    },
    RepairProduced {
        entries: Vec<PoolEntry>,
        debug: DebugSession,
    },
    AnnotationProduced {
        entries: Vec<PoolEntry>,
        debug: DebugSession,
    },
    Failed {
        phase: Phase,
        error: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::TaskCreated { .. } => "TaskCreated",
            EventBody::ClarificationAsked { .. } => "ClarificationAsked",
            EventBody::AnswersReceived { .. } => "AnswersReceived",
            EventBody::StageCompleted { .. } => "StageCompleted",
            EventBody::FeedbackReceived { .. } => "FeedbackReceived",
            EventBody::RepairProduced { .. } => "RepairProduced",
            EventBody::AnnotationProduced { .. } => "AnnotationProduced",
            EventBody::Failed { .. } => "Failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session is {found}, expected {expected}")]
    WrongPhase { expected: Phase, found: Phase },
    #[error("corrupt session log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("session storage: {0}")]
    Io(String),
}

impl SessionError {
    fn corrupt(seq: u64, reason: impl Into<String>) -> Self {
        SessionError::CorruptLog { seq, reason: reason.into() }
    }
}

/// What a client sees after each request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub clarification_rounds: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clarification: Option<ClarificationRequest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requirements: Option<RequirementsDocument>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<AlgorithmDesignDocument>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code: Option<CodeArtifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotated: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub debug: Option<DebugSession>,
    pub exhausted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Read-only dump of the pool, including every code revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactsView {
    pub session_id: String,
    pub phase: Phase,
    pub snapshot: Vec<PoolEntry>,
    pub code_revisions: Vec<CodeArtifact>,
    pub event_count: usize,
    pub exhausted: bool,
}

#[derive(Clone)]
pub struct Session {
    id: String,
    config: PipelineConfig,
    requirement_text: String,
    phase: Phase,
    pool: InfoPool,
    events: Vec<SessionEvent>,
    clarification: Option<ClarificationState>,
    rounds: u32,
    debug: Option<DebugSession>,
    error: Option<String>,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("phase", &self.phase)
            .field("events", &self.events.len())
            .finish_non_exhaustive()
    }
}

impl Session {
    fn blank(id: String, config: PipelineConfig, text: String, clock: Arc<dyn Clock>) -> Self {
        Self {
            id,
            config,
            requirement_text: text,
            phase: Phase::Clarifying,
            pool: InfoPool::new(clock.clone()),
            events: Vec::new(),
            clarification: None,
            rounds: 0,
            debug: None,
            error: None,
            clock,
        }
    }

    /// Starts a task and runs as far as it can without user input.
    pub fn create(
        id: impl Into<String>,
        requirement_text: &str,
        config: PipelineConfig,
        engine: &Engine,
    ) -> Result<Session, SessionError> {
        if requirement_text.trim().is_empty() {
            return Err(SessionError::Validation("requirement text is empty".into()));
        }
        if config.clarification_cap == 0 {
            return Err(SessionError::Validation("clarification_cap must be positive".into()));
        }
        let id = id.into();
        let mut s = Session::blank(id.clone(), config.clone(), requirement_text.to_string(), engine.clock.clone());
        s.push(EventBody::TaskCreated {
            session_id: id,
            requirement_text: requirement_text.to_string(),
            config,
        })?;
        s.analyse(engine, None)?;
        Ok(s)
    }

    pub fn post_answers(
        &mut self,
        answers: &BTreeMap<String, String>,
        engine: &Engine,
    ) -> Result<SessionView, SessionError> {
        self.expect(Phase::Clarifying)?;
        if answers.is_empty() {
            return Err(SessionError::Validation("no answers given".into()));
        }
        let clar = self.clarification.clone().ok_or_else(|| self.internal("no open clarification"))?;
        let merged =
            requirements::merge_answers(&clar.raw, answers).map_err(|e| SessionError::Validation(e.to_string()))?;
        self.push(EventBody::AnswersReceived { round: clar.round, answers: answers.clone() })?;
        self.analyse(engine, Some(merged))?;
        Ok(self.view())
    }

    pub fn post_feedback(&mut self, fb: &DebugFeedback, engine: &Engine) -> Result<SessionView, SessionError> {
        self.expect(Phase::AwaitingFeedback)?;
        let current = self.debug.ok_or_else(|| self.internal("no debug session"))?;
        let next = debug::next_transition(current, fb).map_err(|e| match e {
            DebugError::InvalidFeedback(m) => SessionError::Validation(m),
            other => self.internal(other.to_string()),
        })?;
        self.push(EventBody::FeedbackReceived { feedback: fb.clone(), debug: next })?;

        let code = self.latest_code().ok_or_else(|| self.internal("no code draft"))?;
        let ctx = self.later_context()?;
        let mut scratch = self.pool.clone();
        let mut d = next;
        if next.state == DebugState::Repairing {
            let settings = self.config.repair();
            match debug::repair(&mut d, &code, fb, &ctx, engine.backend.as_ref(), &mut scratch, &settings) {
                Ok(_) => self.push(EventBody::RepairProduced { entries: scratch.drain_journal(), debug: d })?,
                Err(e) => self.fail(e.to_string())?,
            }
        } else {
            let entry = TranscriptEntry {
                evaluated_revision: code.revision,
                feedback: fb.clone(),
                next_state: DebugState::Annotating,
                iteration: next.iteration,
                exhausted: next.exhausted,
                repaired_revision: None,
            };
            if let Err(e) = debug::append_transcript(&mut scratch, &entry) {
                self.fail(e.to_string())?;
            } else {
                self.finish_annotation(engine, &code, &ctx, scratch, d)?;
            }
        }
        Ok(self.view())
    }

    /// Rebuilds a session from its log. No backend is involved.
    pub fn replay(events: &[SessionEvent], clock: Arc<dyn Clock>) -> Result<Session, SessionError> {
        let first = events.first().ok_or_else(|| SessionError::corrupt(1, "no TaskCreated"))?;
        for (i, ev) in events.iter().enumerate() {
            let expected = i as u64 + 1;
            if ev.seq != expected {
                return Err(SessionError::corrupt(expected, format!("expected seq {expected}, found {}", ev.seq)));
            }
        }
        let EventBody::TaskCreated { session_id, requirement_text, config } = &first.body else {
            return Err(SessionError::corrupt(1, "no TaskCreated"));
        };
        let mut s = Session::blank(session_id.clone(), config.clone(), requirement_text.clone(), clock);
        s.events.push(first.clone());
        for ev in &events[1..] {
            s.apply(ev).map_err(|reason| SessionError::corrupt(ev.seq, reason))?;
            s.events.push(ev.clone());
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn requirement_text(&self) -> &str {
        &self.requirement_text
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn pool(&self) -> &InfoPool {
        &self.pool
    }

    pub fn snapshot(&self) -> Vec<PoolEntry> {
        self.pool.snapshot()
    }

    pub fn debug_session(&self) -> Option<DebugSession> {
        self.debug
    }

    pub fn clarification(&self) -> Option<&ClarificationState> {
        self.clarification.as_ref()
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    /// The log as JSON lines, one event per line.
    pub fn event_log_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).unwrap_or_default());
            out.push('\n');
        }
        out
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            phase: self.phase,
            clarification_rounds: self.rounds,
            clarification: match self.phase {
                Phase::Clarifying => self.clarification.as_ref().map(|c| c.request.clone()),
                _ => None,
            },
            requirements: self.pool.requirements(),
            design: self.pool.design(),
            code: self.latest_code(),
            annotated: self
                .pool
                .get(ArtifactKind::AnnotatedCode)
                .and_then(|e| e.payload.as_text().map(str::to_owned)),
            debug: self.debug,
            exhausted: self.debug.is_some_and(|d| d.exhausted),
            error: self.error.clone(),
        }
    }

    pub fn artifacts(&self) -> ArtifactsView {
        let (language, platform) = self.language_platform();
        let code_revisions = self
            .pool
            .code_history()
            .iter()
            .filter_map(|e| {
                Some(CodeArtifact {
                    language: language.clone(),
                    platform: platform.clone(),
                    source: e.payload.as_text()?.to_string(),
                    revision: e.revision,
                    provenance: if e.revision == 0 { Provenance::Generated } else { Provenance::Repaired },
                })
            })
            .collect();
        ArtifactsView {
            session_id: self.id.clone(),
            phase: self.phase,
            snapshot: self.pool.snapshot(),
            code_revisions,
            event_count: self.events.len(),
            exhausted: self.debug.is_some_and(|d| d.exhausted),
        }
    }

    fn expect(&self, phase: Phase) -> Result<(), SessionError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(SessionError::WrongPhase { expected: phase, found: self.phase })
        }
    }

    fn internal(&self, reason: impl Into<String>) -> SessionError {
        SessionError::corrupt(self.events.len() as u64, reason)
    }

    fn push(&mut self, body: EventBody) -> Result<(), SessionError> {
        let ev = SessionEvent { seq: self.events.len() as u64 + 1, timestamp: self.clock.now(), body };
        self.apply(&ev).map_err(|reason| SessionError::corrupt(ev.seq, reason))?;
        self.events.push(ev);
        Ok(())
    }

    fn fail(&mut self, error: String) -> Result<(), SessionError> {
        tracing::warn!(session = %self.id, phase = %self.phase, %error, "session failed");
        self.push(EventBody::Failed { phase: self.phase, error })
    }

    fn move_to(&mut self, next: Phase) -> Result<(), String> {
        if !self.phase.can_move_to(next) {
            return Err(format!("illegal transition {} -> {}", self.phase, next));
        }
        self.phase = next;
        Ok(())
    }

    fn restore(&mut self, entries: &[PoolEntry]) -> Result<(), String> {
        for e in entries {
            self.pool.restore(e.clone()).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// The single state-update path, shared by live requests and replay.
    fn apply(&mut self, ev: &SessionEvent) -> Result<(), String> {
        let need = |s: &Self, p: Phase| {
            if s.phase == p {
                Ok(())
            } else {
                Err(format!("{} not allowed in phase {}", ev.body.kind(), s.phase))
            }
        };
        match &ev.body {
            EventBody::TaskCreated { .. } => {
                if !self.events.is_empty() {
                    return Err("TaskCreated after start".into());
                }
            }
            EventBody::ClarificationAsked { round, raw, flags, request } => {
                need(self, Phase::Clarifying)?;
                if *round != self.rounds + 1 {
                    return Err(format!("clarification round {round} after {}", self.rounds));
                }
                self.rounds = *round;
                self.clarification =
                    Some(ClarificationState { round: *round, raw: raw.clone(), flags: *flags, request: request.clone() });
            }
            EventBody::AnswersReceived { round, .. } => {
                need(self, Phase::Clarifying)?;
                if self.clarification.as_ref().map(|c| c.round) != Some(*round) {
                    return Err(format!("answers for round {round} without matching request"));
                }
            }
            EventBody::StageCompleted { stage, phase, entries, .. } => {
                let before = match stage {
                    StageTag::RequirementAnalysis => Phase::Clarifying,
                    StageTag::AlgorithmDesign => Phase::Designing,
                    StageTag::CodeImplementation => Phase::Generating,
                    other => return Err(format!("stage {other} is not completed by StageCompleted")),
                };
                need(self, before)?;
                self.restore(entries)?;
                self.move_to(*phase)?;
                match stage {
                    StageTag::RequirementAnalysis => self.clarification = None,
                    StageTag::CodeImplementation => {
                        let mut d = DebugSession::new(self.config.ablation.max_debug_iterations);
                        if *phase == Phase::Annotating {
                            d.state = DebugState::Annotating;
                        }
                        self.debug = Some(d);
                    }
                    _ => {}
                }
            }
            EventBody::FeedbackReceived { debug, .. } => {
                need(self, Phase::AwaitingFeedback)?;
                let next = if debug.state == DebugState::Annotating {
                    Phase::Annotating
                } else {
                    Phase::AwaitingFeedback
                };
                self.move_to(next)?;
                self.debug = Some(*debug);
            }
            EventBody::RepairProduced { entries, debug } => {
                need(self, Phase::AwaitingFeedback)?;
                if self.debug.map(|d| d.state) != Some(DebugState::Repairing) {
                    return Err("repair without a repairing debug session".into());
                }
                self.restore(entries)?;
                self.debug = Some(*debug);
            }
            EventBody::AnnotationProduced { entries, debug } => {
                need(self, Phase::Annotating)?;
                self.restore(entries)?;
                self.move_to(Phase::Done)?;
                self.debug = Some(*debug);
            }
            EventBody::Failed { error, .. } => {
                self.move_to(Phase::Failed)?;
                self.error = Some(error.clone());
            }
        }
        Ok(())
    }

    fn flags_for(&self, raw: &RawElements, engine: &Engine) -> Result<ConditionalFlags, requirements::RequirementsError> {
        let flags = match raw.get(Element::AnalysisGoal) {
            Some(goal) => {
                requirements::classify_conditional_need(goal, Some(engine.backend.as_ref()), &self.config.analysis())?
            }
            None => ConditionalFlags::default(),
        };
        Ok(flags.with_supplied(raw))
    }

    fn analyse(&mut self, engine: &Engine, raw: Option<RawElements>) -> Result<(), SessionError> {
        let settings = self.config.analysis();
        let raw = match raw {
            Some(r) => r,
            None => match requirements::extract_elements(&self.requirement_text, engine.backend.as_ref(), &settings) {
                Ok(r) => r,
                Err(e) => return self.fail(e.to_string()),
            },
        };
        let flags = match self.flags_for(&raw, engine) {
            Ok(f) => f,
            Err(e) => return self.fail(e.to_string()),
        };
        let report = requirements::check_completeness(&raw, flags);
        if report.overall == Overall::NeedsClarification {
            if self.rounds >= self.config.clarification_cap {
                let missing: Vec<_> = report.missing().iter().map(|e| e.name()).collect();
                return self.fail(format!(
                    "ClarificationExhausted: still missing {} after {} rounds",
                    missing.join(", "),
                    self.rounds
                ));
            }
            let request = requirements::build_clarification(&report).map_err(|e| self.internal(e.to_string()))?;
            return self.push(EventBody::ClarificationAsked { round: self.rounds + 1, raw, flags, request });
        }
        self.run_stages(engine, &raw, flags)
    }

    fn run_stages(&mut self, engine: &Engine, raw: &RawElements, flags: ConditionalFlags) -> Result<(), SessionError> {
        let ablation = self.config.ablation;
        let backend = engine.backend.as_ref();

        let mut scratch = self.pool.clone();
        let req = match requirements::finalize(raw, flags, backend, &mut scratch, &self.config.analysis()) {
            Ok(r) => r,
            Err(e) => return self.fail(e.to_string()),
        };
        self.push(EventBody::StageCompleted {
            stage: StageTag::RequirementAnalysis,
            phase: Phase::Designing,
            entries: scratch.drain_journal(),
            retrieval: None,
        })?;

        let req_text = req.to_json_pretty();
        let input = if ablation.pool { DesignInput::Pool(&req) } else { DesignInput::Passthrough(&req_text) };
        let design = match design::design(input, backend, &mut scratch, &self.config.design()) {
            Ok(d) => d,
            Err(e) => return self.fail(e.to_string()),
        };
        self.push(EventBody::StageCompleted {
            stage: StageTag::AlgorithmDesign,
            phase: Phase::Generating,
            entries: scratch.drain_journal(),
            retrieval: None,
        })?;

        let hits = if ablation.retrieval {
            implementation::retrieve_support(&req, &design, &engine.kbs, self.config.k_per_kb)
        } else {
            SupportHits::default()
        };
        let direct = DirectInputs {
            requirements: req.clone(),
            design: design.clone(),
            predecessor_output: design.to_json_pretty(),
        };
        let generated = implementation::assemble_context(&scratch, Some(&direct), &hits, ablation)
            .and_then(|ctx| implementation::generate(&ctx, backend, &mut scratch, &self.config.generation()).map(|c| (ctx, c)));
        let (ctx, code) = match generated {
            Ok(v) => v,
            Err(e) => return self.fail(e.to_string()),
        };
        let next = if ablation.feedback { Phase::AwaitingFeedback } else { Phase::Annotating };
        self.push(EventBody::StageCompleted {
            stage: StageTag::CodeImplementation,
            phase: next,
            entries: scratch.drain_journal(),
            retrieval: ablation.retrieval.then_some(hits),
        })?;

        if !ablation.feedback {
            if let Err(e) = debug::record_skipped(&mut scratch) {
                return self.fail(e.to_string());
            }
            let d = self.debug.ok_or_else(|| self.internal("no debug session"))?;
            self.finish_annotation(engine, &code, &ctx, scratch, d)?;
        }
        Ok(())
    }

    fn finish_annotation(
        &mut self,
        engine: &Engine,
        code: &CodeArtifact,
        ctx: &PromptContext,
        mut scratch: InfoPool,
        mut d: DebugSession,
    ) -> Result<(), SessionError> {
        let settings = self.config.annotation();
        let result = annotation::annotate(
            &mut d,
            code,
            ctx,
            engine.backend.as_ref(),
            &mut scratch,
            engine.clock.as_ref(),
            &settings,
        );
        match result {
            Ok(_) => self.push(EventBody::AnnotationProduced { entries: scratch.drain_journal(), debug: d }),
            Err(AnnotationError::AnnotationInvalid(v)) => {
                self.fail(format!("AnnotationInvalid: {}", v.join("; ")))
            }
            Err(e) => self.fail(e.to_string()),
        }
    }

    fn language_platform(&self) -> (String, String) {
        self.pool
            .requirements()
            .map(|r| (r.programming_language, r.platform))
            .unwrap_or_default()
    }

    fn latest_code(&self) -> Option<CodeArtifact> {
        let (revision, source) = self.pool.latest_code()?;
        let (language, platform) = self.language_platform();
        Some(CodeArtifact {
            language,
            platform,
            source: source.to_string(),
            revision,
            provenance: if revision == 0 { Provenance::Generated } else { Provenance::Repaired },
        })
    }

    /// Context for the debug and annotation stages, rebuilt from the pool.
    fn later_context(&self) -> Result<PromptContext, SessionError> {
        let requirements = self.pool.requirements().ok_or_else(|| self.internal("no requirements in pool"))?;
        let design = self.pool.design().ok_or_else(|| self.internal("no design in pool"))?;
        let passthrough = (!self.config.ablation.pool).then(|| design.to_json_pretty());
        Ok(PromptContext { requirements, design, kb_snippets: Vec::new(), ablation: self.config.ablation, passthrough })
    }
}
