use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};

use super::{ArtifactsView, Session, SessionError, SessionStore, SessionView};
use crate::config::PipelineConfig;
use crate::debug::DebugFeedback;
use crate::engine::Engine;
use crate::kb::{KbKind, RetrievalHit, SearchFilters};

/// Concurrent session host. Requests to one session are serialized by its
/// own lock; different sessions share only the immutable engine.
pub struct SessionService {
    engine: Engine,
    default_config: PipelineConfig,
    store: Option<SessionStore>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    ids: Mutex<StdRng>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl SessionService {
    pub fn new(engine: Engine, default_config: PipelineConfig) -> Self {
        Self {
            engine,
            default_config,
            store: None,
            sessions: Mutex::new(HashMap::new()),
            ids: Mutex::new(StdRng::from_os_rng()),
        }
    }

    /// Deterministic session ids, for tests.
    pub fn with_id_seed(mut self, seed: u64) -> Self {
        self.ids = Mutex::new(StdRng::seed_from_u64(seed));
        self
    }

    /// Persists sessions under `store` and loads the ones already there.
    /// Logs that fail to replay are skipped with a warning.
    pub fn with_store(mut self, store: SessionStore) -> Result<Self, SessionError> {
        let mut loaded = HashMap::new();
        for id in store.ids()? {
            match store.load(&id).and_then(|log| Session::replay(&log, self.engine.clock.clone())) {
                Ok(s) => {
                    loaded.insert(id, Arc::new(Mutex::new(s)));
                }
                Err(e) => tracing::warn!(session = %id, error = %e, "skipping unreadable session log"),
            }
        }
        self.sessions = Mutex::new(loaded);
        self.store = Some(store);
        Ok(self)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn default_config(&self) -> &PipelineConfig {
        &self.default_config
    }

    fn new_id(&self) -> String {
        let mut bytes = [0u8; 16];
        lock(&self.ids).fill_bytes(&mut bytes);
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    fn persist(&self, session: &Session, from: usize) -> Result<(), SessionError> {
        match &self.store {
            Some(store) => store.append(session.id(), &session.events()[from..]),
            None => Ok(()),
        }
    }

    pub fn create(&self, requirement_text: &str, config: Option<PipelineConfig>) -> Result<SessionView, SessionError> {
        let config = config.unwrap_or_else(|| self.default_config.clone());
        let id = self.new_id();
        let session = Session::create(id.clone(), requirement_text, config, &self.engine)?;
        self.persist(&session, 0)?;
        let view = session.view();
        lock(&self.sessions).insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    fn step(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session, &Engine) -> Result<SessionView, SessionError>,
    ) -> Result<SessionView, SessionError> {
        let handle = self.session(id)?;
        let mut session = lock(&handle);
        let before = session.events().len();
        let result = f(&mut session, &self.engine);
        self.persist(&session, before)?;
        result
    }

    pub fn post_answers(&self, id: &str, answers: &BTreeMap<String, String>) -> Result<SessionView, SessionError> {
        self.step(id, |s, e| s.post_answers(answers, e))
    }

    pub fn post_feedback(&self, id: &str, fb: &DebugFeedback) -> Result<SessionView, SessionError> {
        self.step(id, |s, e| s.post_feedback(fb, e))
    }

    pub fn view(&self, id: &str) -> Result<SessionView, SessionError> {
        let handle = self.session(id)?;
        let session = lock(&handle);
        Ok(session.view())
    }

    pub fn artifacts(&self, id: &str) -> Result<ArtifactsView, SessionError> {
        let handle = self.session(id)?;
        let session = lock(&handle);
        Ok(session.artifacts())
    }

    /// A copy of the session as it stands.
    pub fn session_snapshot(&self, id: &str) -> Result<Session, SessionError> {
        let handle = self.session(id)?;
        let session = lock(&handle);
        Ok(session.clone())
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = lock(&self.sessions).keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn search_kb(
        &self,
        kind: KbKind,
        query: &str,
        platform: Option<&str>,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, SessionError> {
        if query.trim().is_empty() {
            return Err(SessionError::Validation("query is empty".into()));
        }
        if k == 0 {
            return Err(SessionError::Validation("k must be positive".into()));
        }
        let filters = SearchFilters { platform: platform.map(str::to_owned), language: None };
        Ok(self.engine.kbs.get(kind).map(|idx| idx.search(query, &filters, k)).unwrap_or_default())
    }
}
