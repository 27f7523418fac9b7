use std::sync::Arc;

use crate::clock::{Clock, SystemClock};
use crate::kb::KnowledgeBases;
use crate::llm::ChatBackend;

/// Shared, stateless resources every session runs against.
#[derive(Clone)]
pub struct Engine {
    pub backend: Arc<dyn ChatBackend>,
    pub kbs: Arc<KnowledgeBases>,
    pub clock: Arc<dyn Clock>,
}

impl Engine {
    pub fn new(backend: Arc<dyn ChatBackend>, kbs: Arc<KnowledgeBases>, clock: Arc<dyn Clock>) -> Self {
        Self { backend, kbs, clock }
    }

    pub fn with_system_clock(backend: Arc<dyn ChatBackend>, kbs: Arc<KnowledgeBases>) -> Self {
        Self::new(backend, kbs, Arc::new(SystemClock))
    }

    /// Same knowledge bases and clock, different backend.
    pub fn with_backend(&self, backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend, kbs: self.kbs.clone(), clock: self.clock.clone() }
    }
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").finish_non_exhaustive()
    }
}
