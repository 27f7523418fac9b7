use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{SessionError, SessionEvent};

pub const ENV_SESSIONS_DIR: &str = "COP_SESSIONS_DIR";

/// One append-only JSON-lines file per session.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SessionError {
    SessionError::Io(format!("{}: {e}", path.display()))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir })
    }

    /// Store under `$COP_SESSIONS_DIR`, if set.
    pub fn from_env() -> Result<Option<Self>, SessionError> {
        match std::env::var_os(ENV_SESSIONS_DIR) {
            Some(dir) if !dir.is_empty() => Self::open(PathBuf::from(dir)).map(Some),
            _ => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &str) -> Result<PathBuf, SessionError> {
        if !valid_id(id) {
            return Err(SessionError::Validation(format!("bad session id {id:?}")));
        }
        Ok(self.dir.join(format!("{id}.jsonl")))
    }

    pub fn append(&self, id: &str, events: &[SessionEvent]) -> Result<(), SessionError> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.path_for(id)?;
        let mut buf = String::new();
        for ev in events {
            buf.push_str(&serde_json::to_string(ev).map_err(|e| io_err(&path, e))?);
            buf.push('\n');
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
        file.write_all(buf.as_bytes()).map_err(|e| io_err(&path, e))?;
        file.sync_data().map_err(|e| io_err(&path, e))
    }

    pub fn load(&self, id: &str) -> Result<Vec<SessionEvent>, SessionError> {
        let path = self.path_for(id)?;
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        parse_log(&text)
    }

    pub fn ids(&self) -> Result<Vec<String>, SessionError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| io_err(&self.dir, e))? {
            let path = entry.map_err(|e| io_err(&self.dir, e))?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Parses a JSON-lines log. Blank lines are skipped; a bad line is reported
/// at the seq it would have had.
pub fn parse_log(text: &str) -> Result<Vec<SessionEvent>, SessionError> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let ev: SessionEvent = serde_json::from_str(line).map_err(|e| SessionError::CorruptLog {
            seq: out.len() as u64 + 1,
            reason: format!("unreadable event: {e}"),
        })?;
        out.push(ev);
    }
    Ok(out)
}
