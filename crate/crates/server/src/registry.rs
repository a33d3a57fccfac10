//! Live sessions keyed by token, with a reconnect grace period.
//!
//! A session is attached while a connection serves it. When the connection
//! ends it is detached and may be re-attached by token until the grace
//! period runs out, after which [`Registry::reap`] drops it.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::{BuildHasher, Hasher};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::session::Session;

pub const DEFAULT_GRACE: Duration = Duration::from_secs(60);

pub type SharedSession = Arc<Mutex<Session>>;

struct Entry {
    session: SharedSession,
    detached_at: Option<Instant>,
}

pub struct Registry {
    grace: Duration,
    entries: Mutex<HashMap<String, Entry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachError {
    Unknown,
    Expired,
    InUse,
}

/// A fresh 128-bit token from the standard library's randomly seeded hasher.
pub fn new_token() -> String {
    let word = || {
        let mut h = RandomState::new().build_hasher();
        h.write_u128(Instant::now().elapsed().as_nanos());
        h.finish()
    };
    format!("{:016x}{:016x}", word(), word())
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(DEFAULT_GRACE)
    }
}

impl Registry {
    pub fn new(grace: Duration) -> Self {
        Self {
            grace,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn grace(&self) -> Duration {
        self.grace
    }

    /// Registers a session built by `make` under a new token, attached.
    pub fn create(&self, make: impl FnOnce(&str) -> Session) -> (String, SharedSession) {
        let mut entries = self.entries.lock().expect("registry lock");
        let token = loop {
            let t = new_token();
            if !entries.contains_key(&t) {
                break t;
            }
        };
        let session = Arc::new(Mutex::new(make(&token)));
        entries.insert(
            token.clone(),
            Entry {
                session: Arc::clone(&session),
                detached_at: None,
            },
        );
        (token, session)
    }

    /// Re-attaches a detached session still within its grace period.
    pub fn attach(&self, token: &str, now: Instant) -> Result<SharedSession, AttachError> {
        let mut entries = self.entries.lock().expect("registry lock");
        let entry = entries.get_mut(token).ok_or(AttachError::Unknown)?;
        match entry.detached_at {
            None => Err(AttachError::InUse),
            Some(at) if now.saturating_duration_since(at) > self.grace => {
                entries.remove(token);
                Err(AttachError::Expired)
            }
            Some(_) => {
                entry.detached_at = None;
                Ok(Arc::clone(&entry.session))
            }
        }
    }

    pub fn detach(&self, token: &str, now: Instant) {
        if let Some(entry) = self.entries.lock().expect("registry lock").get_mut(token) {
            entry.detached_at = Some(now);
        }
    }

    /// Drops sessions detached for longer than the grace period; returns
    /// how many were dropped.
    pub fn reap(&self, now: Instant) -> usize {
        let mut entries = self.entries.lock().expect("registry lock");
        let before = entries.len();
        entries.retain(|_, e| {
            e.detached_at
                .is_none_or(|at| now.saturating_duration_since(at) <= self.grace)
        });
        before - entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
