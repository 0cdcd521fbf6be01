//! Runtime signals and registries.
//!
//! [`LiveContext`] is the mutable, operator-controlled state. A loop execution never reads it
//! directly: it takes a [`RuntimeContext`] snapshot once and uses that for retrieval and
//! deliberation, so a signal flipping mid-run cannot change which rules apply half-way through.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditError, AuditLog, RecordBody};
use crate::rules::Lookup;
use crate::value::Scalar;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextState {
    #[serde(default)]
    pub signals: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub registries: BTreeMap<String, BTreeSet<String>>,
}

impl ContextState {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// Immutable view of the context taken at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeContext {
    state: Arc<ContextState>,
    snapshot_id: String,
    version: u64,
}

static DETACHED_SNAPSHOTS: AtomicU64 = AtomicU64::new(1);

impl RuntimeContext {
    /// A snapshot not tied to any live context (tests, offline evaluation).
    pub fn from_state(state: ContextState) -> Self {
        let n = DETACHED_SNAPSHOTS.fetch_add(1, Ordering::Relaxed);
        Self {
            state: Arc::new(state),
            snapshot_id: format!("snap-detached-{n}"),
            version: 0,
        }
    }

    pub fn state(&self) -> &ContextState {
        &self.state
    }

    pub fn snapshot_id(&self) -> &str {
        &self.snapshot_id
    }

    /// Live-context version this snapshot was taken from.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn signal(&self, key: &str) -> Option<&Scalar> {
        self.state.signals.get(key)
    }
}

impl Lookup for RuntimeContext {
    fn value(&self, key: &str) -> Option<Scalar> {
        self.state.signals.get(key).cloned()
    }

    fn registry(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.state.registries.get(name)
    }
}

/// One operator change to the live context, as recorded in the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ContextChange {
    SetSignal { key: String, value: Scalar },
    RemoveSignal { key: String },
    UpdateRegistry { name: String, members: BTreeSet<String> },
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("context key must not be empty")]
    EmptyKey,
    #[error("audit append failed: {0}")]
    Audit(#[from] AuditError),
}

/// Single-writer, multi-reader context store.
#[derive(Debug)]
pub struct LiveContext {
    current: RwLock<(u64, Arc<ContextState>)>,
    writer: Mutex<()>,
    snapshots: AtomicU64,
    audit: Option<Arc<AuditLog>>,
}

impl LiveContext {
    pub fn new(seed: ContextState, audit: Option<Arc<AuditLog>>) -> Self {
        Self {
            current: RwLock::new((1, Arc::new(seed))),
            writer: Mutex::new(()),
            snapshots: AtomicU64::new(0),
            audit,
        }
    }

    pub fn snapshot(&self) -> RuntimeContext {
        let (version, state) = {
            let guard = self.current.read().expect("context lock");
            (guard.0, guard.1.clone())
        };
        let n = self.snapshots.fetch_add(1, Ordering::Relaxed) + 1;
        RuntimeContext {
            state,
            snapshot_id: format!("snap-v{version}-{n}"),
            version,
        }
    }

    pub fn version(&self) -> u64 {
        self.current.read().expect("context lock").0
    }

    pub fn set_signal(&self, actor: &str, key: &str, value: Scalar) -> Result<u64, ContextError> {
        self.apply(
            actor,
            ContextChange::SetSignal {
                key: key.to_string(),
                value,
            },
        )
    }

    pub fn remove_signal(&self, actor: &str, key: &str) -> Result<u64, ContextError> {
        self.apply(actor, ContextChange::RemoveSignal { key: key.to_string() })
    }

    pub fn update_registry(
        &self,
        actor: &str,
        name: &str,
        members: BTreeSet<String>,
    ) -> Result<u64, ContextError> {
        self.apply(
            actor,
            ContextChange::UpdateRegistry {
                name: name.to_string(),
                members,
            },
        )
    }

    /// Applies a change and returns the new version. The audit record is written before the
    /// change becomes visible; if the append fails the change is dropped.
    pub fn apply(&self, actor: &str, change: ContextChange) -> Result<u64, ContextError> {
        let key = match &change {
            ContextChange::SetSignal { key, .. } | ContextChange::RemoveSignal { key } => key,
            ContextChange::UpdateRegistry { name, .. } => name,
        };
        if key.trim().is_empty() {
            return Err(ContextError::EmptyKey);
        }
        let _w = self.writer.lock().expect("context writer lock");
        let (version, base) = {
            let guard = self.current.read().expect("context lock");
            (guard.0, guard.1.clone())
        };
        let mut next = (*base).clone();
        match &change {
            ContextChange::SetSignal { key, value } => {
                next.signals.insert(key.clone(), value.clone());
            }
            ContextChange::RemoveSignal { key } => {
                next.signals.remove(key);
            }
            ContextChange::UpdateRegistry { name, members } => {
                next.registries.insert(name.clone(), members.clone());
            }
        }
        let new_version = version + 1;
        if let Some(audit) = &self.audit {
            audit.append(RecordBody::ContextMutation {
                actor: actor.to_string(),
                change,
                context_version: new_version,
            })?;
        }
        *self.current.write().expect("context lock") = (new_version, Arc::new(next));
        Ok(new_version)
    }
}
