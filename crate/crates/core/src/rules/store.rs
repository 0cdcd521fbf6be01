use std::sync::{Arc, Mutex, RwLock};

use super::{RuleSet, RuleSetDocument, RuleSetError};

/// Result of publishing a document.
#[derive(Debug, Clone)]
pub enum PublishOutcome {
    /// A new version became active.
    Activated(Arc<RuleSet>),
    /// The submitted rules equal the active ones; nothing changed.
    Unchanged(Arc<RuleSet>),
}

impl PublishOutcome {
    pub fn ruleset(&self) -> &Arc<RuleSet> {
        match self {
            PublishOutcome::Activated(r) | PublishOutcome::Unchanged(r) => r,
        }
    }
}

/// Versioned rule store with atomic activation.
///
/// Readers clone the active `Arc<RuleSet>` and keep using it for as long as they like; a publish
/// never affects a version that is already pinned.
#[derive(Debug)]
pub struct RuleStore {
    active: RwLock<Arc<RuleSet>>,
    history: Mutex<Vec<Arc<RuleSet>>>,
}

impl RuleStore {
    pub fn new(initial: RuleSet) -> Self {
        let initial = Arc::new(initial);
        Self {
            active: RwLock::new(initial.clone()),
            history: Mutex::new(vec![initial]),
        }
    }

    pub fn current(&self) -> Arc<RuleSet> {
        self.active.read().expect("rule store lock").clone()
    }

    pub fn version(&self, version: u64) -> Option<Arc<RuleSet>> {
        self.history
            .lock()
            .expect("rule store history lock")
            .iter()
            .find(|r| r.version() == version)
            .cloned()
    }

    pub fn versions(&self) -> Vec<u64> {
        self.history
            .lock()
            .expect("rule store history lock")
            .iter()
            .map(|r| r.version())
            .collect()
    }

    /// Validates `doc` and activates it as `current + 1`. The submitted version number is
    /// ignored; published versions are never rewritten.
    pub fn publish(&self, doc: RuleSetDocument) -> Result<PublishOutcome, RuleSetError> {
        self.publish_with(doc, |_| Ok(()))
    }

    /// Like [`RuleStore::publish`], but runs `before_activate` on the validated version first; if
    /// it fails the version is discarded.
    pub fn publish_with<E: From<RuleSetError>>(
        &self,
        mut doc: RuleSetDocument,
        before_activate: impl FnOnce(&RuleSet) -> Result<(), E>,
    ) -> Result<PublishOutcome, E> {
        let mut history = self.history.lock().expect("rule store history lock");
        let current = self.current();
        if doc.rules == current.rules() {
            return Ok(PublishOutcome::Unchanged(current));
        }
        doc.version = current.version() + 1;
        let next = Arc::new(RuleSet::new(doc)?);
        before_activate(&next)?;
        history.push(next.clone());
        *self.active.write().expect("rule store lock") = next.clone();
        Ok(PublishOutcome::Activated(next))
    }
}
