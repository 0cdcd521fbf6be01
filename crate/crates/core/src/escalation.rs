//! Suspended escalations awaiting a human decision, and the approval tokens they mint.
//!
//! Approving an escalation mints one token per triggering rule. A token is the string
//! `apr:<rule_id>:<32 hex>`; it is bound to the escalated intent's agent, workflow and action
//! class, expires after the configured TTL and is spent by the first evaluation it lets proceed.

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditError, AuditLog, RecordBody};
use crate::clock::{instant_serde, Clock};
use crate::context::RuntimeContext;
use crate::intent::{ComplianceDecision, EscalationMessage, IntentDescriptor, Outcome};
use crate::value::Scalar;

pub const TOKEN_PREFIX: &str = "apr:";

/// Rule id embedded in a well-formed approval token.
pub fn token_rule_id(token: &str) -> Option<&str> {
    let rest = token.strip_prefix(TOKEN_PREFIX)?;
    let (rule, nonce) = rest.rsplit_once(':')?;
    (!rule.is_empty() && !nonce.is_empty() && nonce.bytes().all(|b| b.is_ascii_hexdigit()))
        .then_some(rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EscalationStatus {
    Pending,
    Approved,
    Denied,
    Expired,
}

impl EscalationStatus {
    pub fn name(self) -> &'static str {
        match self {
            EscalationStatus::Pending => "PENDING",
            EscalationStatus::Approved => "APPROVED",
            EscalationStatus::Denied => "DENIED",
            EscalationStatus::Expired => "EXPIRED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Resolution {
    Approved,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalToken {
    pub rule_id: String,
    pub token: String,
    #[serde(with = "instant_serde")]
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEscalation {
    pub escalation_id: String,
    pub message: EscalationMessage,
    pub intent: IntentDescriptor,
    /// Context signals in force when the escalation was raised.
    pub context_signals: BTreeMap<String, Scalar>,
    pub context_snapshot_id: String,
    #[serde(with = "instant_serde")]
    pub created_at: DateTime<Utc>,
    #[serde(with = "instant_serde")]
    pub expires_at: DateTime<Utc>,
    pub status: EscalationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolver: Option<String>,
    #[serde(default)]
    pub note: String,
    #[serde(default, with = "instant_serde::option", skip_serializing_if = "Option::is_none")]
    pub resolved_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub approval_tokens: Vec<ApprovalToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum QueueEvent {
    Enqueued(PendingEscalation),
    Resolved(PendingEscalation),
    Expired(PendingEscalation),
}

impl QueueEvent {
    pub fn name(&self) -> &'static str {
        match self {
            QueueEvent::Enqueued(_) => "enqueued",
            QueueEvent::Resolved(_) => "resolved",
            QueueEvent::Expired(_) => "expired",
        }
    }

    pub fn escalation(&self) -> &PendingEscalation {
        match self {
            QueueEvent::Enqueued(e) | QueueEvent::Resolved(e) | QueueEvent::Expired(e) => e,
        }
    }
}

#[derive(Debug, Error)]
pub enum EscalationError {
    #[error("NOT_FOUND: escalation {0}")]
    NotFound(String),
    #[error("ALREADY_RESOLVED: escalation {id} is {status}")]
    AlreadyResolved { id: String, status: &'static str },
    #[error("precondition violated: only ESCALATE decisions can be enqueued, got {0}")]
    NotEscalation(Outcome),
    #[error("operator id must not be empty")]
    MissingOperator,
    #[error("audit append failed: {0}")]
    Audit(#[from] AuditError),
}

impl EscalationError {
    pub fn code(&self) -> &'static str {
        match self {
            EscalationError::NotFound(_) => "NOT_FOUND",
            EscalationError::AlreadyResolved { .. } => "ALREADY_RESOLVED",
            EscalationError::NotEscalation(_) => "PRECONDITION_FAILED",
            EscalationError::MissingOperator => "INVALID_REQUEST",
            EscalationError::Audit(_) => "STORAGE_FAILURE",
        }
    }
}

/// Lifetimes in whole seconds on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    #[serde(with = "secs")]
    pub token_ttl: Duration,
    #[serde(with = "secs")]
    pub pending_ttl: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_secs)
    }
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self {
            token_ttl: Duration::from_secs(3600),
            pending_ttl: Duration::from_secs(24 * 3600),
        }
    }
}

/// Why a presented token was not honoured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedToken {
    pub token: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
struct Grant {
    rule_id: String,
    agent_id: String,
    workflow_id: String,
    action_class: String,
    expires_at: DateTime<Utc>,
    consumed_by: Option<String>,
}

#[derive(Debug, Default)]
struct QueueState {
    items: BTreeMap<String, PendingEscalation>,
    order: Vec<String>,
    /// Ids in enqueue order that may still be pending. The pending lifetime is fixed, so deadlines
    /// follow enqueue order and expiry only looks at the front. A clock stepping backwards can
    /// delay an expiry until the sweep reaches it, never bring one forward.
    pending: VecDeque<String>,
    grants: BTreeMap<String, Grant>,
    next_id: u64,
}

/// Human-in-the-loop queue. All mutations are serialized; each one is audited before it takes
/// effect.
pub struct EscalationQueue {
    state: Mutex<QueueState>,
    subscribers: Mutex<Vec<Sender<QueueEvent>>>,
    audit: Arc<AuditLog>,
    clock: Arc<dyn Clock>,
    config: QueueConfig,
}

impl std::fmt::Debug for EscalationQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EscalationQueue")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn to_chrono(d: Duration) -> chrono::Duration {
    chrono::Duration::from_std(d).unwrap_or(chrono::Duration::MAX)
}

impl EscalationQueue {
    pub fn new(audit: Arc<AuditLog>, clock: Arc<dyn Clock>, config: QueueConfig) -> Self {
        Self {
            state: Mutex::new(QueueState {
                next_id: 1,
                ..Default::default()
            }),
            subscribers: Mutex::new(Vec::new()),
            audit,
            clock,
            config,
        }
    }

    pub fn config(&self) -> QueueConfig {
        self.config
    }

    /// Receives every subsequent queue event.
    pub fn subscribe(&self) -> Receiver<QueueEvent> {
        let (tx, rx) = channel();
        self.subscribers.lock().expect("subscriber lock").push(tx);
        rx
    }

    fn emit(&self, events: Vec<QueueEvent>) {
        if events.is_empty() {
            return;
        }
        let mut subs = self.subscribers.lock().expect("subscriber lock");
        subs.retain(|tx| events.iter().all(|e| tx.send(e.clone()).is_ok()));
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, QueueState> {
        self.state.lock().expect("queue lock")
    }

    /// Suspends an escalated decision for review.
    pub fn enqueue(
        &self,
        decision: &ComplianceDecision,
        ctx: &RuntimeContext,
    ) -> Result<PendingEscalation, EscalationError> {
        let (Outcome::Escalate, Some(message)) = (decision.outcome, &decision.escalation) else {
            return Err(EscalationError::NotEscalation(decision.outcome));
        };
        let now = self.clock.now();
        let mut events = Vec::new();
        let item = {
            let mut st = self.lock();
            self.expire_locked(&mut st, now, &mut events)?;
            let escalation_id = format!("ESC-{:06}", st.next_id);
            let item = PendingEscalation {
                escalation_id: escalation_id.clone(),
                message: message.clone(),
                intent: decision.final_intent.clone(),
                context_signals: ctx.state().signals.clone(),
                context_snapshot_id: ctx.snapshot_id().to_string(),
                created_at: now,
                expires_at: now + to_chrono(self.config.pending_ttl),
                status: EscalationStatus::Pending,
                resolver: None,
                note: String::new(),
                resolved_at: None,
                approval_tokens: Vec::new(),
            };
            self.audit.append(RecordBody::EscalationEnqueued {
                escalation_id: escalation_id.clone(),
                intent_id: item.intent.intent_id.clone(),
                agent_id: item.intent.agent_id.clone(),
                triggering_rule_ids: message.triggering_rule_ids.clone(),
                trigger_kind: message.trigger_kind,
            })?;
            st.next_id += 1;
            st.order.push(escalation_id.clone());
            st.pending.push_back(escalation_id.clone());
            st.items.insert(escalation_id, item.clone());
            item
        };
        events.push(QueueEvent::Enqueued(item.clone()));
        self.emit(events);
        Ok(item)
    }

    /// Moves a pending escalation to a terminal state. Approval mints one token per triggering
    /// rule.
    pub fn resolve(
        &self,
        escalation_id: &str,
        resolution: Resolution,
        operator: &str,
        note: &str,
    ) -> Result<PendingEscalation, EscalationError> {
        if operator.trim().is_empty() {
            return Err(EscalationError::MissingOperator);
        }
        let now = self.clock.now();
        let mut events = Vec::new();
        let result = {
            let mut st = self.lock();
            let st = &mut *st;
            self.expire_locked(st, now, &mut events)?;
            let current = st
                .items
                .get(escalation_id)
                .ok_or_else(|| EscalationError::NotFound(escalation_id.to_string()))?;
            if current.status != EscalationStatus::Pending {
                Err(EscalationError::AlreadyResolved {
                    id: escalation_id.to_string(),
                    status: current.status.name(),
                })
            } else {
                let mut next = current.clone();
                next.status = match resolution {
                    Resolution::Approved => EscalationStatus::Approved,
                    Resolution::Denied => EscalationStatus::Denied,
                };
                next.resolver = Some(operator.to_string());
                next.note = note.to_string();
                next.resolved_at = Some(now);
                if resolution == Resolution::Approved {
                    let expires_at = now + to_chrono(self.config.token_ttl);
                    next.approval_tokens = next
                        .message
                        .triggering_rule_ids
                        .iter()
                        .map(|rule_id| ApprovalToken {
                            rule_id: rule_id.clone(),
                            token: format!(
                                "{TOKEN_PREFIX}{rule_id}:{}",
                                hex::encode(rand::random::<[u8; 16]>())
                            ),
                            expires_at,
                        })
                        .collect();
                }
                self.audit.append(RecordBody::EscalationResolved {
                    escalation_id: escalation_id.to_string(),
                    status: next.status.name().to_string(),
                    operator: operator.to_string(),
                    note: note.to_string(),
                    token_rule_ids: next.approval_tokens.iter().map(|t| t.rule_id.clone()).collect(),
                })?;
                for t in &next.approval_tokens {
                    st.grants.insert(
                        t.token.clone(),
                        Grant {
                            rule_id: t.rule_id.clone(),
                            agent_id: next.intent.agent_id.clone(),
                            workflow_id: next.intent.workflow_id.clone(),
                            action_class: next.intent.action_class.clone(),
                            expires_at: t.expires_at,
                            consumed_by: None,
                        },
                    );
                }
                st.items.insert(escalation_id.to_string(), next.clone());
                events.push(QueueEvent::Resolved(next.clone()));
                Ok(next)
            }
        };
        self.emit(events);
        result
    }

    fn expire_locked(
        &self,
        st: &mut QueueState,
        now: DateTime<Utc>,
        events: &mut Vec<QueueEvent>,
    ) -> Result<(), EscalationError> {
        while let Some(id) = st.pending.front().cloned() {
            let item = &st.items[&id];
            if item.status != EscalationStatus::Pending {
                st.pending.pop_front();
                continue;
            }
            if item.expires_at > now {
                break;
            }
            self.audit.append(RecordBody::EscalationExpired {
                escalation_id: id.clone(),
            })?;
            st.pending.pop_front();
            let item = st.items.get_mut(&id).expect("queued id exists");
            item.status = EscalationStatus::Expired;
            item.resolved_at = Some(now);
            events.push(QueueEvent::Expired(item.clone()));
        }
        Ok(())
    }

    /// Expires pending escalations older than the pending TTL; returns how many changed.
    pub fn expire_stale(&self) -> Result<usize, EscalationError> {
        let mut events = Vec::new();
        {
            let mut st = self.lock();
            self.expire_locked(&mut st, self.clock.now(), &mut events)?;
        }
        let n = events.len();
        self.emit(events);
        Ok(n)
    }

    /// Escalations in enqueue order, optionally filtered by status.
    pub fn list(&self, status: Option<EscalationStatus>) -> Vec<PendingEscalation> {
        if let Err(e) = self.expire_stale() {
            tracing::error!(%e, "could not record escalation expiry");
        }
        let st = self.lock();
        st.order
            .iter()
            .map(|id| &st.items[id])
            .filter(|e| status.is_none_or(|s| e.status == s))
            .cloned()
            .collect()
    }

    pub fn get(&self, escalation_id: &str) -> Option<PendingEscalation> {
        self.lock().items.get(escalation_id).cloned()
    }

    /// Splits the intent's tokens into honoured ones and rejections.
    pub fn validate_tokens(&self, intent: &IntentDescriptor) -> (Vec<String>, Vec<RejectedToken>) {
        let now = self.clock.now();
        let st = self.lock();
        let mut valid = Vec::new();
        let mut rejected = Vec::new();
        for token in &intent.approval_tokens {
            let reason = match st.grants.get(token) {
                None => Some("unknown token"),
                Some(g) if g.consumed_by.is_some() => Some("token already used"),
                Some(g) if g.expires_at <= now => Some("token expired"),
                Some(g)
                    if g.agent_id != intent.agent_id
                        || g.workflow_id != intent.workflow_id
                        || g.action_class != intent.action_class =>
                {
                    Some("token was issued for a different agent, workflow or action")
                }
                Some(g) if token_rule_id(token) != Some(g.rule_id.as_str()) => Some("malformed token"),
                Some(_) => None,
            };
            match reason {
                None if !valid.contains(token) => valid.push(token.clone()),
                None => {}
                Some(r) => rejected.push(RejectedToken {
                    token: token.clone(),
                    reason: r.to_string(),
                }),
            }
        }
        (valid, rejected)
    }

    /// Marks tokens spent by `intent_id`. Already-spent tokens are left alone.
    pub fn consume_tokens(&self, intent_id: &str, tokens: &[String]) -> Result<(), EscalationError> {
        let mut st = self.lock();
        let fresh: Vec<&String> = tokens
            .iter()
            .filter(|t| st.grants.get(*t).is_some_and(|g| g.consumed_by.is_none()))
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        let rule_ids = fresh.iter().map(|t| st.grants[*t].rule_id.clone()).collect();
        self.audit.append(RecordBody::TokensConsumed {
            intent_id: intent_id.to_string(),
            rule_ids,
        })?;
        let fresh: Vec<String> = fresh.into_iter().cloned().collect();
        for t in fresh {
            st.grants.get_mut(&t).expect("grant exists").consumed_by = Some(intent_id.to_string());
        }
        Ok(())
    }
}
