//! The governance service: rule store, live context, engine, escalation queue and audit log
//! behind one handle.
//!
//! Every evaluation pins the rule-set version and context snapshot current when it starts. If an
//! audit append ever fails the service halts: later evaluations and mutations are refused until
//! restart.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditError, AuditLog, RecordBody, TraceFilter, TracePage, VerificationReport};
use crate::clock::Clock;
use crate::context::{ContextChange, ContextError, ContextState, LiveContext, RuntimeContext};
use crate::deliberator::{BackendHealth, Deliberator};
use crate::engine::{EngineConfig, EngineError, PagrlEngine, RunTimings};
use crate::escalation::{
    EscalationError, EscalationQueue, EscalationStatus, PendingEscalation, QueueConfig, QueueEvent,
    RejectedToken, Resolution,
};
use crate::intent::{ComplianceDecision, IntentDescriptor, IntentError, Outcome};
use crate::prompt::PromptTemplates;
use crate::rules::{
    applicable_rules, detect_conflicts, lint_ruleset, validate_ruleset, ConflictReport, LintConfig,
    LintWarning, PublishOutcome, Rule, RuleSet, RuleSetDocument, RuleSetError, RuleStore,
    Violation,
};
use crate::value::Scalar;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("HALTED: the audit log failed earlier; the service refuses further work")]
    Halted,
    #[error("INVALID_INTENT: {0}")]
    InvalidIntent(#[from] IntentError),
    #[error(transparent)]
    Rules(#[from] RuleSetError),
    #[error("NOT_FOUND: rule-set version {0}")]
    UnknownVersion(u64),
    #[error(transparent)]
    Context(ContextError),
    #[error(transparent)]
    Escalation(EscalationError),
    #[error("STORAGE_FAILURE: {0}")]
    Audit(#[from] AuditError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Halted => "HALTED",
            ServiceError::InvalidIntent(_) => "INVALID_INTENT",
            ServiceError::Rules(e) => e.code(),
            ServiceError::UnknownVersion(_) => "NOT_FOUND",
            ServiceError::Context(ContextError::EmptyKey) => "INVALID_REQUEST",
            ServiceError::Context(ContextError::Audit(_)) | ServiceError::Audit(_) => {
                "STORAGE_FAILURE"
            }
            ServiceError::Escalation(e) => e.code(),
        }
    }
}

/// Result of one intent evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub decision: ComplianceDecision,
    pub run_id: String,
    pub trace_ids: Vec<String>,
    pub ruleset_version: u64,
    pub rules_retrieved: Vec<String>,
    pub context_snapshot_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalation_id: Option<String>,
    /// Presented approval tokens that were not honoured, and why.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_tokens: Vec<RejectedToken>,
    pub timings: RunTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicableRules {
    pub ruleset_version: u64,
    pub context_snapshot_id: String,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishReport {
    pub activated: bool,
    pub version: u64,
    pub rule_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<LintWarning>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts: Vec<ConflictReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextView {
    pub version: u64,
    #[serde(flatten)]
    pub state: ContextState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceStatus {
    Ok,
    Degraded,
    Halted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: ServiceStatus,
    pub ruleset_version: u64,
    pub rule_count: usize,
    pub deliberator: String,
    pub deliberator_health: BackendHealth,
    pub chain_ok: bool,
    pub audit_records: usize,
    pub context_version: u64,
    pub pending_escalations: usize,
    pub prompt_template_version: String,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    pub engine: EngineConfig,
    pub queue: QueueConfig,
    pub templates: PromptTemplates,
    pub lint: LintConfig,
}

pub struct GovernanceService {
    rules: RuleStore,
    context: LiveContext,
    audit: Arc<AuditLog>,
    queue: EscalationQueue,
    engine: PagrlEngine,
    templates_version: String,
    lint: LintConfig,
    halted: AtomicBool,
}

impl std::fmt::Debug for GovernanceService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GovernanceService")
            .field("engine", &self.engine)
            .finish_non_exhaustive()
    }
}

impl GovernanceService {
    pub fn new(
        ruleset: RuleSet,
        seed: ContextState,
        deliberator: Arc<dyn Deliberator>,
        audit: Arc<AuditLog>,
        clock: Arc<dyn Clock>,
        options: ServiceOptions,
    ) -> Self {
        let templates_version = options.templates.version().to_string();
        Self {
            rules: RuleStore::new(ruleset),
            context: LiveContext::new(seed, Some(audit.clone())),
            queue: EscalationQueue::new(audit.clone(), clock.clone(), options.queue),
            engine: PagrlEngine::new(
                deliberator,
                audit.clone(),
                clock,
                options.engine,
                templates_version.clone(),
            ),
            audit,
            templates_version,
            lint: options.lint,
            halted: AtomicBool::new(false),
        }
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    pub fn queue(&self) -> &EscalationQueue {
        &self.queue
    }

    pub fn engine(&self) -> &PagrlEngine {
        &self.engine
    }

    pub fn is_halted(&self) -> bool {
        self.halted.load(Ordering::SeqCst)
    }

    fn guard(&self) -> Result<(), ServiceError> {
        if self.is_halted() {
            Err(ServiceError::Halted)
        } else {
            Ok(())
        }
    }

    fn halt(&self, err: &dyn std::fmt::Display) {
        tracing::error!(%err, "audit log failure; halting governance service");
        self.halted.store(true, Ordering::SeqCst);
    }

    /// Evaluates against the current rule set and a fresh context snapshot.
    pub fn evaluate(&self, intent: &IntentDescriptor) -> Result<Evaluation, ServiceError> {
        let ruleset = self.rules.current();
        let ctx = self.context.snapshot();
        self.evaluate_pinned(intent, &ruleset, &ctx)
    }

    /// Evaluates against an explicitly pinned rule-set version and context snapshot.
    pub fn evaluate_pinned(
        &self,
        intent: &IntentDescriptor,
        ruleset: &RuleSet,
        ctx: &RuntimeContext,
    ) -> Result<Evaluation, ServiceError> {
        self.guard()?;
        intent.validate()?;
        let (valid_tokens, rejected_tokens) = self.queue.validate_tokens(intent);
        let mut checked = intent.clone();
        checked.approval_tokens = valid_tokens.clone();

        let run = match self.engine.run(&checked, ctx, ruleset) {
            Ok(run) => run,
            Err(EngineError::InvalidIntent(e)) => return Err(e.into()),
            Err(EngineError::Audit(e)) => {
                self.halt(&e);
                return Err(e.into());
            }
        };
        let mut escalation_id = None;
        match run.decision.outcome {
            Outcome::Escalate => match self.queue.enqueue(&run.decision, ctx) {
                Ok(item) => escalation_id = Some(item.escalation_id),
                Err(EscalationError::Audit(e)) => {
                    self.halt(&e);
                    return Err(e.into());
                }
                Err(e) => return Err(ServiceError::Escalation(e)),
            },
            Outcome::Proceed if !valid_tokens.is_empty() => {
                if let Err(e) = self
                    .queue
                    .consume_tokens(&run.decision.final_intent.intent_id, &valid_tokens)
                {
                    self.halt(&e);
                    return Err(ServiceError::Escalation(e));
                }
            }
            _ => {}
        }
        Ok(Evaluation {
            trace_ids: run.trace_ids(),
            decision: run.decision,
            run_id: run.run_id,
            ruleset_version: run.ruleset_version,
            rules_retrieved: run.rules_retrieved,
            context_snapshot_id: ctx.snapshot_id().to_string(),
            escalation_id,
            rejected_tokens,
            timings: run.timings,
        })
    }

    pub fn applicable_rules(&self, agent_id: &str, workflow_id: &str) -> ApplicableRules {
        let ruleset = self.rules.current();
        let ctx = self.context.snapshot();
        ApplicableRules {
            ruleset_version: ruleset.version(),
            context_snapshot_id: ctx.snapshot_id().to_string(),
            rules: applicable_rules(&ruleset, agent_id, workflow_id, &ctx)
                .into_iter()
                .cloned()
                .collect(),
        }
    }

    pub fn rules(&self) -> Arc<RuleSet> {
        self.rules.current()
    }

    pub fn rules_version(&self, version: u64) -> Result<Arc<RuleSet>, ServiceError> {
        self.rules
            .version(version)
            .ok_or(ServiceError::UnknownVersion(version))
    }

    pub fn rule_versions(&self) -> Vec<u64> {
        self.rules.versions()
    }

    /// Validates and activates `doc` as the next version. The activation is audited before it
    /// takes effect.
    pub fn publish_rules(
        &self,
        actor: &str,
        doc: RuleSetDocument,
    ) -> Result<PublishReport, ServiceError> {
        self.guard()?;
        let outcome = self.rules.publish_with(doc, |next| -> Result<(), ServiceError> {
            self.audit
                .append(RecordBody::RulesActivated {
                    actor: actor.to_string(),
                    ruleset_version: next.version(),
                    rule_count: next.rules().len(),
                })
                .map(|_| ())
                .map_err(|e| {
                    self.halt(&e);
                    e.into()
                })
        })?;
        let rs = outcome.ruleset();
        Ok(PublishReport {
            activated: matches!(outcome, PublishOutcome::Activated(_)),
            version: rs.version(),
            rule_count: rs.rules().len(),
            warnings: lint_ruleset(rs, &self.lint),
            conflicts: detect_conflicts(rs),
        })
    }

    pub fn validate_rules(&self, doc: &RuleSetDocument) -> ValidationReport {
        let violations = validate_ruleset(doc);
        ValidationReport {
            valid: violations.is_empty(),
            violations,
        }
    }

    pub fn lint_rules(&self, doc: RuleSetDocument) -> Result<Vec<LintWarning>, ServiceError> {
        Ok(lint_ruleset(&RuleSet::new(doc)?, &self.lint))
    }

    pub fn context(&self) -> ContextView {
        let snap = self.context.snapshot();
        ContextView {
            version: snap.version(),
            state: snap.state().clone(),
        }
    }

    pub fn snapshot(&self) -> RuntimeContext {
        self.context.snapshot()
    }

    fn mutate(&self, actor: &str, change: ContextChange) -> Result<u64, ServiceError> {
        self.guard()?;
        self.context.apply(actor, change).map_err(|e| {
            if let ContextError::Audit(inner) = &e {
                self.halt(inner);
            }
            ServiceError::Context(e)
        })
    }

    pub fn set_signal(&self, actor: &str, key: &str, value: Scalar) -> Result<u64, ServiceError> {
        self.mutate(
            actor,
            ContextChange::SetSignal {
                key: key.to_string(),
                value,
            },
        )
    }

    pub fn remove_signal(&self, actor: &str, key: &str) -> Result<u64, ServiceError> {
        self.mutate(actor, ContextChange::RemoveSignal { key: key.to_string() })
    }

    pub fn update_registry(
        &self,
        actor: &str,
        name: &str,
        members: BTreeSet<String>,
    ) -> Result<u64, ServiceError> {
        self.mutate(
            actor,
            ContextChange::UpdateRegistry {
                name: name.to_string(),
                members,
            },
        )
    }

    pub fn query_traces(&self, filter: &TraceFilter) -> TracePage {
        self.audit.query(filter)
    }

    pub fn verify_chain(
        &self,
        range: Option<std::ops::Range<usize>>,
    ) -> Result<VerificationReport, ServiceError> {
        Ok(self.audit.verify_chain(range)?)
    }

    pub fn export_traces(&self) -> Result<Vec<String>, ServiceError> {
        Ok(self.audit.export_lines()?)
    }

    pub fn list_escalations(&self, status: Option<EscalationStatus>) -> Vec<PendingEscalation> {
        self.queue.list(status)
    }

    pub fn get_escalation(&self, id: &str) -> Option<PendingEscalation> {
        self.queue.get(id)
    }

    pub fn resolve_escalation(
        &self,
        id: &str,
        resolution: Resolution,
        operator: &str,
        note: &str,
    ) -> Result<PendingEscalation, ServiceError> {
        self.guard()?;
        self.queue
            .resolve(id, resolution, operator, note)
            .map_err(|e| {
                if let EscalationError::Audit(inner) = &e {
                    self.halt(inner);
                }
                ServiceError::Escalation(e)
            })
    }

    pub fn subscribe(&self) -> std::sync::mpsc::Receiver<QueueEvent> {
        self.queue.subscribe()
    }

    pub fn health(&self) -> HealthReport {
        let rs = self.rules.current();
        let chain_ok = self.audit.verify_chain(None).map(|r| r.ok).unwrap_or(false);
        let deliberator = self.engine.deliberator();
        let deliberator_health = deliberator.health();
        let status = if self.is_halted() {
            ServiceStatus::Halted
        } else if !chain_ok || deliberator_health == BackendHealth::Degraded {
            ServiceStatus::Degraded
        } else {
            ServiceStatus::Ok
        };
        HealthReport {
            status,
            ruleset_version: rs.version(),
            rule_count: rs.rules().len(),
            deliberator: deliberator.name().to_string(),
            deliberator_health,
            chain_ok,
            audit_records: self.audit.len(),
            context_version: self.context.version(),
            pending_escalations: self.queue.list(Some(EscalationStatus::Pending)).len(),
            prompt_template_version: self.templates_version.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SystemClock;
    use crate::deliberator::ReferenceDeliberator;
    use crate::flowr;

    fn service() -> GovernanceService {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        GovernanceService::new(
            flowr::ruleset(),
            flowr::context_seed(),
            Arc::new(ReferenceDeliberator::new()),
            Arc::new(AuditLog::in_memory(clock.clone())),
            clock,
            ServiceOptions::default(),
        )
    }

    fn tokens(item: &PendingEscalation) -> Vec<String> {
        item.approval_tokens.iter().map(|t| t.token.clone()).collect()
    }

    #[test]
    fn approve_round_trip() {
        let svc = service();
        let first = svc.evaluate(&flowr::s2_intent(45000.0)).unwrap();
        let id = first.escalation_id.unwrap();
        let approved = svc.resolve_escalation(&id, Resolution::Approved, "mgr", "ok").unwrap();
        let mut again = flowr::s2_intent(45000.0);
        again.approval_tokens = tokens(&approved);
        let second = svc.evaluate(&again).unwrap();
        assert_eq!(second.decision.outcome, Outcome::Proceed);
        assert!(second.rejected_tokens.is_empty());
        let third = svc.evaluate(&again).unwrap();
        assert_eq!(third.decision.outcome, Outcome::Escalate, "tokens are single use");
        assert_eq!(third.rejected_tokens.len(), 2);
    }

    #[test]
    fn deny_then_resubmit_escalates_again() {
        let svc = service();
        svc.set_signal("op", "supplier_disruption", true.into()).unwrap();
        let first = svc.evaluate(&flowr::s4_intent()).unwrap();
        let denied = svc
            .resolve_escalation(first.escalation_id.as_ref().unwrap(), Resolution::Denied, "mgr", "no")
            .unwrap();
        assert_eq!(denied.status, EscalationStatus::Denied);
        let second = svc.evaluate(&flowr::s4_intent()).unwrap();
        assert_eq!(second.decision.outcome, Outcome::Escalate);
        assert_eq!(second.decision.rules_cited, ["R7"]);
    }

    #[test]
    fn situational_toggle() {
        let svc = service();
        let ids = |svc: &GovernanceService| -> Vec<String> {
            svc.applicable_rules("inventory_replenishment", "flowr")
                .rules
                .into_iter()
                .map(|r| r.id)
                .collect()
        };
        assert!(!ids(&svc).contains(&"R7".to_string()));
        svc.set_signal("op", "supplier_disruption", true.into()).unwrap();
        assert!(ids(&svc).contains(&"R7".to_string()));
        svc.set_signal("op", "supplier_disruption", false.into()).unwrap();
        assert!(!ids(&svc).contains(&"R7".to_string()));
    }

    #[test]
    fn hot_swap_pins_in_flight_versions() {
        let svc = service();
        let pinned = svc.rules();
        let ctx = svc.snapshot();
        let mut doc = pinned.document().clone();
        let r3 = doc.rules.iter_mut().find(|r| r.id == "R3").unwrap();
        r3.constraint.as_mut().unwrap().condition[0].value =
            crate::rules::Operand::Scalar(20000.0.into());
        let report = svc.publish_rules("op", doc.clone()).unwrap();
        assert!(report.activated);
        assert_eq!(report.version, 2);
        assert!(!svc.publish_rules("op", doc).unwrap().activated);

        let mut intent = flowr::s2_intent(15000.0);
        intent.irreversible = false;
        assert_eq!(svc.evaluate(&intent).unwrap().decision.outcome, Outcome::Proceed);
        let old = svc.evaluate_pinned(&intent, &pinned, &ctx).unwrap();
        assert_eq!(old.decision.outcome, Outcome::Escalate);
        assert_eq!(old.ruleset_version, 1);
        assert_eq!(svc.rule_versions(), [1, 2]);
    }

    #[test]
    fn audit_failure_halts() {
        let svc = service();
        svc.audit().inject_append_failure(true);
        let err = svc.evaluate(&flowr::s1_intent()).unwrap_err();
        assert_eq!(err.code(), "STORAGE_FAILURE");
        svc.audit().inject_append_failure(false);
        assert_eq!(svc.evaluate(&flowr::s1_intent()).unwrap_err().code(), "HALTED");
        assert_eq!(svc.health().status, ServiceStatus::Halted);
    }

    #[test]
    fn publish_audit_failure_keeps_old_version() {
        let svc = service();
        let mut doc = svc.rules().document().clone();
        doc.rules.retain(|r| r.id != "R6");
        svc.audit().inject_append_failure(true);
        assert!(svc.publish_rules("op", doc).is_err());
        assert_eq!(svc.rules().version(), 1);
    }

    #[test]
    fn health_reports_flowr() {
        let h = service().health();
        assert_eq!(h.status, ServiceStatus::Ok);
        assert_eq!((h.ruleset_version, h.rule_count), (1, 7));
        assert_eq!(h.deliberator, "reference");
    }

    #[test]
    fn invalid_schema_is_rejected_on_publish() {
        let svc = service();
        let mut doc = svc.rules().document().clone();
        doc.rules[6].predicate = None;
        let err = svc.publish_rules("op", doc).unwrap_err();
        assert_eq!(err.code(), "SCHEMA_ERROR");
    }
}
