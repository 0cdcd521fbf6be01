//! Pre-action governance engine for autonomous agent workflows.
//!
//! Every consequential agent action is described as an [`IntentDescriptor`] and run through a
//! four-stage loop before it executes: the rules applicable to the agent, its workflow and the
//! current runtime context are retrieved from a layered rule set, a [`Deliberator`] reasons about
//! permissibility, and the intent is routed to proceed, self-correct (re-entering the loop with a
//! revised intent) or escalate to a human operator. Each deliberation round is written to a
//! hash-chained, append-only trace log.
//!
//! The crate is organised by responsibility:
//!
//! - [`rules`]: the four-layer rule hierarchy, predicates, validation, lint and conflict detection
//! - [`context`]: runtime signals and registries with snapshot semantics
//! - [`deliberator`]: the deliberation contract, the deterministic reference backend and the
//!   chat-completion backend
//! - [`prompt`]: governance/enforcement prompt assembly and reply parsing
//! - [`engine`]: the loop itself
//! - [`audit`]: the trace log
//! - [`escalation`]: the human review queue and approval tokens
//! - [`service`]: a facade wiring the pieces together for the API surfaces
//! - [`harness`]: scripted scenario runner and evaluation metrics

pub mod audit;
pub mod clock;
pub mod context;
pub mod deliberator;
pub mod engine;
pub mod escalation;
pub mod flowr;
pub mod harness;
pub mod intent;
pub mod prompt;
pub mod rules;
pub mod service;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod value;

pub use audit::{AuditError, AuditLog, Durability, RecordBody, TraceFilter, TraceRecord, VerificationReport};
pub use clock::{Clock, FixedClock, ManualClock, SystemClock};
pub use context::{ContextState, LiveContext, RuntimeContext};
pub use deliberator::{
    Confidence, DeliberationVerdict, Deliberator, DeliberatorError, ReferenceDeliberator,
};
pub use engine::{DefaultAction, EngineConfig, EngineError, PagrlEngine, PagrlRun};
pub use escalation::{
    ApprovalToken, EscalationError, EscalationQueue, EscalationStatus, PendingEscalation,
    QueueConfig, QueueEvent, Resolution,
};
pub use intent::{ComplianceDecision, EscalationMessage, IntentDescriptor, Outcome, Parameters, TriggerKind};
pub use rules::{
    applicable_rules, load_ruleset, GovernanceLayer, MachineConstraint, Modality, Rule, RuleSet,
    RuleSetDocument, RuleSetError, RuleStore, Scope,
};
pub use service::{GovernanceService, ServiceError};
pub use value::Scalar;
