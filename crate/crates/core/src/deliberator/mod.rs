//! Permissibility reasoning over retrieved rules.

mod llm;
mod reference;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::RuntimeContext;
use crate::intent::{IntentDescriptor, Outcome, Parameters};
use crate::rules::Rule;

pub use llm::{
    ChatMessage, CompletionEndpointConfig, CompletionTransport, HttpTransport, LlmDeliberator,
};
pub use reference::{Disposition, ReferenceDeliberator, RuleCheck};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Confidence {
    #[default]
    Unambiguous,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliberationVerdict {
    pub outcome: Outcome,
    pub reasoning: String,
    pub rules_cited: Vec<String>,
    /// Present iff `outcome` is `SELF_CORRECT`: the full parameter map to retry with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed_parameters: Option<Parameters>,
    #[serde(default)]
    pub confidence: Confidence,
}

impl DeliberationVerdict {
    /// Checks the verdict's own invariants; a violation is treated like a backend failure.
    pub fn check_contract(&self) -> Result<(), String> {
        match (self.outcome, &self.proposed_parameters) {
            (Outcome::SelfCorrect, None) => {
                return Err("SELF_CORRECT verdict without proposed parameters".into())
            }
            (Outcome::Proceed | Outcome::Escalate, Some(_)) => {
                return Err(format!("{} verdict carries proposed parameters", self.outcome))
            }
            _ => {}
        }
        if self.confidence == Confidence::Uncertain && self.outcome != Outcome::Escalate {
            return Err(format!("uncertain verdict must escalate, got {}", self.outcome));
        }
        if self.reasoning.trim().is_empty() {
            return Err("verdict reasoning is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeliberatorError {
    #[error("TIMEOUT: deliberation exceeded {0:?}")]
    Timeout(Duration),
    #[error("TRANSPORT_ERROR: {0}")]
    Transport(String),
    #[error("PARSE_FAILURE: {reason}")]
    ParseFailure { reason: String, reply: String },
    #[error("CONTRACT_VIOLATION: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendHealth {
    Healthy,
    Degraded,
}

/// Stage-three reasoning backend.
///
/// Implementations must not mutate their inputs and must either return within
/// [`Deliberator::timeout`] or fail; the engine turns every failure into an escalation.
pub trait Deliberator: Send + Sync {
    fn name(&self) -> &str;

    fn deliberate(
        &self,
        intent: &IntentDescriptor,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> Result<DeliberationVerdict, DeliberatorError>;

    /// Upper bound the engine enforces on one call. `None` means the backend is known to be
    /// bounded (pure computation).
    fn timeout(&self) -> Option<Duration> {
        None
    }

    fn health(&self) -> BackendHealth {
        BackendHealth::Healthy
    }
}
