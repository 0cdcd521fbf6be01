//! Intents and the decisions the loop produces for them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::Scalar;

pub type Parameters = BTreeMap<String, Scalar>;

/// A candidate action an agent wants to take.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentDescriptor {
    pub intent_id: String,
    pub agent_id: String,
    pub workflow_id: String,
    /// Dotted taxonomy, e.g. `purchase_order.submit`.
    pub action_class: String,
    pub description: String,
    #[serde(default)]
    pub parameters: Parameters,
    #[serde(default)]
    pub irreversible: bool,
    /// Candidate parameter substitutions, in preference order. Each entry is overlaid on
    /// `parameters`.
    #[serde(default)]
    pub alternatives: Vec<Parameters>,
    /// Approval tokens minted by resolved escalations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub approval_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentError {
    #[error("intent field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("alternative #{0} does not change the primary parameters")]
    AlternativeEqualsPrimary(usize),
}

impl IntentDescriptor {
    pub fn validate(&self) -> Result<(), IntentError> {
        let fields = [
            ("intent_id", &self.intent_id),
            ("agent_id", &self.agent_id),
            ("workflow_id", &self.workflow_id),
            ("action_class", &self.action_class),
            ("description", &self.description),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(IntentError::EmptyField(name));
            }
        }
        for (i, alt) in self.alternatives.iter().enumerate() {
            if self.overlay(alt) == self.parameters {
                return Err(IntentError::AlternativeEqualsPrimary(i));
            }
        }
        Ok(())
    }

    /// The primary parameters with `alt` laid over them.
    pub fn overlay(&self, alt: &Parameters) -> Parameters {
        let mut merged = self.parameters.clone();
        merged.extend(alt.iter().map(|(k, v)| (k.clone(), v.clone())));
        merged
    }

    /// A copy with `parameters` replaced. Agent, workflow and action class never change; alternatives
    /// that would be no-ops against the new parameters are dropped.
    pub fn revised(&self, parameters: Parameters, round: u32) -> IntentDescriptor {
        let mut next = self.clone();
        next.intent_id = format!("{}~r{}", root_intent_id(&self.intent_id), round);
        next.parameters = parameters;
        let alternatives = std::mem::take(&mut next.alternatives);
        next.alternatives = alternatives
            .into_iter()
            .filter(|alt| next.overlay(alt) != next.parameters)
            .collect();
        next
    }

    /// One-line summary used in escalation messages.
    pub fn summary(&self) -> String {
        let params = serde_json::to_string(&self.parameters).expect("parameters serialize");
        format!(
            "{} intends {} ({}): {} parameters={}{}",
            self.agent_id,
            self.action_class,
            self.workflow_id,
            self.description,
            params,
            if self.irreversible { " [irreversible]" } else { "" }
        )
    }
}

/// Strips a `~rN` revision suffix.
pub fn root_intent_id(id: &str) -> &str {
    match id.rsplit_once("~r") {
        Some((root, n)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => root,
        _ => id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Proceed,
    SelfCorrect,
    Escalate,
}

impl Outcome {
    pub fn token(self) -> &'static str {
        match self {
            Outcome::Proceed => "PROCEED",
            Outcome::SelfCorrect => "SELF_CORRECT",
            Outcome::Escalate => "ESCALATE",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Outcome {
    type Err = String;

    /// Case-insensitive; `-`, `_` and spaces between words are interchangeable.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter_map(|c| match c {
                '-' | '_' | ' ' => None,
                c => Some(c.to_ascii_uppercase()),
            })
            .collect();
        match norm.as_str() {
            "PROCEED" => Ok(Outcome::Proceed),
            "SELFCORRECT" => Ok(Outcome::SelfCorrect),
            "ESCALATE" => Ok(Outcome::Escalate),
            _ => Err(format!("unknown decision `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TriggerKind {
    Prohibited,
    Irreversible,
    Uncertain,
}

/// Rule id used in escalations that no single rule triggered.
pub const UNCERTAINTY_RULE_ID: &str = "UNCERTAINTY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationMessage {
    pub intent_summary: String,
    pub triggering_rule_ids: Vec<String>,
    pub reasoning: String,
    pub trigger_kind: TriggerKind,
}

/// Final routing decision of one loop execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceDecision {
    pub outcome: Outcome,
    pub reasoning: String,
    pub rules_cited: Vec<String>,
    /// Present iff `outcome` is `SELF_CORRECT`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_intent: Option<IntentDescriptor>,
    /// Present iff `outcome` is `ESCALATE`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escalation: Option<EscalationMessage>,
    pub deliberation_rounds: u32,
    /// The intent the outcome applies to: the submitted one, or the last revision after
    /// self-correction. This is what the caller executes on `PROCEED`.
    pub final_intent: IntentDescriptor,
}

impl ComplianceDecision {
    pub fn is_well_formed(&self) -> bool {
        self.deliberation_rounds >= 1
            && match self.outcome {
                Outcome::Proceed => self.revised_intent.is_none() && self.escalation.is_none(),
                Outcome::SelfCorrect => self.revised_intent.is_some() && self.escalation.is_none(),
                Outcome::Escalate => self.revised_intent.is_none() && self.escalation.is_some(),
            }
    }
}
