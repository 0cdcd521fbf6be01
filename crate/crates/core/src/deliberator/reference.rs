//! Deterministic deliberator driven by machine constraints.
//!
//! Rules without a constraint are listed as not machine-checkable and never block. For the rest:
//!
//! 1. A matching `FORBID` blocks. If some alternative parameter overlay would pass every check,
//!    the verdict is `SELF_CORRECT` with the first such overlay; otherwise `ESCALATE`.
//! 2. A matching `REQUIRE_APPROVAL`, or a `READ_ONLY` rule matched by a non-read action, gates the
//!    intent unless it carries an approval token for that rule; gated intents escalate.
//! 3. An `ALLOW` from a strictly higher-precedence layer overrides a lower-layer block or gate.
//!    Nothing from a lower layer ever overrides a higher one.
//! 4. Otherwise `PROCEED`.
//!
//! A condition that fails to evaluate escalates with `UNCERTAIN` confidence.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Confidence, DeliberationVerdict, Deliberator, DeliberatorError};
use crate::context::RuntimeContext;
use crate::escalation::token_rule_id;
use crate::intent::{IntentDescriptor, Outcome, Parameters};
use crate::rules::predicate::evaluate_all;
use crate::rules::{Lookup, Modality, Rule};
use crate::value::Scalar;

/// Resolves constraint-condition keys: `intent.<field>`, `ctx.<signal>`, else a parameter.
pub(crate) struct IntentLookup<'a> {
    pub intent: &'a IntentDescriptor,
    pub parameters: &'a Parameters,
    pub ctx: &'a RuntimeContext,
}

impl Lookup for IntentLookup<'_> {
    fn value(&self, key: &str) -> Option<Scalar> {
        if let Some(field) = key.strip_prefix("intent.") {
            return match field {
                "irreversible" => Some(Scalar::Bool(self.intent.irreversible)),
                "action_class" => Some(self.intent.action_class.as_str().into()),
                "agent_id" => Some(self.intent.agent_id.as_str().into()),
                "workflow_id" => Some(self.intent.workflow_id.as_str().into()),
                "intent_id" => Some(self.intent.intent_id.as_str().into()),
                _ => None,
            };
        }
        if let Some(signal) = key.strip_prefix("ctx.") {
            return self.ctx.value(signal);
        }
        self.parameters.get(key).cloned()
    }

    fn registry(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.ctx.registry(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Disposition {
    NotMachineCheckable,
    ActionNotGoverned,
    ConditionNotMet,
    Allowed,
    ReadOnlySatisfied,
    Forbidden,
    ApprovalRequired,
    ReadOnlyViolated,
    Approved,
    OverriddenBy { rule_id: String },
    ConditionError { message: String },
}

impl Disposition {
    fn blocks(&self) -> bool {
        matches!(self, Disposition::Forbidden)
    }

    fn gates(&self) -> bool {
        matches!(self, Disposition::ApprovalRequired | Disposition::ReadOnlyViolated)
    }

    fn describe(&self) -> String {
        match self {
            Disposition::NotMachineCheckable => "not machine-checkable".into(),
            Disposition::ActionNotGoverned => "action class not governed".into(),
            Disposition::ConditionNotMet => "condition not met; satisfied".into(),
            Disposition::Allowed => "explicitly allowed".into(),
            Disposition::ReadOnlySatisfied => "read-only satisfied by a read action".into(),
            Disposition::Forbidden => "VIOLATED (forbidden)".into(),
            Disposition::ApprovalRequired => "VIOLATED (human approval required, none held)".into(),
            Disposition::ReadOnlyViolated => "VIOLATED (write action under read-only restriction)".into(),
            Disposition::Approved => "approval token held; satisfied".into(),
            Disposition::OverriddenBy { rule_id } => {
                format!("would block, overridden by higher-precedence {rule_id}")
            }
            Disposition::ConditionError { message } => format!("condition error: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCheck {
    pub rule_id: String,
    pub disposition: Disposition,
}

#[derive(Debug, Clone)]
pub struct ReferenceDeliberator {
    read_verbs: BTreeSet<String>,
}

impl Default for ReferenceDeliberator {
    fn default() -> Self {
        Self::new()
    }
}

impl ReferenceDeliberator {
    pub const NAME: &'static str = "reference";

    pub fn new() -> Self {
        let verbs = ["read", "get", "list", "query", "fetch", "search", "view", "describe"];
        Self {
            read_verbs: verbs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_read_verbs(read_verbs: impl IntoIterator<Item = String>) -> Self {
        Self {
            read_verbs: read_verbs.into_iter().collect(),
        }
    }

    /// A read action is one whose last dotted segment is a read verb.
    pub fn is_read_action(&self, action_class: &str) -> bool {
        let verb = action_class.rsplit('.').next().unwrap_or(action_class);
        self.read_verbs.contains(verb)
    }

    /// Per-rule dispositions for `intent` evaluated with `parameters`.
    pub fn check(
        &self,
        intent: &IntentDescriptor,
        parameters: &Parameters,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> Vec<RuleCheck> {
        let approved: HashSet<&str> = intent
            .approval_tokens
            .iter()
            .filter_map(|t| token_rule_id(t))
            .collect();
        let lookup = IntentLookup {
            intent,
            parameters,
            ctx,
        };
        let mut checks: Vec<RuleCheck> = rules
            .iter()
            .map(|rule| {
                let disposition = match &rule.constraint {
                    None => Disposition::NotMachineCheckable,
                    Some(c) if !c.governs(&intent.action_class) => Disposition::ActionNotGoverned,
                    Some(c) => match evaluate_all(&c.condition, &lookup) {
                        Err(e) => Disposition::ConditionError {
                            message: e.to_string(),
                        },
                        Ok(false) => Disposition::ConditionNotMet,
                        Ok(true) => match c.modality {
                            Modality::Allow => Disposition::Allowed,
                            Modality::Forbid => Disposition::Forbidden,
                            Modality::RequireApproval if approved.contains(rule.id.as_str()) => {
                                Disposition::Approved
                            }
                            Modality::RequireApproval => Disposition::ApprovalRequired,
                            Modality::ReadOnly if self.is_read_action(&intent.action_class) => {
                                Disposition::ReadOnlySatisfied
                            }
                            Modality::ReadOnly if approved.contains(rule.id.as_str()) => {
                                Disposition::Approved
                            }
                            Modality::ReadOnly => Disposition::ReadOnlyViolated,
                        },
                    },
                };
                RuleCheck {
                    rule_id: rule.id.clone(),
                    disposition,
                }
            })
            .collect();

        // Higher-precedence ALLOW overrides lower-precedence blocks and gates.
        for i in 0..checks.len() {
            if !(checks[i].disposition.blocks() || checks[i].disposition.gates()) {
                continue;
            }
            let rank = rules[i].layer.rank();
            let overriding = (0..checks.len()).find(|&j| {
                checks[j].disposition == Disposition::Allowed && rules[j].layer.rank() < rank
            });
            if let Some(j) = overriding {
                checks[i].disposition = Disposition::OverriddenBy {
                    rule_id: rules[j].id.clone(),
                };
            }
        }
        checks
    }

    fn passes(checks: &[RuleCheck]) -> bool {
        checks.iter().all(|c| {
            !c.disposition.blocks()
                && !c.disposition.gates()
                && !matches!(c.disposition, Disposition::ConditionError { .. })
        })
    }

    pub fn reference_deliberate(
        &self,
        intent: &IntentDescriptor,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> DeliberationVerdict {
        let checks = self.check(intent, &intent.parameters, rules, ctx);
        let mut reasoning = String::new();
        let _ = writeln!(
            reasoning,
            "Intent {}: {} requests {} in workflow {} (irreversible: {}).",
            intent.intent_id,
            intent.agent_id,
            intent.action_class,
            intent.workflow_id,
            if intent.irreversible { "yes" } else { "no" }
        );
        if rules.is_empty() {
            reasoning.push_str("No governance rules apply.\n");
        }
        for (rule, check) in rules.iter().zip(&checks) {
            let modality = rule
                .constraint
                .as_ref()
                .map(|c| format!(" {}", c.modality.name()))
                .unwrap_or_default();
            let _ = writeln!(
                reasoning,
                "- {} [{}]{}: {}",
                rule.id,
                rule.layer,
                modality,
                check.disposition.describe()
            );
        }

        let ids = |pred: &dyn Fn(&Disposition) -> bool| -> Vec<String> {
            checks
                .iter()
                .filter(|c| pred(&c.disposition))
                .map(|c| c.rule_id.clone())
                .collect()
        };
        let errored = ids(&|d| matches!(d, Disposition::ConditionError { .. }));
        let blocking = ids(&|d| d.blocks());
        let gating = ids(&|d| d.gates());

        let verdict = |outcome, cited: Vec<String>, proposed, confidence, mut reasoning: String| {
            let _ = write!(reasoning, "Decision: {outcome}");
            if !cited.is_empty() {
                let _ = write!(reasoning, " citing {}", cited.join(", "));
            }
            reasoning.push('.');
            DeliberationVerdict {
                outcome,
                reasoning,
                rules_cited: cited,
                proposed_parameters: proposed,
                confidence,
            }
        };

        if !errored.is_empty() {
            reasoning.push_str("A rule condition could not be evaluated; permissibility is uncertain.\n");
            return verdict(Outcome::Escalate, errored, None, Confidence::Uncertain, reasoning);
        }
        if !blocking.is_empty() {
            for (n, alt) in intent.alternatives.iter().enumerate() {
                let candidate = intent.overlay(alt);
                if Self::passes(&self.check(intent, &candidate, rules, ctx)) {
                    let _ = writeln!(
                        reasoning,
                        "Alternative #{} {} satisfies every machine-checkable rule.",
                        n + 1,
                        serde_json::to_string(alt).expect("parameters serialize")
                    );
                    return verdict(
                        Outcome::SelfCorrect,
                        blocking,
                        Some(candidate),
                        Confidence::Unambiguous,
                        reasoning,
                    );
                }
            }
            if intent.alternatives.is_empty() {
                reasoning.push_str("No alternatives were offered; the action cannot be revised into compliance.\n");
            } else {
                reasoning.push_str("No offered alternative satisfies every machine-checkable rule.\n");
            }
            let cited = rules
                .iter()
                .zip(&checks)
                .filter(|(_, c)| c.disposition.blocks() || c.disposition.gates())
                .map(|(r, _)| r.id.clone())
                .collect();
            return verdict(Outcome::Escalate, cited, None, Confidence::Unambiguous, reasoning);
        }
        if !gating.is_empty() {
            reasoning.push_str("Human confirmation is required before this action may execute.\n");
            return verdict(Outcome::Escalate, gating, None, Confidence::Unambiguous, reasoning);
        }
        verdict(Outcome::Proceed, Vec::new(), None, Confidence::Unambiguous, reasoning)
    }
}

impl Deliberator for ReferenceDeliberator {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn deliberate(
        &self,
        intent: &IntentDescriptor,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> Result<DeliberationVerdict, DeliberatorError> {
        Ok(self.reference_deliberate(intent, rules, ctx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowr;
    use crate::rules::applicable_rules;

    fn deliberate(intent: &IntentDescriptor, ctx: &RuntimeContext) -> DeliberationVerdict {
        let rs = flowr::ruleset();
        let rules = applicable_rules(&rs, &intent.agent_id, &intent.workflow_id, ctx);
        ReferenceDeliberator::new().reference_deliberate(intent, &rules, ctx)
    }

    fn calm() -> RuntimeContext {
        RuntimeContext::from_state(flowr::context_seed())
    }

    #[test]
    fn s1_read_proceeds() {
        let v = deliberate(&flowr::s1_intent(), &calm());
        assert_eq!(v.outcome, Outcome::Proceed);
        assert!(v.rules_cited.is_empty());
        assert!(v.reasoning.contains("R5 [AGENT] READ_ONLY: read-only satisfied"));
    }

    #[test]
    fn s1_write_would_escalate_on_read_only() {
        let mut i = flowr::s1_intent();
        i.action_class = "sales_data.update".into();
        let v = deliberate(&i, &calm());
        assert_eq!(v.outcome, Outcome::Escalate);
        assert_eq!(v.rules_cited, ["R5"]);
    }

    #[test]
    fn s2_escalates_on_r1_and_r3() {
        let v = deliberate(&flowr::s2_intent(45000.0), &calm());
        assert_eq!(v.outcome, Outcome::Escalate);
        assert_eq!(v.rules_cited, ["R1", "R3"]);
    }

    #[test]
    fn s3_self_corrects_to_first_verified_alternative() {
        let i = flowr::s3_intent();
        let v = deliberate(&i, &calm());
        assert_eq!(v.outcome, Outcome::SelfCorrect);
        assert_eq!(v.rules_cited, ["R4"]);
        let proposed = v.proposed_parameters.unwrap();
        assert_eq!(proposed["supplier_id"], Scalar::from("SUP-002"));
        assert_eq!(proposed["sku"], i.parameters["sku"]);
    }

    #[test]
    fn s3_without_alternatives_escalates() {
        let mut i = flowr::s3_intent();
        i.alternatives.clear();
        let v = deliberate(&i, &calm());
        assert_eq!(v.outcome, Outcome::Escalate);
        assert_eq!(v.rules_cited, ["R4"]);
    }

    #[test]
    fn s4_escalates_on_r7_only_during_disruption() {
        let mut state = flowr::context_seed();
        state.signals.insert("supplier_disruption".into(), true.into());
        let v = deliberate(&flowr::s4_intent(), &RuntimeContext::from_state(state));
        assert_eq!(v.outcome, Outcome::Escalate);
        assert_eq!(v.rules_cited, ["R7"]);
        let v = deliberate(&flowr::s4_intent(), &calm());
        assert_eq!(v.outcome, Outcome::Proceed);
    }

    #[test]
    fn token_truth_table_for_r1_r3() {
        // Expected: PROCEED only when both R1 and R3 tokens are held.
        for r1 in [false, true] {
            for r3 in [false, true] {
                let mut i = flowr::s2_intent(45000.0);
                if r1 {
                    i.approval_tokens.push("apr:R1:00ff".into());
                }
                if r3 {
                    i.approval_tokens.push("apr:R3:00ff".into());
                }
                let v = deliberate(&i, &calm());
                let expected_cited: Vec<&str> = [("R1", !r1), ("R3", !r3)]
                    .iter()
                    .filter(|(_, missing)| *missing)
                    .map(|(id, _)| *id)
                    .collect();
                if r1 && r3 {
                    assert_eq!(v.outcome, Outcome::Proceed);
                } else {
                    assert_eq!(v.outcome, Outcome::Escalate);
                    assert_eq!(v.rules_cited, expected_cited);
                }
            }
        }
    }

    #[test]
    fn token_for_other_rule_does_not_satisfy() {
        let mut i = flowr::s2_intent(45000.0);
        i.approval_tokens = vec!["apr:R4:aa".into(), "apr:R7:bb".into()];
        assert_eq!(deliberate(&i, &calm()).rules_cited, ["R1", "R3"]);
    }

    #[test]
    fn verified_registry_exhaustive() {
        // registry in {∅, {SUP-001}} x supplier in {SUP-001, SUP-002}: violation iff not a member
        for registry in [vec![], vec!["SUP-001"]] {
            for supplier in ["SUP-001", "SUP-002"] {
                let mut state = flowr::context_seed();
                state.registries.insert(
                    "verified_suppliers".into(),
                    registry.iter().map(|s| s.to_string()).collect(),
                );
                let mut i = flowr::s3_intent();
                i.parameters.insert("supplier_id".into(), supplier.into());
                i.alternatives.clear();
                let v = deliberate(&i, &RuntimeContext::from_state(state));
                let violates = !registry.contains(&supplier);
                assert_eq!(v.rules_cited.contains(&"R4".to_string()), violates);
                assert_eq!(v.outcome == Outcome::Proceed, !violates);
            }
        }
    }

    #[test]
    fn deterministic_reasoning() {
        let ctx = calm();
        let a = deliberate(&flowr::s2_intent(45000.0), &ctx);
        let b = deliberate(&flowr::s2_intent(45000.0), &ctx);
        assert_eq!(a, b);
    }
}
