//! The pre-action governance loop.
//!
//! One [`PagrlEngine::run`] takes an intent through retrieval, deliberation and routing. A
//! `SELF_CORRECT` verdict re-enters the loop with the revised intent; every round, whatever its
//! outcome, appends exactly one `pagrl_round` record to the audit log. Anything that goes wrong in
//! deliberation (errors, timeouts, malformed verdicts, citations of rules that were not retrieved)
//! turns into an `ESCALATE` with trigger kind `UNCERTAIN`. The only error a run returns is an audit
//! failure, because a decision that cannot be recorded must not be acted on.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditError, AuditLog, RecordBody, RoundTrace, RulesRetrieved, TraceRecord};
use crate::clock::{elapsed_ms, Clock};
use crate::context::RuntimeContext;
use crate::deliberator::{Confidence, DeliberationVerdict, Deliberator, DeliberatorError};
use crate::intent::{
    ComplianceDecision, EscalationMessage, IntentDescriptor, IntentError, Outcome, Parameters,
    TriggerKind, UNCERTAINTY_RULE_ID,
};
use crate::rules::{action_class_matches, applicable_rules, CompareOp, Operand, Rule, RuleSet};
use crate::value::Scalar;

/// Name recorded in traces for rounds decided without consulting the deliberator.
pub const DEFAULT_ACTION_DELIBERATOR: &str = "default-action";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefaultAction {
    #[default]
    Proceed,
    Escalate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub max_self_correct: u32,
    /// Outcome when no rule applies.
    pub default_action: DefaultAction,
    /// Action-class patterns always treated as irreversible, whatever the intent declares.
    pub irreversible_action_classes: BTreeSet<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_self_correct: 3,
            default_action: DefaultAction::Proceed,
            irreversible_action_classes: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("INVALID_INTENT: {0}")]
    InvalidIntent(#[from] IntentError),
    #[error("audit append failed; halting: {0}")]
    Audit(#[from] AuditError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::InvalidIntent(_) => "INVALID_INTENT",
            EngineError::Audit(_) => "STORAGE_FAILURE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EscalationBuildError {
    #[error("MISSING_RULE_CITATION: a {0:?} escalation must cite at least one rule")]
    MissingRuleCitation(TriggerKind),
}

/// Wall-clock split of one run, measured with the engine's clock.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTimings {
    pub total_ms: f64,
    pub deliberation_ms: f64,
    /// Retrieval, routing and trace appends.
    pub overhead_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagrlRun {
    pub run_id: String,
    pub decision: ComplianceDecision,
    /// One record per deliberation round, in order.
    pub traces: Vec<TraceRecord>,
    pub ruleset_version: u64,
    /// Rule ids retrieved in the first round.
    pub rules_retrieved: Vec<String>,
    pub timings: RunTimings,
}

impl PagrlRun {
    pub fn trace_ids(&self) -> Vec<String> {
        self.traces.iter().map(|t| t.trace_id.clone()).collect()
    }
}

/// A rule is an irreversibility ground when its only condition is `intent.irreversible EQ true`.
fn is_irreversibility_ground(rule: &Rule) -> bool {
    rule.constraint.as_ref().is_some_and(|c| {
        matches!(
            c.condition.as_slice(),
            [cmp] if cmp.key == "intent.irreversible"
                && cmp.op == CompareOp::Eq
                && cmp.value == Operand::Scalar(Scalar::Bool(true))
        )
    })
}

/// Builds the escalation message for an escalating verdict.
///
/// Uncertain verdicts are `UNCERTAIN` and fall back to the synthetic `UNCERTAINTY` id when they cite
/// nothing. Otherwise the kind is `IRREVERSIBLE` when every cited rule is an irreversibility
/// ground and `PROHIBITED` when any other rule is cited.
pub fn build_escalation(
    intent: &IntentDescriptor,
    verdict: &DeliberationVerdict,
    rules: &[&Rule],
) -> Result<EscalationMessage, EscalationBuildError> {
    let trigger_kind = if verdict.confidence == Confidence::Uncertain {
        TriggerKind::Uncertain
    } else if !verdict.rules_cited.is_empty()
        && verdict.rules_cited.iter().all(|id| {
            rules
                .iter()
                .find(|r| &r.id == id)
                .is_some_and(|r| is_irreversibility_ground(r))
        })
    {
        TriggerKind::Irreversible
    } else {
        TriggerKind::Prohibited
    };
    let triggering_rule_ids = if verdict.rules_cited.is_empty() {
        if trigger_kind != TriggerKind::Uncertain {
            return Err(EscalationBuildError::MissingRuleCitation(trigger_kind));
        }
        vec![UNCERTAINTY_RULE_ID.to_string()]
    } else {
        verdict.rules_cited.clone()
    };
    Ok(EscalationMessage {
        intent_summary: intent.summary(),
        triggering_rule_ids,
        reasoning: verdict.reasoning.clone(),
        trigger_kind,
    })
}

fn uncertain(reasoning: String, rules_cited: Vec<String>) -> DeliberationVerdict {
    DeliberationVerdict {
        outcome: Outcome::Escalate,
        reasoning,
        rules_cited,
        proposed_parameters: None,
        confidence: Confidence::Uncertain,
    }
}

pub struct PagrlEngine {
    deliberator: Arc<dyn Deliberator>,
    audit: Arc<AuditLog>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
    prompt_template_version: String,
    run_seq: AtomicU64,
}

impl std::fmt::Debug for PagrlEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PagrlEngine")
            .field("deliberator", &self.deliberator.name())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

struct RoundOutput {
    verdict: DeliberationVerdict,
    deliberator: String,
    failure: Option<String>,
}

impl PagrlEngine {
    pub fn new(
        deliberator: Arc<dyn Deliberator>,
        audit: Arc<AuditLog>,
        clock: Arc<dyn Clock>,
        config: EngineConfig,
        prompt_template_version: impl Into<String>,
    ) -> Self {
        // Every run appends at least one record, so numbering from the record count keeps run
        // ids unique across restarts on a reopened log.
        let run_seq = AtomicU64::new(audit.len() as u64 + 1);
        Self {
            deliberator,
            audit,
            clock,
            config,
            prompt_template_version: prompt_template_version.into(),
            run_seq,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn deliberator(&self) -> &Arc<dyn Deliberator> {
        &self.deliberator
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    fn effective_intent(&self, intent: &IntentDescriptor) -> IntentDescriptor {
        let mut out = intent.clone();
        if self
            .config
            .irreversible_action_classes
            .iter()
            .any(|p| action_class_matches(p, &intent.action_class))
        {
            out.irreversible = true;
        }
        out
    }

    /// Calls the deliberator, enforcing its timeout on a helper thread when it declares one.
    fn call_deliberator(
        &self,
        intent: &IntentDescriptor,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> Result<DeliberationVerdict, DeliberatorError> {
        let Some(limit) = self.deliberator.timeout() else {
            return self.deliberator.deliberate(intent, rules, ctx);
        };
        let (tx, rx) = mpsc::channel();
        let deliberator = self.deliberator.clone();
        let owned_intent = intent.clone();
        let owned_rules: Vec<Rule> = rules.iter().map(|r| (*r).clone()).collect();
        let owned_ctx = ctx.clone();
        let spawned = std::thread::Builder::new()
            .name("deliberation".into())
            .spawn(move || {
                let refs: Vec<&Rule> = owned_rules.iter().collect();
                let _ = tx.send(deliberator.deliberate(&owned_intent, &refs, &owned_ctx));
            });
        if let Err(e) = spawned {
            return Err(DeliberatorError::Transport(format!("could not start deliberation: {e}")));
        }
        match rx.recv_timeout(limit) {
            Ok(result) => result,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(DeliberatorError::Timeout(limit)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(DeliberatorError::Transport("deliberator panicked".into()))
            }
        }
    }

    fn deliberate_round(
        &self,
        intent: &IntentDescriptor,
        rules: &[&Rule],
        ctx: &RuntimeContext,
    ) -> RoundOutput {
        if rules.is_empty() {
            let (outcome, confidence, note) = match self.config.default_action {
                DefaultAction::Proceed => (
                    Outcome::Proceed,
                    Confidence::Unambiguous,
                    "No governance rules apply; the configured default action is PROCEED.",
                ),
                DefaultAction::Escalate => (
                    Outcome::Escalate,
                    Confidence::Uncertain,
                    "No governance rules apply; the configured default action is ESCALATE.",
                ),
            };
            return RoundOutput {
                verdict: DeliberationVerdict {
                    outcome,
                    reasoning: note.to_string(),
                    rules_cited: vec![],
                    proposed_parameters: None,
                    confidence,
                },
                deliberator: DEFAULT_ACTION_DELIBERATOR.to_string(),
                failure: None,
            };
        }
        let name = self.deliberator.name().to_string();
        let checked = self.call_deliberator(intent, rules, ctx).and_then(|v| {
            v.check_contract().map_err(DeliberatorError::Contract)?;
            if let Some(stray) = v.rules_cited.iter().find(|id| !rules.iter().any(|r| &r.id == *id)) {
                return Err(DeliberatorError::Contract(format!(
                    "verdict cites rule {stray} which was not retrieved"
                )));
            }
            Ok(v)
        });
        match checked {
            Ok(verdict) => RoundOutput {
                verdict,
                deliberator: name,
                failure: None,
            },
            Err(e) => {
                tracing::warn!(intent = %intent.intent_id, error = %e, "deliberation failed; escalating");
                RoundOutput {
                    verdict: uncertain(
                        format!("Deliberation failed ({e}). Failing closed: the action is escalated for human review."),
                        vec![],
                    ),
                    deliberator: name,
                    failure: Some(e.to_string()),
                }
            }
        }
    }

    /// Runs the loop for `intent` against one context snapshot and one rule-set version.
    pub fn run(
        &self,
        intent: &IntentDescriptor,
        ctx: &RuntimeContext,
        ruleset: &RuleSet,
    ) -> Result<PagrlRun, EngineError> {
        intent.validate()?;
        let started = self.clock.now();
        let mut current = self.effective_intent(intent);
        let run_id = format!("RUN-{:08}-{}", self.run_seq.fetch_add(1, Ordering::Relaxed), current.intent_id);
        let mut seen: Vec<Parameters> = vec![current.parameters.clone()];
        let mut traces = Vec::new();
        let mut cited: Vec<String> = Vec::new();
        let mut retrieved_first = None;
        let mut deliberation_ms = 0.0;
        let mut parent: Option<String> = None;
        let max_rounds = self.config.max_self_correct + 1;

        for round in 1..=max_rounds {
            let rules = applicable_rules(ruleset, &current.agent_id, &current.workflow_id, ctx);
            let rule_ids: Vec<String> = rules.iter().map(|r| r.id.clone()).collect();
            retrieved_first.get_or_insert_with(|| rule_ids.clone());

            let t0 = self.clock.now();
            let RoundOutput {
                mut verdict,
                deliberator,
                failure,
            } = self.deliberate_round(&current, &rules, ctx);
            deliberation_ms += elapsed_ms(t0, self.clock.now());

            let mut revised_parameters = None;
            if verdict.outcome == Outcome::SelfCorrect {
                let proposed = verdict.proposed_parameters.clone().expect("contract checked");
                let problem = if seen.contains(&proposed) {
                    Some("the revision repeats an intent already deliberated in this run")
                } else if round == max_rounds {
                    Some("the self-correction bound was reached")
                } else {
                    None
                };
                match problem {
                    Some(why) => {
                        let original = verdict.reasoning.clone();
                        verdict = uncertain(
                            format!(
                                "{original}\nThe deliberator proposed SELF_CORRECT, but {why} \
                                 (round {round} of at most {max_rounds}); escalating as uncertain."
                            ),
                            verdict.rules_cited.clone(),
                        );
                    }
                    None => revised_parameters = Some(proposed),
                }
            }
            for id in &verdict.rules_cited {
                if !cited.contains(id) {
                    cited.push(id.clone());
                }
            }

            let escalation = if verdict.outcome == Outcome::Escalate {
                Some(match build_escalation(&current, &verdict, &rules) {
                    Ok(m) => m,
                    Err(e) => {
                        verdict = uncertain(format!("{}\n{e}; escalating as uncertain.", verdict.reasoning), vec![]);
                        build_escalation(&current, &verdict, &rules).expect("uncertain always builds")
                    }
                })
            } else {
                None
            };

            let record = self.audit.append(RecordBody::PagrlRound(RoundTrace {
                run_id: run_id.clone(),
                round_index: round,
                agent_id: current.agent_id.clone(),
                workflow_id: current.workflow_id.clone(),
                intent: current.clone(),
                parent_intent_id: parent.clone(),
                rules_retrieved: RulesRetrieved {
                    ruleset_version: ruleset.version(),
                    rule_ids,
                },
                rules_cited: verdict.rules_cited.clone(),
                reasoning: verdict.reasoning.clone(),
                decision: verdict.outcome,
                deliberator,
                prompt_template_version: self.prompt_template_version.clone(),
                context_snapshot_id: ctx.snapshot_id().to_string(),
                revised_parameters: revised_parameters.clone(),
                failure,
            }))?;
            traces.push(record);

            if let Some(params) = revised_parameters {
                seen.push(params.clone());
                parent = Some(current.intent_id.clone());
                current = current.revised(params, round + 1);
                continue;
            }

            let finished = self.clock.now();
            let total_ms = elapsed_ms(started, finished);
            let decision = ComplianceDecision {
                outcome: verdict.outcome,
                reasoning: verdict.reasoning,
                rules_cited: if escalation.is_some() {
                    escalation
                        .as_ref()
                        .map(|m| {
                            let mut ids = cited.clone();
                            for id in &m.triggering_rule_ids {
                                if !ids.contains(id) && id != UNCERTAINTY_RULE_ID {
                                    ids.push(id.clone());
                                }
                            }
                            ids
                        })
                        .unwrap_or_default()
                } else {
                    cited
                },
                revised_intent: None,
                escalation,
                deliberation_rounds: round,
                final_intent: current,
            };
            return Ok(PagrlRun {
                run_id,
                decision,
                traces,
                ruleset_version: ruleset.version(),
                rules_retrieved: retrieved_first.unwrap_or_default(),
                timings: RunTimings {
                    total_ms,
                    deliberation_ms,
                    overhead_ms: (total_ms - deliberation_ms).max(0.0),
                },
            });
        }
        unreachable!("the final round never continues")
    }
}
