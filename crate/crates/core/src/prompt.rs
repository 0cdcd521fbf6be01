//! Governance prompt construction and reply parsing for the language-model deliberator.
//!
//! The system text is the enforcement template, then the governance block (every layer section
//! present, empty ones marked `(none)`), then the reply-format instruction. The user text carries
//! the intent. Rule text only ever appears in the system text, and parsing only ever looks at the
//! model's reply, so rule content cannot alter how a reply is read.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::context::RuntimeContext;
use crate::deliberator::{Confidence, DeliberationVerdict, DeliberatorError};
use crate::escalation::token_rule_id;
use crate::intent::{IntentDescriptor, Outcome, Parameters};
use crate::rules::{GovernanceLayer, Rule};

const DEFAULT_ENFORCEMENT: &str = include_str!("../../../prompts/enforcement.txt");
const DEFAULT_REPLY_FORMAT: &str = include_str!("../../../prompts/reply_format.txt");

/// Versioned prompt text assets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub enforcement: String,
    pub reply_format: String,
    version: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::new(DEFAULT_ENFORCEMENT, DEFAULT_REPLY_FORMAT)
    }
}

impl PromptTemplates {
    pub fn new(enforcement: impl Into<String>, reply_format: impl Into<String>) -> Self {
        let enforcement = enforcement.into();
        let reply_format = reply_format.into();
        let mut h = Sha256::new();
        h.update(enforcement.as_bytes());
        h.update([0u8]);
        h.update(reply_format.as_bytes());
        let digest = hex::encode(h.finalize());
        Self {
            enforcement,
            reply_format,
            version: format!("tpl-{}", &digest[..12]),
        }
    }

    /// Reads `enforcement.txt` and `reply_format.txt` from `dir`.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        Ok(Self::new(
            std::fs::read_to_string(dir.join("enforcement.txt"))?,
            std::fs::read_to_string(dir.join("reply_format.txt"))?,
        ))
    }

    /// Content-derived id recorded in every trace.
    pub fn version(&self) -> &str {
        &self.version
    }
}

/// Renders the per-layer rule listing with its header.
pub fn governance_block(intent: &IntentDescriptor, rules: &[&Rule], ctx: &RuntimeContext) -> String {
    let mut out = String::new();
    out.push_str("GOVERNANCE RULES\n");
    let _ = writeln!(
        out,
        "agent: {} | workflow: {} | context snapshot: {}",
        intent.agent_id,
        intent.workflow_id,
        ctx.snapshot_id()
    );
    let state = ctx.state();
    if state.signals.is_empty() {
        out.push_str("Context signals: (none)\n");
    } else {
        let signals: Vec<String> = state.signals.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "Context signals: {}", signals.join(", "));
    }
    for (name, members) in &state.registries {
        let members: Vec<&str> = members.iter().map(String::as_str).collect();
        let _ = writeln!(out, "Registry {name}: [{}]", members.join(", "));
    }
    for layer in GovernanceLayer::ALL {
        let _ = writeln!(out, "\n[{layer}]");
        let mut any = false;
        for rule in rules.iter().filter(|r| r.layer == layer) {
            any = true;
            let rationale = if rule.rationale.trim().is_empty() {
                "none stated"
            } else {
                rule.rationale.trim()
            };
            let _ = writeln!(out, "- [{}] {} (Rationale: {})", rule.id, rule.text.trim(), rationale);
        }
        if !any {
            out.push_str("(none)\n");
        }
    }
    out
}

/// Deterministic description of the intent for the user turn.
pub fn user_text(intent: &IntentDescriptor) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Intent id: {}", intent.intent_id);
    let _ = writeln!(out, "Agent: {}", intent.agent_id);
    let _ = writeln!(out, "Workflow: {}", intent.workflow_id);
    let _ = writeln!(out, "Action class: {}", intent.action_class);
    let _ = writeln!(out, "Description: {}", intent.description.trim());
    let _ = writeln!(out, "Parameters: {}", params_json(&intent.parameters));
    let _ = writeln!(out, "Irreversible: {}", if intent.irreversible { "yes" } else { "no" });
    if intent.alternatives.is_empty() {
        out.push_str("Alternatives: (none)\n");
    } else {
        out.push_str("Alternatives (overlaid on the parameters, in preference order):\n");
        for (i, alt) in intent.alternatives.iter().enumerate() {
            let _ = writeln!(out, "{}. {}", i + 1, params_json(alt));
        }
    }
    let mut approved: Vec<&str> = intent
        .approval_tokens
        .iter()
        .filter_map(|t| token_rule_id(t))
        .collect();
    approved.sort_unstable();
    approved.dedup();
    if approved.is_empty() {
        out.push_str("Human approvals held: (none)\n");
    } else {
        let _ = writeln!(out, "Human approvals held for rules: {}", approved.join(", "));
    }
    out
}

fn params_json(p: &Parameters) -> String {
    serde_json::to_string(p).expect("parameters serialize")
}

/// Returns `(system_text, user_text)`.
pub fn build_governance_prompt(
    templates: &PromptTemplates,
    intent: &IntentDescriptor,
    rules: &[&Rule],
    ctx: &RuntimeContext,
) -> (String, String) {
    let system = format!(
        "{}\n\n{}\n{}",
        templates.enforcement.trim_end(),
        governance_block(intent, rules, ctx),
        templates.reply_format.trim_end()
    );
    (system, user_text(intent))
}

/// Instruction appended after an unparseable reply.
pub fn repair_instruction(reason: &str) -> String {
    format!(
        "Your previous reply could not be parsed ({reason}). Reply again with exactly one JSON \
         object with the fields decision, rules_consulted, reasoning and, for SELF-CORRECT, \
         proposed_parameters."
    )
}

#[derive(Debug, Deserialize)]
struct ReplyObject {
    decision: String,
    rules_consulted: Vec<String>,
    reasoning: String,
    #[serde(default)]
    proposed_parameters: Option<Parameters>,
    #[serde(default)]
    confidence: Option<Confidence>,
}

/// The first complete JSON object in `text` that has a `decision` key.
fn find_decision_object(text: &str) -> Option<Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            if map.contains_key("decision") {
                return Some(map);
            }
        }
    }
    None
}

/// Parses a structured decision out of a model reply.
pub fn parse_decision(reply: &str) -> Result<DeliberationVerdict, DeliberatorError> {
    let fail = |reason: String| DeliberatorError::ParseFailure {
        reason,
        reply: reply.to_string(),
    };
    let map = find_decision_object(reply)
        .ok_or_else(|| fail("no JSON object with a `decision` field".into()))?;
    let obj: ReplyObject =
        serde_json::from_value(Value::Object(map)).map_err(|e| fail(e.to_string()))?;
    let outcome: Outcome = obj.decision.parse().map_err(fail)?;
    if obj.reasoning.trim().is_empty() {
        return Err(fail("empty reasoning".into()));
    }
    let proposed_parameters = match outcome {
        Outcome::SelfCorrect => Some(
            obj.proposed_parameters
                .ok_or_else(|| fail("SELF-CORRECT without proposed_parameters".into()))?,
        ),
        _ => None,
    };
    Ok(DeliberationVerdict {
        outcome,
        reasoning: obj.reasoning,
        rules_cited: obj.rules_consulted,
        proposed_parameters,
        confidence: obj.confidence.unwrap_or_default(),
    })
}

#[derive(Serialize)]
struct ReplyOut<'a> {
    decision: &'a str,
    rules_consulted: &'a [String],
    reasoning: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    proposed_parameters: Option<&'a Parameters>,
    confidence: Confidence,
}

/// Renders a verdict in the documented reply format.
pub fn render_reply(v: &DeliberationVerdict) -> String {
    let decision = match v.outcome {
        Outcome::SelfCorrect => "SELF-CORRECT",
        other => other.token(),
    };
    serde_json::to_string(&ReplyOut {
        decision,
        rules_consulted: &v.rules_cited,
        reasoning: &v.reasoning,
        proposed_parameters: v.proposed_parameters.as_ref(),
        confidence: v.confidence,
    })
    .expect("reply serializes")
}
