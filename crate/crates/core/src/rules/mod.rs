//! The four-layer governance rule hierarchy.
//!
//! A [`RuleSetDocument`] is the JSON form operators author. It only becomes usable once
//! [`RuleSet::new`] (or [`load_ruleset`]) has checked every structural invariant; a [`RuleSet`]
//! is immutable from then on and is what retrieval, deliberation and the [`RuleStore`] work with.

mod conflict;
mod lint;
pub mod predicate;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conflict::{detect_conflicts, ConflictReport};
pub use lint::{lint_rule, lint_ruleset, LintConfig, LintKind, LintWarning};
pub use predicate::{
    evaluate_predicate, ActivationPredicate, CompareOp, Comparison, Lookup, Operand,
    PredicateError,
};
pub use store::{PublishOutcome, RuleStore};

use crate::context::RuntimeContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GovernanceLayer {
    Global = 1,
    Workflow = 2,
    Agent = 3,
    Situational = 4,
}

impl GovernanceLayer {
    pub const ALL: [GovernanceLayer; 4] = [
        GovernanceLayer::Global,
        GovernanceLayer::Workflow,
        GovernanceLayer::Agent,
        GovernanceLayer::Situational,
    ];

    /// Precedence rank; lower wins.
    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            GovernanceLayer::Global => "GLOBAL",
            GovernanceLayer::Workflow => "WORKFLOW",
            GovernanceLayer::Agent => "AGENT",
            GovernanceLayer::Situational => "SITUATIONAL",
        }
    }
}

impl fmt::Display for GovernanceLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Workflow and agent selectors; an empty set matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scope {
    #[serde(default)]
    pub workflow_ids: BTreeSet<String>,
    #[serde(default)]
    pub agent_ids: BTreeSet<String>,
}

impl Scope {
    pub fn matches(&self, agent_id: &str, workflow_id: &str) -> bool {
        (self.workflow_ids.is_empty() || self.workflow_ids.contains(workflow_id))
            && (self.agent_ids.is_empty() || self.agent_ids.contains(agent_id))
    }

    pub fn is_universal(&self) -> bool {
        self.workflow_ids.is_empty() && self.agent_ids.is_empty()
    }

    /// True when some (agent, workflow) pair is matched by both scopes.
    pub fn overlaps(&self, other: &Scope) -> bool {
        fn sets(a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
            a.is_empty() || b.is_empty() || a.intersection(b).next().is_some()
        }
        sets(&self.workflow_ids, &other.workflow_ids) && sets(&self.agent_ids, &other.agent_ids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Modality {
    Forbid,
    RequireApproval,
    ReadOnly,
    Allow,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Forbid => "FORBID",
            Modality::RequireApproval => "REQUIRE_APPROVAL",
            Modality::ReadOnly => "READ_ONLY",
            Modality::Allow => "ALLOW",
        }
    }
}

/// Machine-checkable counterpart of a rule's natural-language text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineConstraint {
    /// Action-class patterns (`a.b` exact, `a.*` prefix, `*` any). Empty governs every action.
    #[serde(default)]
    pub action_classes: BTreeSet<String>,
    pub modality: Modality,
    /// Conjunction over intent parameters, `intent.*` fields and `ctx.*` signals. Empty means the
    /// constraint applies to every intent whose action class matches.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub condition: Vec<Comparison>,
}

impl MachineConstraint {
    pub fn governs(&self, action_class: &str) -> bool {
        self.action_classes.is_empty()
            || self
                .action_classes
                .iter()
                .any(|p| action_class_matches(p, action_class))
    }
}

/// Matches an action class against a pattern: exact, `prefix.*`, or `*`.
pub fn action_class_matches(pattern: &str, action_class: &str) -> bool {
    if pattern == "*" {
        return true;
    }
    match pattern.strip_suffix('*') {
        Some(prefix) if prefix.ends_with('.') => action_class.starts_with(prefix),
        _ => pattern == action_class,
    }
}

/// True when some action class matches both patterns.
pub fn action_patterns_overlap(a: &str, b: &str) -> bool {
    let prefix = |p: &str| -> Option<String> {
        if p == "*" {
            Some(String::new())
        } else {
            p.strip_suffix('*')
                .filter(|s| s.ends_with('.'))
                .map(str::to_string)
        }
    };
    match (prefix(a), prefix(b)) {
        (None, None) => a == b,
        (Some(pa), None) => b.starts_with(&pa),
        (None, Some(pb)) => a.starts_with(&pb),
        (Some(pa), Some(pb)) => pa.starts_with(&pb) || pb.starts_with(&pa),
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    pub layer: GovernanceLayer,
    #[serde(default)]
    pub scope: Scope,
    pub text: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<MachineConstraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<ActivationPredicate>,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

impl Rule {
    /// Whether the rule is in force for this agent/workflow under `ctx`.
    ///
    /// A situational predicate that fails to evaluate (an authoring error) keeps the rule active:
    /// retrieval errs towards more governance, never less.
    pub fn is_active_for(&self, agent_id: &str, workflow_id: &str, ctx: &RuntimeContext) -> bool {
        if !self.enabled || !self.scope.matches(agent_id, workflow_id) {
            return false;
        }
        match &self.predicate {
            Some(p) if self.layer == GovernanceLayer::Situational => {
                match evaluate_predicate(p, ctx) {
                    Ok(active) => active,
                    Err(err) => {
                        tracing::warn!(rule = %self.id, %err, "situational predicate error; rule kept active");
                        true
                    }
                }
            }
            _ => true,
        }
    }

    fn precedence_key(&self) -> (u8, &str) {
        (self.layer.rank(), self.id.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSetMetadata {
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

/// Operator-authored rule-set document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSetDocument {
    pub version: u64,
    #[serde(default)]
    pub metadata: RuleSetMetadata,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    DuplicateId,
    EmptyId,
    EmptyText,
    MissingPredicate,
    UnexpectedPredicate,
    EmptyPredicate,
    GlobalScoped,
    EmptyWorkflowScope,
    EmptyAgentScope,
    InvalidComparison,
    InvalidVersion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({}): {}", self.kind, self.rule_id, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum RuleSetError {
    #[error("PARSE_ERROR: {0}")]
    Parse(String),
    #[error("SCHEMA_ERROR: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Schema { violations: Vec<Violation> },
}

impl RuleSetError {
    pub fn code(&self) -> &'static str {
        match self {
            RuleSetError::Parse(_) => "PARSE_ERROR",
            RuleSetError::Schema { .. } => "SCHEMA_ERROR",
        }
    }
}

/// Checks every structural invariant of a document. Violations are data, never errors.
pub fn validate_ruleset(doc: &RuleSetDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule_id: &str, kind, detail: String| {
        out.push(Violation {
            rule_id: rule_id.to_string(),
            kind,
            detail,
        })
    };
    if doc.version == 0 {
        push("", ViolationKind::InvalidVersion, "version must be >= 1".into());
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &doc.rules {
        *counts.entry(r.id.as_str()).or_default() += 1;
    }
    for (id, n) in &counts {
        if *n > 1 {
            push(id, ViolationKind::DuplicateId, format!("id appears {n} times"));
        }
    }
    for r in &doc.rules {
        let id = r.id.as_str();
        if id.trim().is_empty() {
            push(id, ViolationKind::EmptyId, "rule id is empty".into());
        }
        if r.text.trim().is_empty() {
            push(id, ViolationKind::EmptyText, "rule text is empty".into());
        }
        match (r.layer, &r.predicate) {
            (GovernanceLayer::Situational, None) => push(
                id,
                ViolationKind::MissingPredicate,
                "SITUATIONAL rule needs an activation predicate".into(),
            ),
            (GovernanceLayer::Situational, Some(p)) if p.conjuncts.is_empty() => push(
                id,
                ViolationKind::EmptyPredicate,
                "activation predicate has no conjuncts".into(),
            ),
            (layer, Some(_)) if layer != GovernanceLayer::Situational => push(
                id,
                ViolationKind::UnexpectedPredicate,
                format!("{layer} rule must not carry an activation predicate"),
            ),
            _ => {}
        }
        match r.layer {
            GovernanceLayer::Global if !r.scope.is_universal() => push(
                id,
                ViolationKind::GlobalScoped,
                "GLOBAL rule must have empty scope selectors".into(),
            ),
            GovernanceLayer::Workflow if r.scope.workflow_ids.is_empty() => push(
                id,
                ViolationKind::EmptyWorkflowScope,
                "WORKFLOW rule needs at least one workflow id".into(),
            ),
            GovernanceLayer::Agent if r.scope.agent_ids.is_empty() => push(
                id,
                ViolationKind::EmptyAgentScope,
                "AGENT rule needs at least one agent id".into(),
            ),
            _ => {}
        }
        let comparisons = r
            .predicate
            .iter()
            .flat_map(|p| p.conjuncts.iter())
            .chain(r.constraint.iter().flat_map(|c| c.condition.iter()));
        for c in comparisons {
            if let Some(problem) = c.static_problem() {
                push(id, ViolationKind::InvalidComparison, format!("`{c}`: {problem}"));
            }
        }
    }
    out
}

/// A validated, immutable rule-set version.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    doc: RuleSetDocument,
}

impl RuleSet {
    pub fn new(doc: RuleSetDocument) -> Result<Self, RuleSetError> {
        let violations = validate_ruleset(&doc);
        if violations.is_empty() {
            Ok(Self { doc })
        } else {
            Err(RuleSetError::Schema { violations })
        }
    }

    pub fn version(&self) -> u64 {
        self.doc.version
    }

    pub fn rules(&self) -> &[Rule] {
        &self.doc.rules
    }

    pub fn document(&self) -> &RuleSetDocument {
        &self.doc
    }

    pub fn rule(&self, id: &str) -> Option<&Rule> {
        self.doc.rules.iter().find(|r| r.id == id)
    }

    pub fn count_by_layer(&self) -> BTreeMap<GovernanceLayer, usize> {
        let mut m = BTreeMap::new();
        for r in &self.doc.rules {
            *m.entry(r.layer).or_default() += 1;
        }
        m
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("rule set serializes")
    }
}

/// Parses and validates a rule-set document.
pub fn load_ruleset(source: &[u8]) -> Result<RuleSet, RuleSetError> {
    let doc: RuleSetDocument =
        serde_json::from_slice(source).map_err(|e| RuleSetError::Parse(e.to_string()))?;
    RuleSet::new(doc)
}

/// Enabled rules in force for `(agent_id, workflow_id)` under `ctx`, sorted by layer rank then id.
pub fn applicable_rules<'a>(
    rules: &'a RuleSet,
    agent_id: &str,
    workflow_id: &str,
    ctx: &RuntimeContext,
) -> Vec<&'a Rule> {
    let mut out: Vec<&Rule> = rules
        .rules()
        .iter()
        .filter(|r| r.is_active_for(agent_id, workflow_id, ctx))
        .collect();
    out.sort_by(|a, b| a.precedence_key().cmp(&b.precedence_key()));
    out
}
