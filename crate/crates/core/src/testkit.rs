//! Randomized rule-set instances and brute-force oracles for property tests.
//!
//! The oracles here deliberately share no code with [`crate::rules`] or the reference
//! deliberator: scope matching, predicate evaluation and action-pattern matching are written out
//! again from their definitions so a bug in one place cannot hide a bug in the other.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use crate::context::{ContextState, RuntimeContext};
use crate::deliberator::ReferenceDeliberator;
use crate::intent::{IntentDescriptor, Outcome, Parameters};
use crate::rules::{
    applicable_rules, ActivationPredicate, CompareOp, Comparison, GovernanceLayer,
    MachineConstraint, Modality, Operand, Rule, RuleSet, RuleSetDocument, Scope,
};
use crate::value::Scalar;

pub const AGENTS: [&str; 3] = ["a0", "a1", "a2"];
pub const WORKFLOWS: [&str; 3] = ["w0", "w1", "w2"];
pub const ACTIONS: [&str; 4] = ["item.read", "item.write", "order.submit", "order.cancel"];
const PATTERNS: [&str; 6] = ["item.read", "item.write", "order.submit", "item.*", "order.*", "*"];
const SIGNALS: [&str; 3] = ["s0", "s1", "s9"];
const PARAMS: [&str; 2] = ["p0", "p1"];
const MEMBERS: [&str; 3] = ["x", "y", "z"];

/// One randomized (rule set, intent, context) triple.
#[derive(Debug, Clone)]
pub struct CascadeInstance {
    pub doc: RuleSetDocument,
    pub intent: IntentDescriptor,
    pub context: ContextState,
}

impl CascadeInstance {
    pub fn ruleset(&self) -> RuleSet {
        RuleSet::new(self.doc.clone()).expect("generated documents are valid")
    }

    pub fn runtime_context(&self) -> RuntimeContext {
        RuntimeContext::from_state(self.context.clone())
    }
}

fn arb_scalar() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        any::<bool>().prop_map(Scalar::Bool),
        (0i64..4).prop_map(|n| Scalar::Number(n as f64)),
        prop::sample::select(&MEMBERS[..]).prop_map(Scalar::from),
    ]
}

fn arb_op() -> impl Strategy<Value = CompareOp> {
    prop::sample::select(vec![
        CompareOp::Eq,
        CompareOp::Ne,
        CompareOp::Gt,
        CompareOp::Gte,
        CompareOp::Lt,
        CompareOp::Lte,
        CompareOp::In,
        CompareOp::NotIn,
    ])
}

fn arb_comparison(keys: Vec<String>) -> impl Strategy<Value = Comparison> {
    (
        prop::sample::select(keys),
        arb_op(),
        arb_scalar(),
        prop::collection::vec(arb_scalar(), 0..3),
        any::<bool>(),
    )
        .prop_map(|(key, op, scalar, list, use_registry)| {
            let value = match op {
                CompareOp::In | CompareOp::NotIn if use_registry => {
                    Operand::Scalar(Scalar::from("registry:reg0"))
                }
                CompareOp::In | CompareOp::NotIn => Operand::List(list),
                _ => Operand::Scalar(scalar),
            };
            Comparison::new(key, op, value)
        })
}

fn arb_subset(universe: &'static [&'static str], min: usize) -> impl Strategy<Value = BTreeSet<String>> {
    prop::sample::subsequence(universe, min..=universe.len())
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

fn arb_scope(layer: GovernanceLayer) -> BoxedStrategy<Scope> {
    let scope = |w, a| Scope {
        workflow_ids: w,
        agent_ids: a,
    };
    match layer {
        GovernanceLayer::Global => Just(Scope::default()).boxed(),
        GovernanceLayer::Workflow => (arb_subset(&WORKFLOWS, 1), arb_subset(&AGENTS, 0))
            .prop_map(move |(w, a)| scope(w, a))
            .boxed(),
        GovernanceLayer::Agent => (arb_subset(&WORKFLOWS, 0), arb_subset(&AGENTS, 1))
            .prop_map(move |(w, a)| scope(w, a))
            .boxed(),
        GovernanceLayer::Situational => (arb_subset(&WORKFLOWS, 0), arb_subset(&AGENTS, 0))
            .prop_map(move |(w, a)| scope(w, a))
            .boxed(),
    }
}

fn arb_constraint() -> impl Strategy<Value = MachineConstraint> {
    let condition_keys: Vec<String> = PARAMS
        .iter()
        .map(|p| p.to_string())
        .chain(["intent.irreversible".to_string(), "ctx.s0".to_string()])
        .collect();
    (
        prop::sample::subsequence(&PATTERNS[..], 0..=2),
        prop::sample::select(vec![
            Modality::Forbid,
            Modality::RequireApproval,
            Modality::ReadOnly,
            Modality::Allow,
        ]),
        prop::collection::vec(arb_comparison(condition_keys), 0..=1),
    )
        .prop_map(|(patterns, modality, condition)| MachineConstraint {
            action_classes: patterns.into_iter().map(str::to_string).collect(),
            modality,
            condition,
        })
}

fn arb_rule(index: usize) -> impl Strategy<Value = Rule> {
    prop::sample::select(GovernanceLayer::ALL.to_vec()).prop_flat_map(move |layer| {
        let predicate_keys: Vec<String> = SIGNALS.iter().map(|s| s.to_string()).collect();
        let predicate = if layer == GovernanceLayer::Situational {
            prop::collection::vec(arb_comparison(predicate_keys), 1..=2)
                .prop_map(|c| Some(ActivationPredicate::new(c)))
                .boxed()
        } else {
            Just(None).boxed()
        };
        (
            arb_scope(layer),
            prop::option::weighted(0.8, arb_constraint()),
            predicate,
            prop::bool::weighted(0.9),
        )
            .prop_map(move |(scope, constraint, predicate, enabled)| Rule {
                id: format!("G{index:02}"),
                layer,
                scope,
                text: format!("generated rule {index}"),
                rationale: String::new(),
                constraint,
                predicate,
                enabled,
            })
    })
}

fn arb_ruleset() -> impl Strategy<Value = RuleSetDocument> {
    (0usize..12)
        .prop_flat_map(|n| (0..n).map(arb_rule).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|rules| RuleSetDocument {
            version: 1,
            metadata: Default::default(),
            rules,
        })
}

fn arb_context() -> impl Strategy<Value = ContextState> {
    (
        prop::collection::btree_map(prop::sample::select(&SIGNALS[..2]), arb_scalar(), 0..=2),
        prop::option::of(arb_subset(&MEMBERS, 0)),
    )
        .prop_map(|(signals, reg)| ContextState {
            signals: signals.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            registries: reg.map(|m| BTreeMap::from([("reg0".to_string(), m)])).unwrap_or_default(),
        })
}

fn arb_parameters() -> impl Strategy<Value = Parameters> {
    prop::collection::btree_map(prop::sample::select(&PARAMS[..]), arb_scalar(), 0..=2)
        .prop_map(|m| m.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn arb_intent() -> impl Strategy<Value = IntentDescriptor> {
    (
        prop::sample::select(&AGENTS[..]),
        prop::sample::select(&WORKFLOWS[..]),
        prop::sample::select(&ACTIONS[..]),
        arb_parameters(),
        any::<bool>(),
        prop::collection::vec(arb_parameters(), 0..=2),
    )
        .prop_map(|(agent, wf, action, parameters, irreversible, alts)| {
            let mut intent = IntentDescriptor {
                intent_id: "GEN".into(),
                agent_id: agent.into(),
                workflow_id: wf.into(),
                action_class: action.into(),
                description: "generated intent".into(),
                parameters,
                irreversible,
                alternatives: Vec::new(),
                approval_tokens: Vec::new(),
            };
            intent.alternatives = alts
                .into_iter()
                .filter(|a| !a.is_empty() && intent.overlay(a) != intent.parameters)
                .collect();
            intent
        })
}

pub fn arb_instance() -> impl Strategy<Value = CascadeInstance> {
    (arb_ruleset(), arb_intent(), arb_context()).prop_map(|(doc, intent, context)| {
        CascadeInstance {
            doc,
            intent,
            context,
        }
    })
}

/// Oracle truth value of one comparison; `None` is an evaluation error.
fn oracle_compare(
    c: &Comparison,
    value: Option<Scalar>,
    registries: &BTreeMap<String, BTreeSet<String>>,
) -> Option<bool> {
    let Some(actual) = value else {
        return Some(false);
    };
    let membership = |list: &Operand| -> bool {
        match list {
            Operand::Scalar(Scalar::Text(s)) if s.starts_with("registry:") => {
                let name = &s["registry:".len()..];
                match (&actual, registries.get(name)) {
                    (Scalar::Text(a), Some(set)) => set.iter().any(|m| m == a),
                    _ => false,
                }
            }
            Operand::List(items) => items.contains(&actual),
            Operand::Scalar(s) => *s == actual,
        }
    };
    let ordering = |rhs: &Operand| -> Option<std::cmp::Ordering> {
        match (&actual, rhs) {
            (Scalar::Bool(a), Operand::Scalar(Scalar::Bool(b))) => Some(a.cmp(b)),
            (Scalar::Number(a), Operand::Scalar(Scalar::Number(b))) => a.partial_cmp(b),
            (Scalar::Text(a), Operand::Scalar(Scalar::Text(b))) => Some(a.cmp(b)),
            _ => None,
        }
    };
    let eq = matches!(&c.value, Operand::Scalar(s) if *s == actual);
    use std::cmp::Ordering::*;
    Some(match c.op {
        CompareOp::Eq => eq,
        CompareOp::Ne => !eq,
        CompareOp::In => membership(&c.value),
        CompareOp::NotIn => !membership(&c.value),
        CompareOp::Gt => ordering(&c.value)? == Greater,
        CompareOp::Gte => ordering(&c.value)? != Less,
        CompareOp::Lt => ordering(&c.value)? == Less,
        CompareOp::Lte => ordering(&c.value)? != Greater,
    })
}

/// Conjunction with error propagation: any erroring conjunct makes the whole thing an error.
fn oracle_all(
    conjuncts: &[Comparison],
    resolve: impl Fn(&str) -> Option<Scalar>,
    registries: &BTreeMap<String, BTreeSet<String>>,
) -> Option<bool> {
    let results: Vec<Option<bool>> = conjuncts
        .iter()
        .map(|c| oracle_compare(c, resolve(&c.key), registries))
        .collect();
    if results.iter().any(Option::is_none) {
        None
    } else {
        Some(results.into_iter().all(|r| r == Some(true)))
    }
}

/// Ids of the rules in force, in precedence order, computed by brute force.
pub fn oracle_applicable(
    doc: &RuleSetDocument,
    agent: &str,
    workflow: &str,
    ctx: &ContextState,
) -> Vec<String> {
    let mut hits: Vec<(u8, String)> = Vec::new();
    for rule in &doc.rules {
        if !rule.enabled {
            continue;
        }
        let wf_ok = rule.scope.workflow_ids.is_empty()
            || rule.scope.workflow_ids.iter().any(|w| w == workflow);
        let agent_ok =
            rule.scope.agent_ids.is_empty() || rule.scope.agent_ids.iter().any(|a| a == agent);
        if !(wf_ok && agent_ok) {
            continue;
        }
        if rule.layer == GovernanceLayer::Situational {
            let conjuncts = &rule.predicate.as_ref().expect("situational rules carry predicates").conjuncts;
            // An erroring predicate keeps the rule in force.
            let active = oracle_all(conjuncts, |k| ctx.signals.get(k).cloned(), &ctx.registries)
                .unwrap_or(true);
            if !active {
                continue;
            }
        }
        let rank = match rule.layer {
            GovernanceLayer::Global => 1,
            GovernanceLayer::Workflow => 2,
            GovernanceLayer::Agent => 3,
            GovernanceLayer::Situational => 4,
        };
        hits.push((rank, rule.id.clone()));
    }
    hits.sort();
    hits.into_iter().map(|(_, id)| id).collect()
}

fn oracle_governs(patterns: &BTreeSet<String>, action: &str) -> bool {
    patterns.is_empty()
        || patterns.iter().any(|p| {
            p == "*"
                || p == action
                || (p.ends_with(".*") && action.starts_with(&p[..p.len() - 1]))
        })
}

/// Whether the rule's constraint of `modality` governs the action and its condition holds.
fn oracle_fires(
    rule: &Rule,
    modality: Modality,
    intent: &IntentDescriptor,
    params: &Parameters,
    ctx: &ContextState,
) -> bool {
    let Some(c) = &rule.constraint else {
        return false;
    };
    if c.modality != modality || !oracle_governs(&c.action_classes, &intent.action_class) {
        return false;
    }
    let resolve = |key: &str| -> Option<Scalar> {
        match key {
            "intent.irreversible" => Some(Scalar::Bool(intent.irreversible)),
            k if k.starts_with("ctx.") => ctx.signals.get(&k[4..]).cloned(),
            k => params.get(k).cloned(),
        }
    };
    oracle_all(&c.condition, resolve, &ctx.registries) == Some(true)
}

/// A FORBID that fires with no firing ALLOW in a strictly higher-precedence layer, if any.
pub fn dominant_forbid<'a>(
    rules: &[&'a Rule],
    intent: &IntentDescriptor,
    params: &Parameters,
    ctx: &ContextState,
) -> Option<&'a Rule> {
    rules.iter().copied().find(|f| {
        oracle_fires(f, Modality::Forbid, intent, params, ctx)
            && !rules.iter().any(|a| {
                a.layer < f.layer && oracle_fires(a, Modality::Allow, intent, params, ctx)
            })
    })
}

/// Every violated cascade property for one instance, as human-readable strings.
pub fn check_instance(inst: &CascadeInstance) -> Vec<String> {
    let mut problems = Vec::new();
    let rs = inst.ruleset();
    let ctx = inst.runtime_context();
    let intent = &inst.intent;
    let got = applicable_rules(&rs, &intent.agent_id, &intent.workflow_id, &ctx);
    let got_ids: Vec<String> = got.iter().map(|r| r.id.clone()).collect();
    let want = oracle_applicable(&inst.doc, &intent.agent_id, &intent.workflow_id, &inst.context);
    if got_ids != want {
        problems.push(format!("applicable_rules {got_ids:?} != oracle {want:?}"));
    }
    if !got.windows(2).all(|w| w[0].layer <= w[1].layer) {
        problems.push("retrieval not sorted by layer".into());
    }
    for g in rs.rules().iter().filter(|r| r.layer == GovernanceLayer::Global && r.enabled) {
        if !got_ids.contains(&g.id) {
            problems.push(format!("enabled GLOBAL rule {} missing", g.id));
        }
    }
    let verdict = ReferenceDeliberator::new().reference_deliberate(intent, &got, &ctx);
    if verdict.outcome == Outcome::Proceed {
        if let Some(f) = dominant_forbid(&got, intent, &intent.parameters, &inst.context) {
            problems.push(format!("PROCEED despite FORBID {} at {}", f.id, f.layer));
        }
    }
    problems
}
