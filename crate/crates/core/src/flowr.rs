//! The Flowr supply-chain fixtures shipped with the repository: rule set, context seed and the
//! four scenario specs, embedded at build time.

use crate::context::ContextState;
use crate::harness::ScenarioSpec;
use crate::intent::IntentDescriptor;
use crate::rules::{load_ruleset, RuleSet};

pub const RULES_JSON: &[u8] = include_bytes!("../../../rules/flowr.json");
pub const CONTEXT_JSON: &[u8] = include_bytes!("../../../context/flowr.json");
pub const SCENARIO_SOURCES: [&[u8]; 4] = [
    include_bytes!("../../../scenarios/s1.json"),
    include_bytes!("../../../scenarios/s2.json"),
    include_bytes!("../../../scenarios/s3.json"),
    include_bytes!("../../../scenarios/s4.json"),
];

pub fn ruleset() -> RuleSet {
    load_ruleset(RULES_JSON).expect("shipped Flowr rule set is valid")
}

pub fn context_seed() -> ContextState {
    ContextState::from_json(CONTEXT_JSON).expect("shipped Flowr context is valid")
}

pub fn scenarios() -> Vec<ScenarioSpec> {
    SCENARIO_SOURCES
        .iter()
        .map(|src| ScenarioSpec::from_json(src).expect("shipped scenario is valid"))
        .collect()
}

fn base(index: usize) -> IntentDescriptor {
    scenarios().swap_remove(index).intent
}

/// Forecasting agent reads sales data.
pub fn s1_intent() -> IntentDescriptor {
    base(0)
}

/// Procurement agent submits an irreversible purchase order for `amount_usd`.
pub fn s2_intent(amount_usd: f64) -> IntentDescriptor {
    let mut i = base(1);
    i.parameters.insert("amount_usd".into(), amount_usd.into());
    i
}

/// Supplier agent contacts an unverified supplier, with alternatives.
pub fn s3_intent() -> IntentDescriptor {
    base(2)
}

/// Replenishment agent substitutes a disrupted supplier with a verified one.
pub fn s4_intent() -> IntentDescriptor {
    base(3)
}
