//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use govloop_core::service::ServiceOptions;
use govloop_core::{
    flowr, load_ruleset, AuditLog, Clock, GovernanceService, ReferenceDeliberator, RuleSet,
    SystemClock,
};
use serde_json::{json, Value};

pub fn clock() -> Arc<dyn Clock> {
    Arc::new(SystemClock)
}

/// The Flowr rule set plus `extra` workflow rules scoped to other workflows and agents, so that
/// retrieval has to skip them. Half carry a machine constraint.
pub fn padded_ruleset(extra: usize) -> RuleSet {
    let mut doc: Value = serde_json::from_slice(flowr::RULES_JSON).expect("shipped rules parse");
    let rules = doc["rules"].as_array_mut().expect("rules array");
    for i in 0..extra {
        let mut rule = json!({
            "id": format!("X{i:05}"),
            "layer": if i % 2 == 0 { "WORKFLOW" } else { "AGENT" },
            "scope": {"workflow_ids": [format!("wf-{}", i % 17)], "agent_ids": [format!("agent-{}", i % 5)]},
            "text": format!("Orders above {} units need a second quote", 100 + i),
            "rationale": "because large orders need price discovery",
        });
        if i % 2 == 0 {
            rule["constraint"] = json!({
                "action_classes": ["purchase_order.*"],
                "modality": "REQUIRE_APPROVAL",
                "condition": [{"key": "quantity", "op": "GT", "value": 100 + i}],
            });
        }
        rules.push(rule);
    }
    load_ruleset(doc.to_string().as_bytes()).expect("padded rule set is valid")
}

/// A Flowr service with the reference deliberator over `audit`.
pub fn flowr_service(audit: AuditLog) -> GovernanceService {
    let clock = clock();
    GovernanceService::new(
        flowr::ruleset(),
        flowr::context_seed(),
        Arc::new(ReferenceDeliberator::new()),
        Arc::new(audit),
        clock,
        ServiceOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_does_not_change_flowr_retrieval() {
        let ctx = govloop_core::RuntimeContext::from_state(flowr::context_seed());
        let plain = flowr::ruleset();
        let padded = padded_ruleset(500);
        assert_eq!(padded.rules().len(), plain.rules().len() + 500);
        let ids = |rs: &RuleSet| -> Vec<String> {
            govloop_core::applicable_rules(rs, "procurement", "flowr", &ctx)
                .iter()
                .map(|r| r.id.clone())
                .collect()
        };
        assert_eq!(ids(&plain), ids(&padded));
    }
}
