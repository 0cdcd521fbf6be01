//! The engine treats both deliberation backends alike: driving the Flowr suite through the
//! chat-completion backend, with a transport that answers exactly what the reference deliberator
//! would, gives the same per-scenario outcomes, citations and trace shapes.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::TimeZone;
use govloop_core::deliberator::{ChatMessage, CompletionEndpointConfig, CompletionTransport};
use govloop_core::harness::run_scenarios;
use govloop_core::prompt::{render_reply, PromptTemplates};
use govloop_core::service::ServiceOptions;
use govloop_core::{
    applicable_rules, flowr, AuditLog, Clock, Deliberator, DeliberatorError, FixedClock,
    GovernanceService, Outcome, ReferenceDeliberator, RuntimeContext,
};

/// Replies keyed by the intent id announced in the user turn.
struct Mirror(HashMap<String, String>);

impl CompletionTransport for Mirror {
    fn complete(
        &self,
        _: &CompletionEndpointConfig,
        messages: &[ChatMessage],
    ) -> Result<String, DeliberatorError> {
        let user = &messages.last().expect("user turn").content;
        let id = user
            .lines()
            .find_map(|l| l.strip_prefix("Intent id: "))
            .expect("intent id line");
        let reply = self.0.get(id).cloned().unwrap_or_default();
        Ok(format!("Reviewing the governance rules for {id}.\n{reply}"))
    }
}

fn mirror() -> Mirror {
    let rs = flowr::ruleset();
    let reference = ReferenceDeliberator::new();
    let mut replies = HashMap::new();
    for spec in flowr::scenarios() {
        let mut state = flowr::context_seed();
        state.signals.extend(spec.context_setup.signals.clone());
        state.registries.extend(spec.context_setup.registries.clone());
        let ctx = RuntimeContext::from_state(state);
        for rep in 0..spec.repetitions {
            let mut intent = spec.intent_for(rep);
            for round in 1..=4 {
                let rules = applicable_rules(&rs, &intent.agent_id, &intent.workflow_id, &ctx);
                let v = reference.reference_deliberate(&intent, &rules, &ctx);
                replies.insert(intent.intent_id.clone(), render_reply(&v));
                match (v.outcome, v.proposed_parameters) {
                    (Outcome::SelfCorrect, Some(p)) => intent = intent.revised(p, round + 1),
                    _ => break,
                }
            }
        }
    }
    Mirror(replies)
}

fn service(d: Arc<dyn Deliberator>, clock: Arc<dyn Clock>) -> GovernanceService {
    GovernanceService::new(
        flowr::ruleset(),
        flowr::context_seed(),
        d,
        Arc::new(AuditLog::in_memory(clock.clone())),
        clock,
        ServiceOptions::default(),
    )
}

#[test]
fn suite_outcomes_match_across_backends() {
    let clock: Arc<dyn Clock> =
        Arc::new(FixedClock(chrono::Utc.with_ymd_and_hms(2026, 5, 1, 9, 0, 0).unwrap()));
    let llm = govloop_core::deliberator::LlmDeliberator::new(
        CompletionEndpointConfig::new("http://unused.invalid", "mirror"),
        PromptTemplates::default(),
        Arc::new(mirror()),
    );
    let specs = flowr::scenarios();
    let by_llm = run_scenarios(&specs, &service(Arc::new(llm), clock.clone()), &clock).unwrap();
    let by_ref =
        run_scenarios(&specs, &service(Arc::new(ReferenceDeliberator::new()), clock.clone()), &clock)
            .unwrap();

    assert_eq!(by_llm.deliberator, "llm:mirror");
    assert_eq!((by_llm.correct, by_llm.runs), (40, 40), "{}", by_llm.to_table());
    assert_eq!(by_llm.escalation_precision, by_ref.escalation_precision);
    assert_eq!(by_llm.trace_completeness, 1.0);
    for (a, b) in by_llm.scenarios.iter().zip(&by_ref.scenarios) {
        assert_eq!(a.outcomes, b.outcomes, "scenario {}", a.id);
        assert_eq!(a.traces, b.traces, "scenario {}", a.id);
    }
}
