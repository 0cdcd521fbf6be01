//! Scripted scenario runner and evaluation metrics.
//!
//! A [`ScenarioSpec`] is a stub agent: one base intent re-issued `repetitions` times. Repetition
//! `i` uses phrasing `i mod n` as the description and rotates the serialization order of the
//! parameter keys by `i` before the intent is parsed back, so neither wording nor key order can
//! influence the outcome. Context setup is applied through the service as operator actions before
//! the scenario and undone afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::validate_record;
use crate::clock::{elapsed_ms, Clock};
use crate::context::ContextState;
use crate::intent::{IntentDescriptor, Outcome, Parameters};
use crate::service::{GovernanceService, ServiceError};

pub const HARNESS_ACTOR: &str = "flowr-harness";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedResult {
    /// Per-round decisions, e.g. `["SELF_CORRECT", "PROCEED"]`.
    pub path: Vec<Outcome>,
    pub rules_retrieved: Vec<String>,
    pub rules_cited: Vec<String>,
}

impl ExpectedResult {
    pub fn final_outcome(&self) -> Outcome {
        *self.path.last().expect("non-empty path")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: String,
    pub title: String,
    pub intent: IntentDescriptor,
    pub phrasings: Vec<String>,
    #[serde(default)]
    pub context_setup: ContextState,
    pub expected: ExpectedResult,
    pub repetitions: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
}

impl ScenarioSpec {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = serde_json::from_slice(bytes)?;
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), ScenarioError> {
        let invalid = |reason: &str| ScenarioError::Invalid {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        let shape_ok = matches!(
            self.expected.path.as_slice(),
            [Outcome::Proceed] | [Outcome::Escalate] | [Outcome::SelfCorrect, Outcome::Proceed]
        );
        if !shape_ok {
            return Err(invalid("expected path must be PROCEED, ESCALATE or SELF_CORRECT then PROCEED"));
        }
        if self.phrasings.is_empty() {
            return Err(invalid("at least one phrasing is required"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be positive"));
        }
        self.intent
            .validate()
            .map_err(|e| invalid(&e.to_string()))
    }

    /// The intent issued on repetition `rep`.
    pub fn intent_for(&self, rep: u32) -> IntentDescriptor {
        let mut intent = self.intent.clone();
        intent.intent_id = format!("{}-rep{:02}", self.intent.intent_id, rep + 1);
        intent.description = self.phrasings[rep as usize % self.phrasings.len()].clone();
        intent.parameters = reparse_rotated(&intent.parameters, rep as usize);
        intent.alternatives = intent
            .alternatives
            .iter()
            .map(|alt| reparse_rotated(alt, rep as usize))
            .collect();
        intent
    }
}

/// Serializes `params` with keys rotated by `shift` and parses the text back.
fn reparse_rotated(params: &Parameters, shift: usize) -> Parameters {
    let mut pairs: Vec<String> = params
        .iter()
        .map(|(k, v)| {
            format!(
                "{}:{}",
                serde_json::to_string(k).expect("key serializes"),
                serde_json::to_string(v).expect("value serializes")
            )
        })
        .collect();
    if !pairs.is_empty() {
        let n = shift % pairs.len();
        pairs.rotate_left(n);
    }
    serde_json::from_str(&format!("{{{}}}", pairs.join(","))).expect("rotated parameters parse")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub id: String,
    pub title: String,
    pub expected: String,
    pub runs: u32,
    pub correct: u32,
    pub escalations: u32,
    pub true_escalations: u32,
    pub traces: u32,
    pub complete_traces: u32,
    pub outcomes: BTreeMap<String, u32>,
    /// First few mismatch descriptions.
    pub mismatches: Vec<String>,
    pub mean_total_ms: f64,
    pub mean_deliberation_ms: f64,
    pub mean_overhead_ms: f64,
    pub mean_bypass_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub deliberator: String,
    pub scenarios: Vec<ScenarioResult>,
    pub runs: u32,
    pub correct: u32,
    pub accuracy: f64,
    pub escalations: u32,
    pub true_escalations: u32,
    pub escalation_precision: f64,
    pub traces: u32,
    pub complete_traces: u32,
    pub trace_completeness: f64,
    /// Mean wall time of a governed evaluation.
    pub mean_total_ms: f64,
    pub mean_deliberation_ms: f64,
    /// Retrieval, routing and trace appends: total minus deliberation.
    pub mean_engine_overhead_ms: f64,
    /// Mean time for the same stub action without governance.
    pub mean_bypass_ms: f64,
    /// Governed minus bypass.
    pub mean_latency_overhead_ms: f64,
}

fn ratio(n: u32, d: u32) -> f64 {
    if d == 0 {
        1.0
    } else {
        f64::from(n) / f64::from(d)
    }
}

fn path_label(path: &[Outcome]) -> String {
    path.iter().map(|o| o.token()).collect::<Vec<_>>().join("->")
}

impl MetricsReport {
    pub fn all_correct(&self) -> bool {
        self.correct == self.runs
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "deliberator: {}", self.deliberator);
        let _ = writeln!(
            out,
            "{:<4} {:<32} {:<22} {:>8} {:>11} {:>7} {:>10} {:>10}",
            "id", "scenario", "expected", "correct", "escalations", "traces", "total ms", "engine ms"
        );
        for s in &self.scenarios {
            let _ = writeln!(
                out,
                "{:<4} {:<32} {:<22} {:>8} {:>11} {:>7} {:>10.3} {:>10.3}",
                s.id,
                s.title,
                s.expected,
                format!("{}/{}", s.correct, s.runs),
                format!("{}/{}", s.true_escalations, s.escalations),
                format!("{}/{}", s.complete_traces, s.traces),
                s.mean_total_ms,
                s.mean_overhead_ms
            );
            for m in &s.mismatches {
                let _ = writeln!(out, "     mismatch: {m}");
            }
        }
        let _ = writeln!(
            out,
            "accuracy {}/{} ({:.1}%)  escalation precision {}/{} ({:.1}%)  trace completeness {}/{} ({:.1}%)",
            self.correct,
            self.runs,
            self.accuracy * 100.0,
            self.true_escalations,
            self.escalations,
            self.escalation_precision * 100.0,
            self.complete_traces,
            self.traces,
            self.trace_completeness * 100.0
        );
        let _ = writeln!(
            out,
            "latency: governed {:.3} ms, deliberation {:.3} ms, engine overhead {:.3} ms, bypass {:.3} ms, added {:.3} ms",
            self.mean_total_ms,
            self.mean_deliberation_ms,
            self.mean_engine_overhead_ms,
            self.mean_bypass_ms,
            self.mean_latency_overhead_ms
        );
        out
    }
}

/// Applies `setup` and returns the changes needed to undo it.
fn apply_setup(
    service: &GovernanceService,
    setup: &ContextState,
) -> Result<ContextState, ServiceError> {
    let before = service.context().state;
    let mut undo = ContextState::default();
    for (k, v) in &setup.signals {
        if let Some(prev) = before.signals.get(k) {
            undo.signals.insert(k.clone(), prev.clone());
        }
        service.set_signal(HARNESS_ACTOR, k, v.clone())?;
    }
    for (name, members) in &setup.registries {
        undo.registries
            .insert(name.clone(), before.registries.get(name).cloned().unwrap_or_default());
        service.update_registry(HARNESS_ACTOR, name, members.clone())?;
    }
    Ok(undo)
}

fn restore(
    service: &GovernanceService,
    setup: &ContextState,
    undo: &ContextState,
) -> Result<(), ServiceError> {
    for k in setup.signals.keys() {
        match undo.signals.get(k) {
            Some(v) => service.set_signal(HARNESS_ACTOR, k, v.clone())?,
            None => service.remove_signal(HARNESS_ACTOR, k)?,
        };
    }
    for (name, members) in &undo.registries {
        service.update_registry(HARNESS_ACTOR, name, members.clone())?;
    }
    Ok(())
}

/// The work a stub agent does to produce an action when governance is bypassed.
fn bypass(spec: &ScenarioSpec, rep: u32) -> usize {
    let intent = spec.intent_for(rep);
    serde_json::to_vec(&intent).map(|v| v.len()).unwrap_or(0)
}

/// Runs every scenario sequentially against `service`, timing with `clock`.
pub fn run_scenarios(
    specs: &[ScenarioSpec],
    service: &GovernanceService,
    clock: &Arc<dyn Clock>,
) -> Result<MetricsReport, ServiceError> {
    let mut results = Vec::new();
    let mut sums = (0.0, 0.0, 0.0, 0.0);
    for spec in specs {
        let undo = apply_setup(service, &spec.context_setup)?;
        let outcome = run_one(spec, service, clock);
        restore(service, &spec.context_setup, &undo)?;
        let r = outcome?;
        let n = f64::from(r.runs);
        sums.0 += r.mean_total_ms * n;
        sums.1 += r.mean_deliberation_ms * n;
        sums.2 += r.mean_overhead_ms * n;
        sums.3 += r.mean_bypass_ms * n;
        results.push(r);
    }
    let sum = |f: fn(&ScenarioResult) -> u32| results.iter().map(f).sum::<u32>();
    let runs = sum(|r| r.runs);
    let correct = sum(|r| r.correct);
    let escalations = sum(|r| r.escalations);
    let true_escalations = sum(|r| r.true_escalations);
    let traces = sum(|r| r.traces);
    let complete_traces = sum(|r| r.complete_traces);
    let mean = |x: f64| if runs == 0 { 0.0 } else { x / f64::from(runs) };
    Ok(MetricsReport {
        deliberator: service.engine().deliberator().name().to_string(),
        runs,
        correct,
        accuracy: ratio(correct, runs),
        escalations,
        true_escalations,
        escalation_precision: ratio(true_escalations, escalations),
        traces,
        complete_traces,
        trace_completeness: ratio(complete_traces, traces),
        mean_total_ms: mean(sums.0),
        mean_deliberation_ms: mean(sums.1),
        mean_engine_overhead_ms: mean(sums.2),
        mean_bypass_ms: mean(sums.3),
        mean_latency_overhead_ms: mean(sums.0 - sums.3),
        scenarios: results,
    })
}

fn run_one(
    spec: &ScenarioSpec,
    service: &GovernanceService,
    clock: &Arc<dyn Clock>,
) -> Result<ScenarioResult, ServiceError> {
    let expected_path = &spec.expected.path;
    let mut r = ScenarioResult {
        id: spec.id.clone(),
        title: spec.title.clone(),
        expected: path_label(expected_path),
        runs: 0,
        correct: 0,
        escalations: 0,
        true_escalations: 0,
        traces: 0,
        complete_traces: 0,
        outcomes: BTreeMap::new(),
        mismatches: Vec::new(),
        mean_total_ms: 0.0,
        mean_deliberation_ms: 0.0,
        mean_overhead_ms: 0.0,
        mean_bypass_ms: 0.0,
    };
    let records_by_id = |ids: &BTreeSet<String>| {
        service
            .audit()
            .records()
            .into_iter()
            .filter(|rec| ids.contains(&rec.trace_id))
            .collect::<Vec<_>>()
    };
    for rep in 0..spec.repetitions {
        let t0 = clock.now();
        let _ = bypass(spec, rep);
        let bypass_ms = elapsed_ms(t0, clock.now());

        let intent = spec.intent_for(rep);
        let eval = service.evaluate(&intent)?;
        let ids: BTreeSet<String> = eval.trace_ids.iter().cloned().collect();
        let records = records_by_id(&ids);
        let path: Vec<Outcome> = records
            .iter()
            .filter_map(|rec| rec.round().map(|t| t.decision))
            .collect();
        let complete = records.iter().filter(|rec| validate_record(rec).is_empty()).count() as u32;

        r.runs += 1;
        r.traces += records.len() as u32;
        r.complete_traces += complete;
        *r.outcomes.entry(path_label(&path)).or_default() += 1;
        r.mean_total_ms += eval.timings.total_ms;
        r.mean_deliberation_ms += eval.timings.deliberation_ms;
        r.mean_overhead_ms += eval.timings.overhead_ms;
        r.mean_bypass_ms += bypass_ms;

        let escalated = eval.decision.outcome == Outcome::Escalate;
        let should_escalate = spec.expected.final_outcome() == Outcome::Escalate;
        if escalated {
            r.escalations += 1;
            if should_escalate {
                r.true_escalations += 1;
            }
        }

        let mut problems = Vec::new();
        if &path != expected_path {
            problems.push(format!("path {} != {}", path_label(&path), path_label(expected_path)));
        }
        if eval.decision.deliberation_rounds as usize != expected_path.len() {
            problems.push(format!("{} rounds", eval.decision.deliberation_rounds));
        }
        if eval.rules_retrieved != spec.expected.rules_retrieved {
            problems.push(format!("retrieved {:?}", eval.rules_retrieved));
        }
        if eval.decision.rules_cited != spec.expected.rules_cited {
            problems.push(format!("cited {:?}", eval.decision.rules_cited));
        }
        if records.len() as u32 != eval.decision.deliberation_rounds || complete as usize != records.len() {
            problems.push("incomplete trace".to_string());
        }
        if problems.is_empty() {
            r.correct += 1;
        } else if r.mismatches.len() < 3 {
            r.mismatches.push(format!("{}: {}", intent.intent_id, problems.join("; ")));
        }
    }
    let n = f64::from(r.runs.max(1));
    r.mean_total_ms /= n;
    r.mean_deliberation_ms /= n;
    r.mean_overhead_ms /= n;
    r.mean_bypass_ms /= n;
    Ok(r)
}
