//! The tool catalogue shared by the JSON-RPC and HTTP surfaces.
//!
//! Both surfaces translate a request into `(tool name, JSON arguments)` and call [`dispatch`], so
//! authorization, argument validation and results are identical whichever way a caller arrives.

use std::collections::BTreeSet;
use std::sync::Arc;

use govloop_core::audit::TraceFilter;
use govloop_core::{
    EscalationStatus, GovernanceService, IntentDescriptor, Resolution, RuleSetDocument, Scalar,
    ServiceError,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::auth::{Caller, Role};
use crate::error::ApiError;

/// Who may call a tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    /// No credentials needed.
    Public,
    /// Any authenticated caller.
    Reader,
    /// Agent credentials.
    Agent,
    /// Operator credentials.
    Operator,
}

impl Access {
    pub fn check(self, caller: Option<&Caller>) -> Result<(), ApiError> {
        match (self, caller) {
            (Access::Public, _) => Ok(()),
            (_, None) => Err(ApiError::unauthorized()),
            (Access::Reader, Some(_)) => Ok(()),
            (Access::Agent, Some(c)) if c.role == Role::Agent => Ok(()),
            (Access::Operator, Some(c)) if c.role == Role::Operator => Ok(()),
            (need, Some(c)) => Err(ApiError::forbidden(format!(
                "{} credentials cannot call a tool that needs {need:?} access",
                match c.role {
                    Role::Agent => "agent",
                    Role::Operator => "operator",
                }
            ))),
        }
    }
}

pub struct ToolSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub access: Access,
    /// JSON Schema of the arguments object.
    pub input_schema: fn() -> Value,
}

fn object(properties: Value, required: &[&str]) -> Value {
    json!({
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": false,
    })
}

fn no_args() -> Value {
    object(json!({}), &[])
}

fn scalar_schema() -> Value {
    json!({"type": ["boolean", "number", "string"]})
}

pub const TOOLS: &[ToolSpec] = &[
    ToolSpec {
        name: "evaluate_intent",
        description: "Run the governance loop for an intent and return the compliance decision.",
        access: Access::Agent,
        input_schema: || {
            object(
                json!({"intent": {"type": "object", "description": "IntentDescriptor"}}),
                &["intent"],
            )
        },
    },
    ToolSpec {
        name: "get_applicable_rules",
        description: "Rules in force for an agent and workflow under the current context.",
        access: Access::Reader,
        input_schema: || {
            object(
                json!({"agent_id": {"type": "string"}, "workflow_id": {"type": "string"}}),
                &["agent_id", "workflow_id"],
            )
        },
    },
    ToolSpec {
        name: "get_rules",
        description: "The active rule-set document, or a retained earlier version.",
        access: Access::Reader,
        input_schema: || object(json!({"version": {"type": "integer", "minimum": 1}}), &[]),
    },
    ToolSpec {
        name: "put_rules",
        description: "Validate a rule-set document and activate it as the next version.",
        access: Access::Operator,
        input_schema: || {
            object(
                json!({"document": {"type": "object", "description": "RuleSetDocument"}}),
                &["document"],
            )
        },
    },
    ToolSpec {
        name: "validate_rules",
        description: "Check a rule-set document against every structural invariant.",
        access: Access::Reader,
        input_schema: || object(json!({"document": {"type": "object"}}), &["document"]),
    },
    ToolSpec {
        name: "lint_rules",
        description: "Report prohibitions stated without an alternative.",
        access: Access::Reader,
        input_schema: || object(json!({"document": {"type": "object"}}), &["document"]),
    },
    ToolSpec {
        name: "get_context",
        description: "Current runtime signals and registries.",
        access: Access::Reader,
        input_schema: no_args,
    },
    ToolSpec {
        name: "set_signal",
        description: "Set a runtime context signal.",
        access: Access::Operator,
        input_schema: || {
            object(json!({"key": {"type": "string"}, "value": scalar_schema()}), &["key", "value"])
        },
    },
    ToolSpec {
        name: "remove_signal",
        description: "Remove a runtime context signal.",
        access: Access::Operator,
        input_schema: || object(json!({"key": {"type": "string"}}), &["key"]),
    },
    ToolSpec {
        name: "update_registry",
        description: "Replace the members of a named registry.",
        access: Access::Operator,
        input_schema: || {
            object(
                json!({
                    "name": {"type": "string"},
                    "members": {"type": "array", "items": {"type": "string"}},
                }),
                &["name", "members"],
            )
        },
    },
    ToolSpec {
        name: "query_traces",
        description: "Filter and page through trace records.",
        access: Access::Reader,
        input_schema: || {
            object(
                json!({
                    "agent_id": {"type": "string"},
                    "workflow_id": {"type": "string"},
                    "decision": {"enum": ["PROCEED", "SELF_CORRECT", "ESCALATE"]},
                    "rule_id": {"type": "string"},
                    "kind": {"type": "string"},
                    "since": {"type": "string", "format": "date-time"},
                    "until": {"type": "string", "format": "date-time"},
                    "after": {
                        "type": "object",
                        "properties": {"timestamp": {"type": "string"}, "trace_id": {"type": "string"}},
                        "required": ["timestamp", "trace_id"],
                    },
                    "limit": {"type": "integer", "minimum": 1},
                }),
                &[],
            )
        },
    },
    ToolSpec {
        name: "verify_chain",
        description: "Recompute the trace hash chain, optionally over a record index range.",
        access: Access::Reader,
        input_schema: || {
            object(
                json!({"from": {"type": "integer", "minimum": 0}, "to": {"type": "integer", "minimum": 0}}),
                &[],
            )
        },
    },
    ToolSpec {
        name: "export_traces",
        description: "Every stored trace record as its canonical line.",
        access: Access::Reader,
        input_schema: no_args,
    },
    ToolSpec {
        name: "list_escalations",
        description: "Escalations, optionally filtered by status.",
        access: Access::Reader,
        input_schema: || {
            object(
                json!({"status": {"enum": ["PENDING", "APPROVED", "DENIED", "EXPIRED"]}}),
                &[],
            )
        },
    },
    ToolSpec {
        name: "get_escalation",
        description: "One escalation by id.",
        access: Access::Reader,
        input_schema: || object(json!({"escalation_id": {"type": "string"}}), &["escalation_id"]),
    },
    ToolSpec {
        name: "resolve_escalation",
        description: "Approve or deny a pending escalation. Approval mints approval tokens.",
        access: Access::Operator,
        input_schema: || {
            object(
                json!({
                    "escalation_id": {"type": "string"},
                    "resolution": {"enum": ["APPROVED", "DENIED"]},
                    "note": {"type": "string"},
                }),
                &["escalation_id", "resolution"],
            )
        },
    },
    ToolSpec {
        name: "health",
        description: "Rule-set version, deliberator, trace-chain status and queue depth.",
        access: Access::Public,
        input_schema: no_args,
    },
];

pub fn find(name: &str) -> Option<&'static ToolSpec> {
    TOOLS.iter().find(|t| t.name == name)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateArgs {
    intent: IntentDescriptor,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplicableArgs {
    agent_id: String,
    workflow_id: String,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct VersionArgs {
    version: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentArgs {
    document: Value,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct NoArgs {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalArgs {
    key: String,
    value: Scalar,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyArgs {
    key: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryArgs {
    name: String,
    members: BTreeSet<String>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RangeArgs {
    from: Option<usize>,
    to: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct StatusArgs {
    status: Option<EscalationStatus>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EscalationIdArgs {
    escalation_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveArgs {
    escalation_id: String,
    resolution: Resolution,
    #[serde(default)]
    note: String,
}

fn args<T: DeserializeOwned>(value: Value) -> Result<T, ApiError> {
    let value = if value.is_null() { json!({}) } else { value };
    serde_json::from_value(value).map_err(|e| ApiError::invalid(format!("invalid arguments: {e}")))
}

/// Rule documents are parsed separately so malformed ones report `PARSE_ERROR` like the CLI does.
fn document(value: Value) -> Result<RuleSetDocument, ApiError> {
    serde_json::from_value(value).map_err(|e| ApiError::new("PARSE_ERROR", e.to_string()))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("domain types serialize")
}

/// Runs one tool synchronously. Evaluation may block on a completion endpoint, so async callers
/// go through [`dispatch`].
pub fn call(
    service: &GovernanceService,
    caller: Option<&Caller>,
    tool: &str,
    arguments: Value,
) -> Result<Value, ApiError> {
    let spec = find(tool).ok_or_else(|| ApiError::new("UNKNOWN_TOOL", format!("no tool named {tool}")))?;
    spec.access.check(caller)?;
    let actor = caller.map(|c| c.name.as_str()).unwrap_or("anonymous");
    let svc = |e: ServiceError| ApiError::from(e);
    Ok(match tool {
        "evaluate_intent" => {
            let a: EvaluateArgs = args(arguments)?;
            to_value(&service.evaluate(&a.intent).map_err(svc)?)
        }
        "get_applicable_rules" => {
            let a: ApplicableArgs = args(arguments)?;
            to_value(&service.applicable_rules(&a.agent_id, &a.workflow_id))
        }
        "get_rules" => {
            let a: VersionArgs = args(arguments)?;
            let rs = match a.version {
                Some(v) => service.rules_version(v).map_err(svc)?,
                None => service.rules(),
            };
            json!({"document": rs.document(), "versions": service.rule_versions()})
        }
        "put_rules" => {
            let a: DocumentArgs = args(arguments)?;
            to_value(&service.publish_rules(actor, document(a.document)?).map_err(svc)?)
        }
        "validate_rules" => {
            let a: DocumentArgs = args(arguments)?;
            to_value(&service.validate_rules(&document(a.document)?))
        }
        "lint_rules" => {
            let a: DocumentArgs = args(arguments)?;
            json!({"warnings": service.lint_rules(document(a.document)?).map_err(svc)?})
        }
        "get_context" => {
            let _: NoArgs = args(arguments)?;
            to_value(&service.context())
        }
        "set_signal" => {
            let a: SignalArgs = args(arguments)?;
            json!({"version": service.set_signal(actor, &a.key, a.value).map_err(svc)?})
        }
        "remove_signal" => {
            let a: KeyArgs = args(arguments)?;
            json!({"version": service.remove_signal(actor, &a.key).map_err(svc)?})
        }
        "update_registry" => {
            let a: RegistryArgs = args(arguments)?;
            json!({"version": service.update_registry(actor, &a.name, a.members).map_err(svc)?})
        }
        "query_traces" => {
            let filter: TraceFilter = args(arguments)?;
            to_value(&service.query_traces(&filter))
        }
        "verify_chain" => {
            let a: RangeArgs = args(arguments)?;
            let range = match (a.from, a.to) {
                (None, None) => None,
                (from, to) => Some(from.unwrap_or(0)..to.unwrap_or(usize::MAX)),
            };
            to_value(&service.verify_chain(range).map_err(svc)?)
        }
        "export_traces" => {
            let _: NoArgs = args(arguments)?;
            json!({"lines": service.export_traces().map_err(svc)?})
        }
        "list_escalations" => {
            let a: StatusArgs = args(arguments)?;
            json!({"escalations": service.list_escalations(a.status)})
        }
        "get_escalation" => {
            let a: EscalationIdArgs = args(arguments)?;
            let e = service
                .get_escalation(&a.escalation_id)
                .ok_or_else(|| ApiError::new("NOT_FOUND", format!("escalation {}", a.escalation_id)))?;
            to_value(&e)
        }
        "resolve_escalation" => {
            let a: ResolveArgs = args(arguments)?;
            to_value(
                &service
                    .resolve_escalation(&a.escalation_id, a.resolution, actor, &a.note)
                    .map_err(svc)?,
            )
        }
        "health" => {
            let _: NoArgs = args(arguments)?;
            to_value(&service.health())
        }
        other => unreachable!("tool {other} is listed but not dispatched"),
    })
}

/// [`call`] on the blocking pool.
pub async fn dispatch(
    service: Arc<GovernanceService>,
    caller: Option<Caller>,
    tool: String,
    arguments: Value,
) -> Result<Value, ApiError> {
    tokio::task::spawn_blocking(move || call(&service, caller.as_ref(), &tool, arguments))
        .await
        .map_err(|e| ApiError::new("INTERNAL", format!("tool task failed: {e}")))?
}
