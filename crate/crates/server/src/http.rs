//! REST-style routes. Every handler turns its path, query and body into tool arguments and goes
//! through the same dispatch as the JSON-RPC endpoint.

use std::convert::Infallible;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::Json;
use futures::stream;
use serde_json::{json, Map, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::tools::{self, Access};
use crate::{caller_from, AppState};

async fn run(state: &AppState, headers: &HeaderMap, tool: &str, args: Value) -> Result<Value, ApiError> {
    let caller = caller_from(state, headers);
    tools::dispatch(state.service.clone(), caller, tool.to_string(), args).await
}

async fn respond(state: AppState, headers: HeaderMap, tool: &str, args: Value) -> Response {
    match run(&state, &headers, tool, args).await {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

fn parse_body(body: &str) -> Result<Value, ApiError> {
    if body.trim().is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_str(body).map_err(|e| ApiError::invalid(format!("request body is not JSON: {e}")))
}

fn body_object(body: &str) -> Result<Map<String, Value>, ApiError> {
    match parse_body(body)? {
        Value::Object(m) => Ok(m),
        _ => Err(ApiError::invalid("request body must be a JSON object")),
    }
}

/// Query strings carry only text, so the few numeric parameters are converted here. The flattened
/// `after_timestamp` and `after_trace_id` pair becomes the `after` cursor object.
fn query_args(pairs: Vec<(String, String)>) -> Result<Value, ApiError> {
    let mut args = Map::new();
    let mut after = Map::new();
    for (k, v) in pairs {
        match k.as_str() {
            "limit" | "version" | "from" | "to" => {
                let n: u64 = v
                    .parse()
                    .map_err(|_| ApiError::invalid(format!("query parameter {k} must be a non-negative integer")))?;
                args.insert(k, json!(n));
            }
            "after_timestamp" => {
                after.insert("timestamp".into(), json!(v));
            }
            "after_trace_id" => {
                after.insert("trace_id".into(), json!(v));
            }
            _ => {
                if args.insert(k.clone(), json!(v)).is_some() {
                    return Err(ApiError::invalid(format!("query parameter {k} given twice")));
                }
            }
        }
    }
    if !after.is_empty() {
        args.insert("after".into(), Value::Object(after));
    }
    Ok(Value::Object(args))
}

macro_rules! try_api {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return ApiError::into_response(e),
        }
    };
}

pub async fn health(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let halted = state.service.is_halted();
    let mut resp = respond(state, headers, "health", json!({})).await;
    if halted {
        *resp.status_mut() = StatusCode::SERVICE_UNAVAILABLE;
    }
    resp
}

pub async fn evaluate(State(state): State<AppState>, headers: HeaderMap, body: String) -> Response {
    let intent = try_api!(parse_body(&body));
    respond(state, headers, "evaluate_intent", json!({ "intent": intent })).await
}

pub async fn applicable(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<Vec<(String, String)>>,
) -> Response {
    let args = try_api!(query_args(q));
    respond(state, headers, "get_applicable_rules", args).await
}

pub async fn get_rules(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<Vec<(String, String)>>,
) -> Response {
    let args = try_api!(query_args(q));
    respond(state, headers, "get_rules", args).await
}

pub async fn put_rules(State(state): State<AppState>, headers: HeaderMap, body: String) -> Response {
    let document = try_api!(parse_body(&body));
    respond(state, headers, "put_rules", json!({ "document": document })).await
}

pub async fn validate_rules(State(state): State<AppState>, headers: HeaderMap, body: String) -> Response {
    let document = try_api!(parse_body(&body));
    respond(state, headers, "validate_rules", json!({ "document": document })).await
}

pub async fn lint_rules(State(state): State<AppState>, headers: HeaderMap, body: String) -> Response {
    let document = try_api!(parse_body(&body));
    respond(state, headers, "lint_rules", json!({ "document": document })).await
}

pub async fn get_context(State(state): State<AppState>, headers: HeaderMap) -> Response {
    respond(state, headers, "get_context", json!({})).await
}

pub async fn set_signal(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(key): Path<String>,
    body: String,
) -> Response {
    let mut args = try_api!(body_object(&body));
    args.insert("key".into(), json!(key));
    respond(state, headers, "set_signal", Value::Object(args)).await
}

pub async fn remove_signal(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(key): Path<String>,
) -> Response {
    respond(state, headers, "remove_signal", json!({ "key": key })).await
}

pub async fn update_registry(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(name): Path<String>,
    body: String,
) -> Response {
    let mut args = try_api!(body_object(&body));
    args.insert("name".into(), json!(name));
    respond(state, headers, "update_registry", Value::Object(args)).await
}

pub async fn query_traces(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<Vec<(String, String)>>,
) -> Response {
    let args = try_api!(query_args(q));
    respond(state, headers, "query_traces", args).await
}

pub async fn verify_chain(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<Vec<(String, String)>>,
) -> Response {
    let args = try_api!(query_args(q));
    respond(state, headers, "verify_chain", args).await
}

/// Canonical trace lines as newline-delimited JSON.
pub async fn export_traces(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let value = try_api!(run(&state, &headers, "export_traces", json!({})).await);
    let mut body = String::new();
    for line in value["lines"].as_array().into_iter().flatten() {
        body.push_str(line.as_str().unwrap_or_default());
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

pub async fn list_escalations(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<Vec<(String, String)>>,
) -> Response {
    let args = try_api!(query_args(q));
    respond(state, headers, "list_escalations", args).await
}

pub async fn get_escalation(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> Response {
    respond(state, headers, "get_escalation", json!({ "escalation_id": id })).await
}

pub async fn resolve_escalation(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: String,
) -> Response {
    let mut args = try_api!(body_object(&body));
    args.insert("escalation_id".into(), json!(id));
    respond(state, headers, "resolve_escalation", Value::Object(args)).await
}

/// Escalation queue events as server-sent events named `enqueued`, `resolved` or `expired`.
pub async fn events(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let caller = caller_from(&state, &headers);
    try_api!(Access::Reader.check(caller.as_ref()));
    let rx = state.events.subscribe();
    let stream = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event(ev.name())
                        .id(ev.escalation().escalation_id.clone())
                        .json_data(&ev)
                        .expect("queue events serialize");
                    return Some((Ok::<_, Infallible>(event), rx));
                }
                Err(RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagged");
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream)
        .keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
        .into_response()
}
