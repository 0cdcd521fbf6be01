//! JSON-RPC 2.0 tool-call endpoint in the shape MCP clients expect.
//!
//! Supported methods are `initialize`, `ping`, `tools/list` and `tools/call`. A tool that fails
//! with a domain error still produces a JSON-RPC result, flagged with `isError` and carrying the
//! same `{error: {code, message}}` object the HTTP surface returns. Only protocol faults and
//! authentication failures become JSON-RPC errors.

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};

use crate::auth::Caller;
use crate::error::ApiError;
use crate::tools::{self, TOOLS};
use crate::{caller_from, AppState};

pub const PROTOCOL_VERSION: &str = "2025-06-18";

const PARSE_ERROR: i64 = -32700;
const INVALID_REQUEST: i64 = -32600;
const METHOD_NOT_FOUND: i64 = -32601;
const INVALID_PARAMS: i64 = -32602;
/// Server-defined: the caller is not authenticated or not allowed to call the tool.
const ACCESS_DENIED: i64 = -32001;

fn error(id: Value, code: i64, message: impl Into<String>, data: Option<Value>) -> Value {
    let mut err = json!({"code": code, "message": message.into()});
    if let Some(data) = data {
        err["data"] = data;
    }
    json!({"jsonrpc": "2.0", "id": id, "error": err})
}

fn success(id: Value, result: Value) -> Value {
    json!({"jsonrpc": "2.0", "id": id, "result": result})
}

fn tool_result(outcome: Result<Value, ApiError>) -> Value {
    let (structured, is_error) = match outcome {
        Ok(v) => (v, false),
        Err(e) => (json!({"error": e}), true),
    };
    json!({
        "content": [{"type": "text", "text": structured.to_string()}],
        "structuredContent": structured,
        "isError": is_error,
    })
}

fn list_tools() -> Value {
    let tools: Vec<Value> = TOOLS
        .iter()
        .map(|t| {
            json!({
                "name": t.name,
                "description": t.description,
                "inputSchema": (t.input_schema)(),
            })
        })
        .collect();
    json!({"tools": tools})
}

/// Handles one request object. Returns `None` for notifications.
async fn handle_one(state: &AppState, caller: Option<&Caller>, req: Value) -> Option<Value> {
    let Some(obj) = req.as_object() else {
        return Some(error(Value::Null, INVALID_REQUEST, "request must be an object", None));
    };
    let id = obj.get("id").cloned();
    let reply_id = id.clone().unwrap_or(Value::Null);
    let method = match (obj.get("jsonrpc"), obj.get("method")) {
        (Some(v), Some(Value::String(m))) if v == "2.0" => m.as_str(),
        _ => {
            return Some(error(
                reply_id,
                INVALID_REQUEST,
                "expected jsonrpc \"2.0\" and a string method",
                None,
            ))
        }
    };
    let params = obj.get("params").cloned().unwrap_or(Value::Null);

    let reply = match method {
        "initialize" => success(
            reply_id,
            json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {"listChanged": false}},
                "serverInfo": {"name": "govloop", "version": env!("CARGO_PKG_VERSION")},
            }),
        ),
        "ping" => success(reply_id, json!({})),
        "tools/list" => success(reply_id, list_tools()),
        "tools/call" => {
            let name = params.get("name").and_then(Value::as_str);
            let arguments = params.get("arguments").cloned().unwrap_or(json!({}));
            match name.and_then(tools::find) {
                None => error(
                    reply_id,
                    INVALID_PARAMS,
                    format!("unknown tool {}", name.unwrap_or("<missing>")),
                    None,
                ),
                Some(spec) => match spec.access.check(caller) {
                    Err(e) => error(reply_id, ACCESS_DENIED, e.message.clone(), Some(json!({"code": e.code}))),
                    Ok(()) => {
                        let outcome = tools::dispatch(
                            state.service.clone(),
                            caller.cloned(),
                            spec.name.to_string(),
                            arguments,
                        )
                        .await;
                        success(reply_id, tool_result(outcome))
                    }
                },
            }
        }
        "notifications/initialized" => return None,
        other => error(reply_id, METHOD_NOT_FOUND, format!("method {other} not found"), None),
    };
    // A request without an id is a notification and gets no reply.
    id.map(|_| reply)
}

pub async fn endpoint(State(state): State<AppState>, headers: HeaderMap, body: String) -> Response {
    let caller = caller_from(&state, &headers);
    let parsed: Value = match serde_json::from_str(&body) {
        Ok(v) => v,
        Err(e) => return Json(error(Value::Null, PARSE_ERROR, e.to_string(), None)).into_response(),
    };
    match parsed {
        Value::Array(batch) if batch.is_empty() => {
            Json(error(Value::Null, INVALID_REQUEST, "empty batch", None)).into_response()
        }
        Value::Array(batch) => {
            let mut replies = Vec::new();
            for req in batch {
                replies.extend(handle_one(&state, caller.as_ref(), req).await);
            }
            if replies.is_empty() {
                StatusCode::ACCEPTED.into_response()
            } else {
                Json(Value::Array(replies)).into_response()
            }
        }
        single => match handle_one(&state, caller.as_ref(), single).await {
            Some(reply) => Json(reply).into_response(),
            None => StatusCode::ACCEPTED.into_response(),
        },
    }
}
