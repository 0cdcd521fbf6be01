use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use govloop_core::ServiceError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An error as both surfaces report it: a stable code plus a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn unauthorized() -> Self {
        Self::new("UNAUTHORIZED", "missing or unknown bearer token")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new("FORBIDDEN", message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new("INVALID_REQUEST", message)
    }

    pub fn status(&self) -> StatusCode {
        match self.code.as_str() {
            "UNAUTHORIZED" => StatusCode::UNAUTHORIZED,
            "FORBIDDEN" => StatusCode::FORBIDDEN,
            "INVALID_REQUEST" | "INVALID_INTENT" | "PARSE_ERROR" => StatusCode::BAD_REQUEST,
            "SCHEMA_ERROR" => StatusCode::UNPROCESSABLE_ENTITY,
            "NOT_FOUND" | "UNKNOWN_TOOL" => StatusCode::NOT_FOUND,
            "ALREADY_RESOLVED" | "PRECONDITION_FAILED" => StatusCode::CONFLICT,
            "HALTED" => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = e.code();
        let text = e.to_string();
        // Display strings already lead with the code for most variants.
        let message = text
            .strip_prefix(code)
            .and_then(|rest| rest.strip_prefix(": "))
            .unwrap_or(&text)
            .to_string();
        Self::new(code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self }))).into_response()
    }
}
