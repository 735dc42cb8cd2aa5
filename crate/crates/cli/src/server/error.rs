use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use flowforge_core::engine::EngineError;
use flowforge_core::stdlib::AlertError;
use serde_json::{json, Value};

/// Error body shared by every endpoint: `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, code: code.into(), message: message.into(), detail: Value::Null }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message, "detail": self.detail}))).into_response()
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownBrick(_) => StatusCode::NOT_FOUND,
            EngineError::IllegalTransition { .. } | EngineError::RunNotRunning => StatusCode::CONFLICT,
            EngineError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let detail = match &e {
            EngineError::InvalidFlow { flow_id, diagnostics } => json!({"flow_id": flow_id, "diagnostics": diagnostics}),
            EngineError::RulesRejected { brick, diagnostics } => json!({"brick": brick, "diagnostics": diagnostics}),
            EngineError::InvalidBinding { brick, reason } | EngineError::ExternalHandshakeFailed { brick, reason } => {
                json!({"brick": brick, "reason": reason})
            }
            EngineError::UnknownParam { brick, param } => json!({"brick": brick, "param": param}),
            EngineError::IllegalTransition { from, action } => json!({"from": from, "action": action}),
            EngineError::UnknownBrick(b) | EngineError::NotAnInlet(b) | EngineError::DuplicateBrickId(b) => json!({"brick": b}),
            _ => Value::Null,
        };
        ApiError::new(status, e.code(), e.to_string()).with_detail(detail)
    }
}

impl From<AlertError> for ApiError {
    fn from(e: AlertError) -> Self {
        match &e {
            AlertError::NotFound(id) => ApiError::not_found("UnknownAlert", e.to_string()).with_detail(json!({"alert_id": id})),
            AlertError::AlreadyAcked(id) => ApiError::conflict("AlreadyAcked", e.to_string()).with_detail(json!({"alert_id": id})),
            _ => ApiError::internal(e.to_string()),
        }
    }
}
