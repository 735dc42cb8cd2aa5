use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::Json;
use flowforge_core::flow::{validate, BrickKind};
use flowforge_core::rules::{check, exactly_one_emit, parse_rules, pretty_print, BlockProgram, RuleSyntaxError};
use flowforge_core::Fields;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{flows::parse_body, ApiError, AppState};
use crate::commands::rules_brick;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckRequest {
    source: String,
    kind: Option<String>,
    #[serde(default)]
    in_ports: Vec<String>,
    #[serde(default)]
    out_ports: Vec<String>,
    #[serde(default)]
    params: Fields,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatRequest {
    source: String,
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("BadBody", e.to_string()))
}

fn syntax(source: &str) -> Result<BlockProgram, ApiError> {
    parse_rules(source).map_err(|e| {
        let line = match &e {
            RuleSyntaxError::Syntax { line, .. } | RuleSyntaxError::Indentation { line, .. } => *line,
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "RuleSyntaxError", e.to_string()).with_detail(json!({"line": line}))
    })
}

/// Parse and check a program; diagnostics are data here, not an error.
pub async fn check_rules(body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: CheckRequest = parse(&body)?;
    let kind = match req.kind.as_deref() {
        None => None,
        Some(k) => Some(BrickKind::from_name(k).ok_or_else(|| ApiError::bad_request("BadBody", format!("unknown brick kind {k:?}")))?),
    };
    let program = syntax(&req.source)?;
    let spec = rules_brick(&program, kind, &req.in_ports, &req.out_ports, req.params);
    let diagnostics = check(&program, &spec);
    Ok(Json(json!({
        "ok": diagnostics.is_empty(),
        "diagnostics": diagnostics,
        "exactly_one_emit": exactly_one_emit(&program),
        "formatted": pretty_print(&program),
    })))
}

pub async fn format_rules(body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: FormatRequest = parse(&body)?;
    Ok(Json(json!({"source": pretty_print(&syntax(&req.source)?)})))
}

/// Validate without storing.
pub async fn validate_flow(body: Bytes) -> Result<Json<Value>, ApiError> {
    let graph = parse_body(&body)?;
    Ok(Json(json!({"flow_id": graph.id, "diagnostics": validate(&graph)})))
}

pub async fn builtins(State(s): State<Arc<AppState>>) -> Json<Value> {
    let defs: Vec<Value> = s
        .registry
        .defs()
        .map(|d| {
            json!({
                "name": d.name,
                "kinds": d.kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
                "in_ports": d.in_ports,
                "out_ports": d.out_ports,
            })
        })
        .collect();
    Json(Value::Array(defs))
}
