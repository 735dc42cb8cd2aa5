use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::UNIX_EPOCH;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use flowforge_core::flow::{parse_flow, serialize_flow, validate, FlowGraph};
use serde::Serialize;
use serde_json::{json, Value};

use super::{check_id, now_ms, ApiError, AppState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowStatus {
    Stored,
    Running,
    Stopped,
}

#[derive(Debug, Clone)]
pub struct DeploymentRecord {
    pub flow_id: String,
    pub version: u64,
    pub uploaded_at: i64,
    pub graph: FlowGraph,
}

/// Uploaded flows, one file per version: `<dir>/<flow_id>/v<version>.flow.json`.
pub struct FlowStore {
    dir: PathBuf,
    records: BTreeMap<String, Vec<DeploymentRecord>>,
}

fn version_of(name: &str) -> Option<u64> {
    name.strip_prefix('v')?.strip_suffix(".flow.json")?.parse().ok()
}

impl FlowStore {
    pub fn open(dir: PathBuf) -> io::Result<Self> {
        std::fs::create_dir_all(&dir)?;
        let mut records: BTreeMap<String, Vec<DeploymentRecord>> = BTreeMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let Ok(flow_id) = entry.file_name().into_string() else { continue };
            if !entry.file_type()?.is_dir() {
                continue;
            }
            for f in std::fs::read_dir(entry.path())? {
                let f = f?;
                let Some(version) = f.file_name().to_str().and_then(version_of) else { continue };
                let text = std::fs::read_to_string(f.path())?;
                let graph = match parse_flow(&text) {
                    Ok(g) => g,
                    Err(e) => {
                        eprintln!("skipping {}: {e}", f.path().display());
                        continue;
                    }
                };
                let uploaded_at = f
                    .metadata()?
                    .modified()
                    .ok()
                    .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                    .map_or(0, |d| d.as_millis() as i64);
                records.entry(flow_id.clone()).or_default().push(DeploymentRecord { flow_id: flow_id.clone(), version, uploaded_at, graph });
            }
        }
        for v in records.values_mut() {
            v.sort_by_key(|r| r.version);
        }
        Ok(FlowStore { dir, records })
    }

    /// Store `graph` as the next version of its flow.
    pub fn put(&mut self, graph: FlowGraph) -> io::Result<DeploymentRecord> {
        let versions = self.records.entry(graph.id.clone()).or_default();
        let version = versions.last().map_or(1, |r| r.version + 1);
        let dir = self.dir.join(&graph.id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("v{version}.flow.json")), serialize_flow(&graph))?;
        let rec = DeploymentRecord { flow_id: graph.id.clone(), version, uploaded_at: now_ms(), graph };
        versions.push(rec.clone());
        Ok(rec)
    }

    pub fn latest(&self, flow_id: &str) -> Option<&DeploymentRecord> {
        self.records.get(flow_id).and_then(|v| v.last())
    }

    pub fn all_latest(&self) -> impl Iterator<Item = &DeploymentRecord> {
        self.records.values().filter_map(|v| v.last())
    }
}

pub fn record_json(rec: &DeploymentRecord, status: FlowStatus) -> Value {
    let graph: Value = serde_json::from_str(&serialize_flow(&rec.graph)).expect("serialized flow is JSON");
    json!({
        "flow_id": rec.flow_id,
        "version": rec.version,
        "uploaded_at": rec.uploaded_at,
        "status": status,
        "graph": graph,
    })
}

pub(super) fn parse_body(body: &Bytes) -> Result<FlowGraph, ApiError> {
    let text = std::str::from_utf8(body).map_err(|_| ApiError::bad_request("BadBody", "body is not UTF-8"))?;
    parse_flow(text).map_err(|e| ApiError::bad_request("FlowParseError", e.to_string()))
}

pub async fn list(State(s): State<Arc<AppState>>) -> Json<Value> {
    let flows = s.flows.lock().expect("flow store lock");
    let out: Vec<Value> = flows.all_latest().map(|r| record_json(r, s.flow_status(&r.flow_id, r.version))).collect();
    Json(Value::Array(out))
}

pub async fn get(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    check_id(&id)?;
    let flows = s.flows.lock().expect("flow store lock");
    let rec = flows.latest(&id).ok_or_else(|| ApiError::not_found("UnknownFlow", format!("no flow {id:?}")))?;
    Ok(Json(record_json(rec, s.flow_status(&rec.flow_id, rec.version))))
}

pub async fn put(State(s): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    check_id(&id)?;
    let graph = parse_body(&body)?;
    if graph.id != id {
        return Err(ApiError::bad_request("IdMismatch", format!("body declares flow {:?}, path names {id:?}", graph.id)));
    }
    let diagnostics = validate(&graph);
    if !diagnostics.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidFlow", format!("flow {id:?} has {} diagnostics", diagnostics.len()))
            .with_detail(json!({"flow_id": id, "diagnostics": diagnostics})));
    }
    let rec = s.flows.lock().expect("flow store lock").put(graph)?;
    Ok((StatusCode::OK, Json(record_json(&rec, s.flow_status(&rec.flow_id, rec.version)))))
}
