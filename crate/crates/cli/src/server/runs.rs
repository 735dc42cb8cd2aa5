use std::collections::HashMap;
use std::io;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use flowforge_core::engine::{ClockMode, Run, RunOptions, RunState};
use flowforge_core::stdlib::{read_log, read_tsdb};
use flowforge_core::Fields;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{blocking, check_id, ApiError, AppState, LiveRun};
use crate::commands::save_summary;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRequest {
    /// More flows to deploy in the same run, e.g. the other end of a signal.
    #[serde(default)]
    with: Vec<String>,
    /// "wall" (default) or "logical". A logical run advances one tick per `step_ms`.
    clock: Option<String>,
    seed: Option<u64>,
    step_ms: Option<u64>,
}

fn json_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("BadBody", e.to_string()))
}

fn fields_body(body: &Bytes) -> Result<Option<Fields>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    serde_json::from_slice::<Fields>(body)
        .map(Some)
        .map_err(|e| ApiError::bad_request("BadBody", format!("expected an object of scalar fields: {e}")))
}

fn summary_json(run: &Run, flows: &[(String, u64)]) -> Value {
    let mut v = serde_json::to_value(run.summary()).expect("summary serializes");
    let flows: Vec<Value> = flows.iter().map(|(id, ver)| json!({"flow_id": id, "version": ver})).collect();
    v["flows"] = Value::Array(flows);
    v
}

pub async fn start(State(s): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    check_id(&id)?;
    let req: StartRequest = json_body(&body)?;
    let clock = match req.clock.as_deref() {
        None | Some("wall") => ClockMode::Wall,
        Some("logical") => ClockMode::Logical,
        Some(other) => return Err(ApiError::bad_request("BadBody", format!("clock must be \"wall\" or \"logical\", got {other:?}"))),
    };
    let mut ids = vec![id];
    for w in req.with {
        check_id(&w)?;
        if !ids.contains(&w) {
            ids.push(w);
        }
    }

    let _guard = s.start_lock.lock().await;
    let (graphs, versions) = {
        let flows = s.flows.lock().expect("flow store lock");
        let mut graphs = Vec::new();
        let mut versions = Vec::new();
        for f in &ids {
            let rec = flows.latest(f).ok_or_else(|| ApiError::not_found("UnknownFlow", format!("no flow {f:?}")))?;
            graphs.push(rec.graph.clone());
            versions.push((f.clone(), rec.version));
        }
        (graphs, versions)
    };
    for f in &ids {
        if let Some(run_id) = s.active_run_of(f) {
            return Err(ApiError::conflict("AlreadyRunning", format!("flow {f:?} is already running in {run_id}"))
                .with_detail(json!({"flow_id": f, "run_id": run_id})));
        }
    }

    let step = Duration::from_millis(req.step_ms.unwrap_or(if clock == ClockMode::Wall { 1 } else { 100 }).max(1));
    let opts = RunOptions {
        clock,
        seed: req.seed.unwrap_or(0),
        out_dir: Some(s.runs_dir()),
        step_interval: step,
        ..RunOptions::default()
    };
    let st = Arc::clone(&s);
    let run = blocking(move || -> Result<Run, ApiError> {
        let run = Run::instantiate(&graphs, &st.registry, opts)?;
        run.start()?;
        Ok(run)
    })
    .await??;
    let run = Arc::new(run);
    if clock == ClockMode::Logical {
        let r = Arc::clone(&run);
        tokio::spawn(async move {
            let mut every = tokio::time::interval(step);
            every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            loop {
                every.tick().await;
                let r = Arc::clone(&r);
                match tokio::task::spawn_blocking(move || r.run_ticks(1)).await {
                    Ok(Ok(())) => {}
                    _ => break,
                }
            }
        });
    }
    let body = json!({
        "run_id": run.id(),
        "state": run.state(),
        "flows": versions.iter().map(|(f, v)| json!({"flow_id": f, "version": v})).collect::<Vec<_>>(),
    });
    s.runs.lock().expect("runs lock").insert(run.id().to_string(), LiveRun { run, flows: versions });
    Ok(Json(body))
}

fn live(s: &AppState, run_id: &str) -> Result<LiveRun, ApiError> {
    check_id(run_id)?;
    if let Some(r) = s.runs.lock().expect("runs lock").get(run_id) {
        return Ok(r.clone());
    }
    if s.runs_dir().join(run_id).is_dir() {
        Err(ApiError::conflict("RunNotLive", format!("run {run_id} finished before this server started")))
    } else {
        Err(ApiError::not_found("UnknownRun", format!("no run {run_id:?}")))
    }
}

fn run_dir(s: &AppState, run_id: &str) -> Result<std::path::PathBuf, ApiError> {
    check_id(run_id)?;
    let dir = s.runs_dir().join(run_id);
    if dir.is_dir() {
        Ok(dir)
    } else {
        Err(ApiError::not_found("UnknownRun", format!("no run {run_id:?}")))
    }
}

async fn transition(s: Arc<AppState>, run_id: String, drain: bool) -> Result<Json<Value>, ApiError> {
    let lr = live(&s, &run_id)?;
    let r = Arc::clone(&lr.run);
    blocking(move || if drain { r.drain() } else { r.stop() }).await??;
    save_summary(&lr.run)?;
    Ok(Json(summary_json(&lr.run, &lr.flows)))
}

pub async fn stop(State(s): State<Arc<AppState>>, Path(run_id): Path<String>) -> Result<Json<Value>, ApiError> {
    transition(s, run_id, false).await
}

pub async fn drain(State(s): State<Arc<AppState>>, Path(run_id): Path<String>) -> Result<Json<Value>, ApiError> {
    transition(s, run_id, true).await
}

fn stored_summary(dir: &std::path::Path, run_id: &str) -> Value {
    std::fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_else(|| json!({"run_id": run_id, "state": null}))
}

pub async fn get(State(s): State<Arc<AppState>>, Path(run_id): Path<String>) -> Result<Json<Value>, ApiError> {
    match live(&s, &run_id) {
        Ok(lr) => Ok(Json(summary_json(&lr.run, &lr.flows))),
        Err(e) if e.status == StatusCode::CONFLICT => Ok(Json(stored_summary(&run_dir(&s, &run_id)?, &run_id))),
        Err(e) => Err(e),
    }
}

pub async fn list(State(s): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let mut out = Vec::new();
    let live: Vec<(String, LiveRun)> = s.runs.lock().expect("runs lock").iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    for (id, lr) in &live {
        let flows: Vec<Value> = lr.flows.iter().map(|(f, v)| json!({"flow_id": f, "version": v})).collect();
        out.push(json!({"run_id": id, "state": lr.run.state(), "flows": flows, "live": true}));
    }
    if let Ok(entries) = std::fs::read_dir(s.runs_dir()) {
        for e in entries.flatten() {
            let Ok(id) = e.file_name().into_string() else { continue };
            if live.iter().any(|(l, _)| *l == id) || !e.path().is_dir() {
                continue;
            }
            let state = stored_summary(&e.path(), &id)["state"].clone();
            out.push(json!({"run_id": id, "state": state, "live": false}));
        }
    }
    Ok(Json(Value::Array(out)))
}

fn ndjson(body: Body) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

fn flag(q: &HashMap<String, String>, name: &str) -> Result<bool, ApiError> {
    match q.get(name).map(String::as_str) {
        None | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") | Some("") => Ok(true),
        Some(other) => Err(ApiError::bad_request("BadQuery", format!("{name} must be true or false, got {other:?}"))),
    }
}

/// The run's trace as JSON lines. With `follow=true` on a live run, the
/// response stays open and ends when the run stops.
pub async fn trace(State(s): State<Arc<AppState>>, Path(run_id): Path<String>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let follow = flag(&q, "follow")?;
    match live(&s, &run_id) {
        Ok(lr) if follow => {
            let rx = lr.run.subscribe_trace();
            let (tx, out) = tokio::sync::mpsc::channel::<Result<String, io::Error>>(256);
            tokio::task::spawn_blocking(move || {
                for ev in rx {
                    if tx.blocking_send(Ok(ev.to_json_line() + "\n")).is_err() {
                        break;
                    }
                }
            });
            let stream = futures::stream::unfold(out, |mut rx| async move { rx.recv().await.map(|item| (item, rx)) });
            Ok(ndjson(Body::from_stream(stream)))
        }
        Ok(lr) => {
            let text: String = lr.run.trace().iter().map(|e| e.to_json_line() + "\n").collect();
            Ok(ndjson(Body::from(text)))
        }
        Err(e) if e.status == StatusCode::CONFLICT => {
            let text = std::fs::read_to_string(run_dir(&s, &run_id)?.join("trace.jsonl"))?;
            Ok(ndjson(Body::from(text)))
        }
        Err(e) => Err(e),
    }
}

pub async fn fire_signal(
    State(s): State<Arc<AppState>>,
    Path((run_id, name)): Path<(String, String)>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let fields = fields_body(&body)?;
    let lr = live(&s, &run_id)?;
    let ev = blocking(move || lr.run.fire_signal(&name, fields)).await??;
    Ok((StatusCode::ACCEPTED, Json(json!({"name": ev.name, "seq": ev.seq, "emitted_by": ev.emitted_by}))))
}

pub async fn get_params(State(s): State<Arc<AppState>>, Path((run_id, brick)): Path<(String, String)>) -> Result<Json<Value>, ApiError> {
    let lr = live(&s, &run_id)?;
    let params = lr.run.brick_params(&brick).ok_or_else(|| ApiError::not_found("UnknownBrick", format!("no brick {brick:?} in run")))?;
    Ok(Json(json!({"brick": brick, "params": params})))
}

pub async fn patch_params(
    State(s): State<Arc<AppState>>,
    Path((run_id, brick)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let patch = fields_body(&body)?.unwrap_or_default();
    let lr = live(&s, &run_id)?;
    let b = brick.clone();
    let params = blocking(move || lr.run.set_brick_params(&b, &patch)).await??;
    Ok(Json(json!({"brick": brick, "params": params})))
}

pub async fn inject(
    State(s): State<Arc<AppState>>,
    Path((run_id, brick)): Path<(String, String)>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let fields = fields_body(&body)?.unwrap_or_default();
    let lr = live(&s, &run_id)?;
    let id = blocking(move || lr.run.inject(&brick, fields)).await??;
    Ok((StatusCode::ACCEPTED, Json(json!({"packet_id": id}))))
}

/// A store nothing was written to has no file yet.
fn missing<T>(e: io::Error) -> io::Result<Vec<T>> {
    if e.kind() == io::ErrorKind::NotFound {
        Ok(Vec::new())
    } else {
        Err(e)
    }
}

fn bound(q: &HashMap<String, String>, name: &str) -> Result<Option<i64>, ApiError> {
    q.get(name)
        .map(|v| v.parse::<i64>().map_err(|_| ApiError::bad_request("BadQuery", format!("{name} must be an integer, got {v:?}"))))
        .transpose()
}

pub async fn data(
    State(s): State<Arc<AppState>>,
    Path((run_id, store)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Value>, ApiError> {
    let (from, to) = (bound(&q, "from")?, bound(&q, "to")?);
    let dir = run_dir(&s, &run_id)?;
    let v = match store.as_str() {
        "tsdb" => serde_json::to_value(read_tsdb(&dir.join("tsdb.jsonl"), from, to).or_else(missing)?),
        "log" => serde_json::to_value(read_log(&dir.join("log.jsonl"), from, to).or_else(missing)?),
        other => return Err(ApiError::not_found("UnknownStore", format!("no store {other:?}; expected tsdb or log"))),
    };
    Ok(Json(v.expect("records serialize")))
}

impl AppState {
    /// Run id of an unfinished run that deployed `flow_id`.
    pub(super) fn active_run_of(&self, flow_id: &str) -> Option<String> {
        let runs = self.runs.lock().expect("runs lock");
        runs.iter()
            .find(|(_, lr)| {
                matches!(lr.run.state(), RunState::Created | RunState::Running | RunState::Draining)
                    && lr.flows.iter().any(|(f, _)| f == flow_id)
            })
            .map(|(id, _)| id.clone())
    }
}
