use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use flowforge_cli::commands;
use flowforge_cli::server::{app, AppState};
use flowforge_core::rules::CHECK_TEMPERATURE_SOURCE;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn scenario_text(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/engine-temperature").join(name);
    std::fs::read_to_string(p).unwrap()
}

struct Api {
    app: Router,
    data: tempfile::TempDir,
}

impl Api {
    fn new() -> Self {
        Self::with_ui(None)
    }

    fn with_ui(ui: Option<PathBuf>) -> Self {
        let data = tempfile::tempdir().unwrap();
        let state: Arc<AppState> = AppState::open(data.path().to_path_buf()).unwrap();
        Api { app: app(state, ui), data }
    }

    async fn raw(&self, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, String, Vec<u8>) {
        let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string()).unwrap_or_default();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, ctype, bytes)
    }

    async fn call(&self, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, Value) {
        let (status, ctype, bytes) = self.raw(method, uri, body).await;
        assert!(ctype.starts_with("application/json"), "{uri}: content type {ctype:?}");
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, Body::empty()).await
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, body.to_string()).await
    }

    async fn put_canonical(&self) {
        for (id, file) in [("engine_measure", "engine_measure.flow.json"), ("handle_temperature", "handle_temperature.flow.json")] {
            let (s, v) = self.call(Method::PUT, &format!("/api/v1/flows/{id}"), scenario_text(file)).await;
            assert_eq!(s, StatusCode::OK, "{v}");
        }
    }

    /// Start both canonical flows on a fast logical clock.
    async fn start(&self) -> String {
        let (s, v) = self.post("/api/v1/flows/engine_measure/start", json!({"with": ["handle_temperature"], "clock": "logical", "step_ms": 1})).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v["run_id"].as_str().unwrap().to_string()
    }

    fn trace_file(&self, run_id: &str) -> String {
        std::fs::read_to_string(self.data.path().join("runs").join(run_id).join("trace.jsonl")).unwrap()
    }
}

fn error_body(v: &Value, code: &str) {
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["code", "detail", "message"], "{v}");
    assert_eq!(v["code"], code, "{v}");
    assert!(!v["message"].as_str().unwrap().is_empty());
}

async fn wait_for<F, Fut>(mut f: F) -> Value
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Option<Value>>,
{
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        if let Some(v) = f().await {
            return v;
        }
        assert!(Instant::now() < deadline, "condition not reached");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn put_versions_and_lists_flows() {
    let api = Api::new();
    api.put_canonical().await;
    let (s, v) = api.call(Method::PUT, "/api/v1/flows/engine_measure", scenario_text("engine_measure.flow.json")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["version"], 2);
    assert_eq!(v["status"], "Stored");
    assert_eq!(v["graph"]["id"], "engine_measure");

    let (_, list) = api.get("/api/v1/flows").await;
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|r| r["flow_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["engine_measure", "handle_temperature"]);

    // A second server over the same directory sees the stored versions.
    let again = AppState::open(api.data.path().to_path_buf()).unwrap();
    let api2 = Api { app: app(again, None), data: tempfile::tempdir().unwrap() };
    let (s, v) = api2.get("/api/v1/flows/engine_measure").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["version"], 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_flow_reports_same_diagnostics_as_cli() {
    let api = Api::new();
    let mut g: Value = serde_json::from_str(&scenario_text("engine_measure.flow.json")).unwrap();
    g["bricks"][2]["kind"] = Value::from("filter");
    g["bricks"][1]["out_ports"] = json!(["out", "spare"]);
    let text = serde_json::to_string(&g).unwrap();

    let (s, v) = api.call(Method::PUT, "/api/v1/flows/engine_measure", text.clone()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    error_body(&v, "InvalidFlow");

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.flow.json");
    std::fs::write(&path, &text).unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(commands::validate(&[path], true, &mut out, &mut err).unwrap(), commands::EXIT_DIAGNOSTICS);
    let cli: Vec<Value> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(v["detail"]["diagnostics"], Value::Array(cli.clone()));
    assert!(cli.len() >= 2);

    let (s, v) = api.post("/api/v1/validate", g).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["diagnostics"], Value::Array(cli));

    // Nothing was stored.
    let (s, v) = api.get("/api/v1/flows/engine_measure").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    error_body(&v, "UnknownFlow");
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_requests_are_400() {
    let api = Api::new();
    let (s, v) = api.call(Method::PUT, "/api/v1/flows/x", "{ nope").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    error_body(&v, "FlowParseError");

    let (s, v) = api.call(Method::PUT, "/api/v1/flows/other", scenario_text("engine_measure.flow.json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    error_body(&v, "IdMismatch");

    let (s, v) = api.call(Method::PUT, "/api/v1/flows/..hidden", scenario_text("engine_measure.flow.json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    error_body(&v, "BadId");

    api.put_canonical().await;
    let (s, v) = api.post("/api/v1/flows/engine_measure/start", json!({"clock": "sundial"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    error_body(&v, "BadBody");

    let (s, v) = api.get("/api/v1/alerts?acked=maybe").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    error_body(&v, "BadQuery");
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_things_are_404() {
    let api = Api::new();
    for uri in ["/api/v1/nothing-here", "/api/v1/runs/nope", "/api/v1/flows/nope", "/"] {
        let (s, v) = api.get(uri).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert!(v["code"].is_string(), "{uri}: {v}");
    }
    let (s, v) = api.post("/api/v1/flows/nope/start", json!({})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    error_body(&v, "UnknownFlow");
    let (s, v) = api.post("/api/v1/alerts/nope/ack", json!({"by": "op"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    error_body(&v, "UnknownAlert");
}

#[tokio::test(flavor = "multi_thread")]
async fn live_run_params_alerts_and_stop() {
    let api = Api::new();
    api.put_canonical().await;
    let run_id = api.start().await;

    let (_, v) = api.get("/api/v1/flows/engine_measure").await;
    assert_eq!(v["status"], "Running");
    let (s, v) = api.post("/api/v1/flows/handle_temperature/start", json!({})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    error_body(&v, "AlreadyRunning");

    let params = format!("/api/v1/runs/{run_id}/bricks/check-temperature/params");
    let (s, v) = api.get(&params).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["params"], json!({"MaxTemp": 75.0, "MinTemp": 65.0}));

    // MinTemp above MaxTemp is refused and changes nothing.
    let (s, v) = api.call(Method::PATCH, &params, json!({"MinTemp": 80}).to_string()).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(api.get(&params).await.1["params"]["MinTemp"], 65.0);

    let (s, v) = api.call(Method::PATCH, &params, json!({"MaxTemp": 60.0, "MinTemp": 50.0}).to_string()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["params"], json!({"MaxTemp": 60.0, "MinTemp": 50.0}));

    let (s, v) = api.get(&format!("/api/v1/runs/{run_id}/bricks/ghost/params")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    error_body(&v, "UnknownBrick");

    // Every reading is now too high, so alerts arrive.
    let alert = wait_for(|| async {
        let (_, v) = api.get("/api/v1/alerts?acked=false").await;
        v.as_array().unwrap().first().cloned()
    })
    .await;
    assert!(alert["message"].as_str().unwrap().contains("too_high"), "{alert}");
    let ack = format!("/api/v1/alerts/{}/ack", alert["alert_id"].as_str().unwrap());
    let (s, v) = api.post(&ack, json!({"by": "op"})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["acked"], true);
    assert_eq!(v["acked_by"], "op");
    let (s, v) = api.post(&ack, json!({"by": "op"})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    error_body(&v, "AlreadyAcked");
    let (_, acked) = api.get("/api/v1/alerts?acked=true").await;
    assert!(acked.as_array().unwrap().iter().any(|a| a["alert_id"] == alert["alert_id"]));

    let (s, v) = api.post(&format!("/api/v1/runs/{run_id}/signals/handle-temperature"), json!({"MeasuredTemp": 99.0, "direction": "too_high"})).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v["name"], "handle-temperature");

    let (s, v) = api.post(&format!("/api/v1/runs/{run_id}/bricks/temperature-filter/inject"), json!({"MeasuredTemp": 70.0})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    error_body(&v, "NotAnInlet");
    let (s, v) = api.post(&format!("/api/v1/runs/{run_id}/bricks/engine/inject"), json!({"MeasuredTemp": 70.0})).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    assert!(v["packet_id"].is_string() || v["packet_id"].is_number(), "{v}");

    let (s, summary) = api.post(&format!("/api/v1/runs/{run_id}/stop"), json!(null)).await;
    assert_eq!(s, StatusCode::OK, "{summary}");
    assert_eq!(summary["state"], "Stopped");
    assert_eq!(summary["flows"].as_array().unwrap().len(), 2);
    let (s, v) = api.post(&format!("/api/v1/runs/{run_id}/stop"), json!(null)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    error_body(&v, "IllegalTransition");

    let (_, v) = api.get("/api/v1/flows/engine_measure").await;
    assert_eq!(v["status"], "Stopped");
    let (_, v) = api.get(&format!("/api/v1/runs/{run_id}")).await;
    assert_eq!(v["state"], "Stopped");
    let (_, runs) = api.get("/api/v1/runs").await;
    assert!(runs.as_array().unwrap().iter().any(|r| r["run_id"] == run_id.as_str()));

    let (s, ctype, trace) = api.raw(Method::GET, &format!("/api/v1/runs/{run_id}/trace"), Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype, "application/x-ndjson");
    assert_eq!(String::from_utf8(trace).unwrap(), api.trace_file(&run_id));

    let (s, tsdb) = api.get(&format!("/api/v1/runs/{run_id}/data/tsdb")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!tsdb.as_array().unwrap().is_empty());
    let (s, v) = api.get(&format!("/api/v1/runs/{run_id}/data/tsdb?from=abc")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    error_body(&v, "BadQuery");
}

#[tokio::test(flavor = "multi_thread")]
async fn followed_trace_matches_trace_file() {
    let api = Arc::new(Api::new());
    api.put_canonical().await;
    let run_id = api.start().await;

    let stopper = {
        let api = Arc::clone(&api);
        let run_id = run_id.clone();
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(200)).await;
            let (s, v) = api.post(&format!("/api/v1/runs/{run_id}/drain"), json!(null)).await;
            assert_eq!(s, StatusCode::OK, "{v}");
        })
    };
    let (s, ctype, body) = api.raw(Method::GET, &format!("/api/v1/runs/{run_id}/trace?follow=true"), Body::empty()).await;
    stopper.await.unwrap();
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype, "application/x-ndjson");
    let streamed = String::from_utf8(body).unwrap();
    assert!(streamed.lines().count() > 10);
    assert_eq!(streamed, api.trace_file(&run_id));
}

#[tokio::test(flavor = "multi_thread")]
async fn rules_endpoints() {
    let api = Api::new();
    let selector = json!({
        "source": CHECK_TEMPERATURE_SOURCE,
        "kind": "selector",
        "out_ports": ["TooHighPort", "TooLowPort", "InRangePort"],
        "params": {"MaxTemp": 75.0, "MinTemp": 65.0},
    });
    let (s, v) = api.post("/api/v1/rules/check", selector.clone()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["ok"], true);
    assert_eq!(v["exactly_one_emit"], true);
    assert_eq!(v["formatted"], CHECK_TEMPERATURE_SOURCE);

    let mut cut = selector.clone();
    cut["source"] = Value::from(CHECK_TEMPERATURE_SOURCE.split("else:").next().unwrap());
    let (s, v) = api.post("/api/v1/rules/check", cut).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["ok"], false);
    assert_eq!(v["exactly_one_emit"], false);
    assert!(!v["diagnostics"].as_array().unwrap().is_empty());

    let (s, v) = api.post("/api/v1/rules/check", json!({"source": "if x >:\n"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    error_body(&v, "RuleSyntaxError");
    assert_eq!(v["detail"]["line"], 1);

    let messy = CHECK_TEMPERATURE_SOURCE.replace("    ", "  ");
    let (s, v) = api.post("/api/v1/rules/format", json!({"source": messy})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["source"], CHECK_TEMPERATURE_SOURCE);

    let (s, v) = api.get("/api/v1/builtins").await;
    assert_eq!(s, StatusCode::OK);
    assert!(v.as_array().unwrap().iter().any(|b| b["name"] == "tsdb_writer"));
}

#[tokio::test(flavor = "multi_thread")]
async fn serves_ui_bundle_beside_api() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>ui</title>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let api = Api::with_ui(Some(ui.path().to_path_buf()));

    let (s, ctype, body) = api.raw(Method::GET, "/", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(ctype.starts_with("text/html"));
    assert!(String::from_utf8(body).unwrap().contains("<title>ui</title>"));
    let (s, ctype, _) = api.raw(Method::GET, "/app.js", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(ctype.contains("javascript"), "{ctype}");
    // Client-side routes get the index.
    let (s, _, body) = api.raw(Method::GET, "/flows/engine_measure", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("<title>ui</title>"));

    let (s, v) = api.get("/api/v1/missing").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    error_body(&v, "NotFound");
    let (s, v) = api.get("/api/v1/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}
