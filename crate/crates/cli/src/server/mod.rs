//! HTTP API under `/api/v1`. Flows and run directories live under the data
//! directory; everything else is in memory.

mod alerts;
mod error;
mod flows;
mod rules;
mod runs;

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::routing::{get, post, put};
use axum::Router;
use flowforge_core::engine::{Run, RunState};
use flowforge_core::stdlib::{AlertStore, Registry};
use serde_json::json;
use tower_http::services::{ServeDir, ServeFile};

pub use error::ApiError;
pub use flows::{DeploymentRecord, FlowStatus, FlowStore};

#[derive(Clone)]
pub(crate) struct LiveRun {
    run: Arc<Run>,
    flows: Vec<(String, u64)>,
}

pub struct AppState {
    data_dir: PathBuf,
    registry: Registry,
    flows: Mutex<FlowStore>,
    runs: Mutex<BTreeMap<String, LiveRun>>,
    disk_alerts: Mutex<BTreeMap<String, AlertStore>>,
    start_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn open(data_dir: PathBuf) -> io::Result<Arc<Self>> {
        let flows = FlowStore::open(data_dir.join("flows"))?;
        std::fs::create_dir_all(data_dir.join("runs"))?;
        Ok(Arc::new(AppState {
            data_dir,
            registry: Registry::standard(),
            flows: Mutex::new(flows),
            runs: Mutex::new(BTreeMap::new()),
            disk_alerts: Mutex::new(BTreeMap::new()),
            start_lock: tokio::sync::Mutex::new(()),
        }))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.data_dir.join("runs")
    }

    fn flow_status(&self, flow_id: &str, version: u64) -> FlowStatus {
        let runs = self.runs.lock().expect("runs lock");
        let mut status = FlowStatus::Stored;
        for lr in runs.values().filter(|lr| lr.flows.iter().any(|(f, v)| f == flow_id && *v == version)) {
            match lr.run.state() {
                RunState::Created | RunState::Running | RunState::Draining => return FlowStatus::Running,
                RunState::Stopped | RunState::Failed => status = FlowStatus::Stopped,
            }
        }
        status
    }

    /// Stop every unfinished run and record its summary.
    pub fn shutdown(&self) {
        let runs: Vec<LiveRun> = self.runs.lock().expect("runs lock").values().cloned().collect();
        for lr in runs {
            if matches!(lr.run.state(), RunState::Running | RunState::Draining) {
                let _ = lr.run.stop();
                let _ = crate::commands::save_summary(&lr.run);
            }
        }
    }
}

pub(crate) fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

/// Ids used as path components: letters, digits, `-`, `_`, `.`, not starting with `.`.
pub(crate) fn check_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request("BadId", format!("invalid id {id:?}")))
    }
}

pub(crate) async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

async fn health() -> axum::Json<serde_json::Value> {
    axum::Json(json!({"status": "ok"}))
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("NotFound", "no such endpoint")
}

pub fn app(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/flows", get(flows::list))
        .route("/flows/{id}", put(flows::put).get(flows::get))
        .route("/flows/{id}/start", post(runs::start))
        .route("/runs", get(runs::list))
        .route("/runs/{run_id}", get(runs::get))
        .route("/runs/{run_id}/stop", post(runs::stop))
        .route("/runs/{run_id}/drain", post(runs::drain))
        .route("/runs/{run_id}/trace", get(runs::trace))
        .route("/runs/{run_id}/signals/{name}", post(runs::fire_signal))
        .route("/runs/{run_id}/bricks/{brick_id}/params", get(runs::get_params).patch(runs::patch_params))
        .route("/runs/{run_id}/bricks/{brick_id}/inject", post(runs::inject))
        .route("/runs/{run_id}/data/{store}", get(runs::data))
        .route("/alerts", get(alerts::list))
        .route("/alerts/{alert_id}/ack", post(alerts::ack))
        .route("/rules/check", post(rules::check_rules))
        .route("/rules/format", post(rules::format_rules))
        .route("/validate", post(rules::validate_flow))
        .route("/builtins", get(rules::builtins))
        .fallback(api_not_found)
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    match ui_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => app.fallback(api_not_found),
    }
}

pub async fn serve(addr: SocketAddr, data_dir: PathBuf, ui_dir: Option<PathBuf>) -> io::Result<()> {
    let state = AppState::open(data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("flowforge listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app(Arc::clone(&state), ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::spawn_blocking(move || state.shutdown()).await.map_err(io::Error::other)?;
    Ok(())
}
