use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::Json;
use flowforge_core::stdlib::{Alert, AlertStore};
use serde::Deserialize;
use serde_json::Value;

use super::{ApiError, AppState};

impl AppState {
    /// Alert stores of every run: live runs in memory, finished ones from disk.
    fn alert_stores(&self) -> Vec<AlertStore> {
        let mut stores = Vec::new();
        let live: Vec<String> = {
            let runs = self.runs.lock().expect("runs lock");
            stores.extend(runs.values().map(|lr| lr.run.alerts()));
            runs.keys().cloned().collect()
        };
        let mut cache = self.disk_alerts.lock().expect("alerts lock");
        if let Ok(entries) = std::fs::read_dir(self.runs_dir()) {
            for e in entries.flatten() {
                let Ok(id) = e.file_name().into_string() else { continue };
                if live.contains(&id) {
                    continue;
                }
                let path = e.path().join("alerts.jsonl");
                if !cache.contains_key(&id) && path.is_file() {
                    match AlertStore::load(&id, &path) {
                        Ok(s) => {
                            cache.insert(id.clone(), s);
                        }
                        Err(err) => eprintln!("skipping {}: {err}", path.display()),
                    }
                }
                if let Some(s) = cache.get(&id) {
                    stores.push(s.clone());
                }
            }
        }
        stores
    }
}

pub async fn list(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> Result<Json<Vec<Alert>>, ApiError> {
    let acked = match q.get("acked").map(String::as_str) {
        None => None,
        Some("true") => Some(true),
        Some("false") => Some(false),
        Some(other) => return Err(ApiError::bad_request("BadQuery", format!("acked must be true or false, got {other:?}"))),
    };
    let mut all: Vec<Alert> = s.alert_stores().iter().flat_map(|st| st.list(acked)).collect();
    all.sort_by(|a, b| b.ts.cmp(&a.ts).then_with(|| b.alert_id.cmp(&a.alert_id)));
    Ok(Json(all))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AckRequest {
    by: Option<String>,
}

pub async fn ack(State(s): State<Arc<AppState>>, Path(alert_id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: AckRequest = if body.iter().all(u8::is_ascii_whitespace) {
        AckRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("BadBody", e.to_string()))?
    };
    let store = s
        .alert_stores()
        .into_iter()
        .find(|st| st.get(&alert_id).is_some())
        .ok_or_else(|| ApiError::not_found("UnknownAlert", format!("no alert {alert_id:?}")))?;
    let alert = store.ack(&alert_id, req.by)?;
    Ok(Json(serde_json::to_value(alert).expect("alert serializes")))
}
