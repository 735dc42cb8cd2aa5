//! Append-only JSONL data stores: time series, log, and operator alerts.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{param_i64, param_str, BuildContext};
use crate::engine::{BrickContext, BrickError, BrickLogic, Emission};
use crate::flow::BrickSpec;
use crate::packet::Packet;
use crate::scalar::{Fields, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsdbRecord {
    pub ts: i64,
    pub series: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: i64,
    pub level: String,
    pub message: String,
}

/// Substitute `{field}` with packet values and `{$port}` with the arrival
/// port. Unknown names render as `?name?` and are returned separately.
pub fn render_template(template: &str, fields: &Fields, port: &str) -> (String, Vec<String>) {
    let mut out = String::with_capacity(template.len());
    let mut unknown = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let name = &after[..close];
        if name == "$port" {
            out.push_str(port);
        } else if let Some(v) = fields.get(name) {
            out.push_str(&v.render());
        } else {
            out.push('?');
            out.push_str(name);
            out.push('?');
            unknown.push(name.to_string());
        }
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    (out, unknown)
}

/// Line appender that opens its file on first use, so an unwritable file
/// surfaces as a per-packet error instead of a failed deployment.
struct Appender {
    path: Option<PathBuf>,
    file: Option<BufWriter<File>>,
    unflushed: usize,
    flush_every: usize,
}

impl Appender {
    fn new(path: Option<PathBuf>, flush_every: usize) -> Self {
        Appender { path, file: None, unflushed: 0, flush_every: flush_every.max(1) }
    }

    fn append(&mut self, line: &str) -> io::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if self.file.is_none() {
            self.file = Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?));
        }
        let f = self.file.as_mut().expect("opened above");
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        self.unflushed += 1;
        if self.unflushed >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.unflushed = 0;
        match self.file.as_mut() {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }
}

fn io_error(e: io::Error) -> BrickError {
    BrickError::new("IoError", e.to_string())
}

fn packet_ts(packet: &Packet, now: i64) -> i64 {
    match packet.get("ts") {
        Some(Scalar::Timestamp(t)) | Some(Scalar::Int(t)) => *t,
        _ => now,
    }
}

struct TsdbWriter {
    series: String,
    field: String,
    out: Appender,
}

impl BrickLogic for TsdbWriter {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, _: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        let value = packet
            .get(&self.field)
            .and_then(Scalar::as_f64)
            .ok_or_else(|| BrickError::new("MissingField", format!("missing numeric field {:?}", self.field)))?;
        let rec = TsdbRecord { ts: packet_ts(packet, ctx.now), series: self.series.clone(), value };
        self.out.append(&serde_json::to_string(&rec).expect("record serializes")).map_err(io_error)?;
        Ok(Vec::new())
    }

    fn flush(&mut self) -> Result<(), BrickError> {
        self.out.flush().map_err(io_error)
    }
}

pub(super) fn tsdb_writer(spec: &BrickSpec, cx: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    let flush_every = param_i64(spec, "flush_every", 100)?;
    if !(1..=100).contains(&flush_every) {
        return Err("flush_every must be between 1 and 100".into());
    }
    Ok(Box::new(TsdbWriter {
        series: param_str(spec, "series", &spec.id)?,
        field: param_str(spec, "field", "MeasuredTemp")?,
        out: Appender::new(cx.run_dir.map(|d| d.join("tsdb.jsonl")), flush_every as usize),
    }))
}

struct LogWriter {
    out: Appender,
}

impl BrickLogic for LogWriter {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, port: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        let template = ctx.params.get("template").and_then(Scalar::as_str).unwrap_or("{$port}").to_string();
        let level = ctx.params.get("level").and_then(Scalar::as_str).unwrap_or("info").to_string();
        let (message, unknown) = render_template(&template, &packet.fields, port);
        for name in unknown {
            ctx.warn("template-field", format!("template field {name:?} not in packet"));
        }
        let rec = LogRecord { ts: ctx.now, level, message };
        self.out.append(&serde_json::to_string(&rec).expect("record serializes")).map_err(io_error)?;
        Ok(Vec::new())
    }

    fn flush(&mut self) -> Result<(), BrickError> {
        self.out.flush().map_err(io_error)
    }
}

pub(super) fn log_writer(spec: &BrickSpec, cx: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    param_str(spec, "template", "")?;
    param_str(spec, "level", "info")?;
    Ok(Box::new(LogWriter { out: Appender::new(cx.run_dir.map(|d| d.join("log.jsonl")), 100) }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertSeverity {
    Warning,
    Critical,
}

impl AlertSeverity {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "warning" => Some(AlertSeverity::Warning),
            "critical" => Some(AlertSeverity::Critical),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub severity: AlertSeverity,
    pub message: String,
    pub ts: i64,
    pub acked: bool,
    pub acked_by: Option<String>,
}

#[derive(Debug, Error)]
pub enum AlertError {
    #[error("unknown alert {0:?}")]
    NotFound(String),
    #[error("alert {0:?} is already acknowledged")]
    AlreadyAcked(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct AlertBook {
    prefix: String,
    alerts: Vec<Alert>,
    file: Option<File>,
}

impl AlertBook {
    fn append(&mut self, alert: &Alert) -> io::Result<()> {
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(alert).expect("alert serializes"))?;
        }
        Ok(())
    }
}

/// Alerts of one run. Every change appends the full record to `alerts.jsonl`;
/// on load the last record per id wins.
#[derive(Clone)]
pub struct AlertStore {
    inner: Arc<Mutex<AlertBook>>,
}

impl AlertStore {
    pub fn new(prefix: &str, path: Option<PathBuf>) -> io::Result<Self> {
        let file = match path {
            Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
            None => None,
        };
        Ok(AlertStore { inner: Arc::new(Mutex::new(AlertBook { prefix: prefix.to_string(), alerts: Vec::new(), file })) })
    }

    pub fn load(prefix: &str, path: &Path) -> io::Result<Self> {
        let mut alerts: Vec<Alert> = Vec::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let a: Alert = serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                match alerts.iter_mut().find(|x| x.alert_id == a.alert_id) {
                    Some(slot) => *slot = a,
                    None => alerts.push(a),
                }
            }
        }
        let store = AlertStore::new(prefix, Some(path.to_path_buf()))?;
        store.lock().alerts = alerts;
        Ok(store)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, AlertBook> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Record a new unacknowledged alert. It is kept in memory even when the
    /// file append fails.
    pub fn create(&self, severity: AlertSeverity, message: String, ts: i64) -> (Alert, io::Result<()>) {
        let mut book = self.lock();
        let alert = Alert {
            alert_id: format!("{}-{}", book.prefix, book.alerts.len() + 1),
            severity,
            message,
            ts,
            acked: false,
            acked_by: None,
        };
        book.alerts.push(alert.clone());
        let res = book.append(&alert);
        (alert, res)
    }

    pub fn list(&self, acked: Option<bool>) -> Vec<Alert> {
        self.lock().alerts.iter().filter(|a| acked.is_none_or(|want| a.acked == want)).cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<Alert> {
        self.lock().alerts.iter().find(|a| a.alert_id == id).cloned()
    }

    pub fn ack(&self, id: &str, by: Option<String>) -> Result<Alert, AlertError> {
        let mut book = self.lock();
        let a = book.alerts.iter_mut().find(|a| a.alert_id == id).ok_or_else(|| AlertError::NotFound(id.to_string()))?;
        if a.acked {
            return Err(AlertError::AlreadyAcked(id.to_string()));
        }
        a.acked = true;
        a.acked_by = by;
        let a = a.clone();
        book.append(&a)?;
        Ok(a)
    }
}

struct AlertOutlet {
    store: AlertStore,
    severity: AlertSeverity,
}

impl BrickLogic for AlertOutlet {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, port: &str, packet: &Packet) -> Result<Vec<Emission>, BrickError> {
        let template = ctx.params.get("template").and_then(Scalar::as_str).unwrap_or("alert from {$port}").to_string();
        let (message, unknown) = render_template(&template, &packet.fields, port);
        for name in unknown {
            ctx.warn("template-field", format!("template field {name:?} not in packet"));
        }
        let (_, res) = self.store.create(self.severity, message, ctx.now);
        res.map_err(io_error)?;
        Ok(Vec::new())
    }
}

pub(super) fn alert_outlet(spec: &BrickSpec, cx: &BuildContext<'_>) -> Result<Box<dyn BrickLogic>, String> {
    let sev = param_str(spec, "severity", "warning")?;
    let severity = AlertSeverity::from_name(&sev).ok_or_else(|| format!("severity must be warning or critical, got {sev:?}"))?;
    param_str(spec, "template", "")?;
    Ok(Box::new(AlertOutlet { store: cx.alerts.clone(), severity }))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

/// Records with `from <= ts <= to`.
pub fn read_tsdb(path: &Path, from: Option<i64>, to: Option<i64>) -> io::Result<Vec<TsdbRecord>> {
    let recs: Vec<TsdbRecord> = read_jsonl(path)?;
    Ok(recs.into_iter().filter(|r| from.is_none_or(|f| r.ts >= f) && to.is_none_or(|t| r.ts <= t)).collect())
}

pub fn read_log(path: &Path, from: Option<i64>, to: Option<i64>) -> io::Result<Vec<LogRecord>> {
    let recs: Vec<LogRecord> = read_jsonl(path)?;
    Ok(recs.into_iter().filter(|r| from.is_none_or(|f| r.ts >= f) && to.is_none_or(|t| r.ts <= t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields;

    #[test]
    fn template_substitution() {
        let f = fields([("MeasuredTemp", 80.0)]);
        assert_eq!(render_template("temp {MeasuredTemp} out of range", &f, "in").0, "temp 80 out of range");
        let (msg, unknown) = render_template("{Nope} via {$port}", &f, "too_high");
        assert_eq!(msg, "?Nope? via too_high");
        assert_eq!(unknown, vec!["Nope"]);
        assert_eq!(render_template("dangling {x", &f, "p").0, "dangling {x");
    }

    #[test]
    fn alert_ack_once_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alerts.jsonl");
        let store = AlertStore::new("r1", Some(path.clone())).unwrap();
        let (a, res) = store.create(AlertSeverity::Warning, "hot".into(), 5);
        res.unwrap();
        assert!(!a.acked);
        assert_eq!(store.list(Some(false)).len(), 1);
        let acked = store.ack(&a.alert_id, Some("op".into())).unwrap();
        assert!(acked.acked);
        assert!(matches!(store.ack(&a.alert_id, None), Err(AlertError::AlreadyAcked(_))));
        assert!(matches!(store.ack("nope", None), Err(AlertError::NotFound(_))));

        let reloaded = AlertStore::load("r1", &path).unwrap();
        assert_eq!(reloaded.list(None), vec![acked]);
        assert!(reloaded.list(Some(false)).is_empty());
    }

    #[test]
    fn tsdb_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tsdb.jsonl");
        let mut out = Appender::new(Some(path.clone()), 100);
        for i in 0..5 {
            let rec = TsdbRecord { ts: i, series: "s".into(), value: 70.0 + i as f64 / 2.0 };
            out.append(&serde_json::to_string(&rec).unwrap()).unwrap();
        }
        out.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"ts":0,"series":"s","value":70.0}"#);
        let got = read_tsdb(&path, Some(1), Some(3)).unwrap();
        assert_eq!(got.iter().map(|r| r.ts).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(got[1].value, 71.0);
    }
}
