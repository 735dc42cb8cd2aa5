use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use crate::packet::PacketId;
use crate::scalar::Fields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceKind {
    PacketEmitted,
    PacketConsumed,
    PacketDropped,
    SignalFired,
    BrickError,
    BrickStarted,
    BrickStopped,
    QueueSaturated,
    ParamsChanged,
}

/// One monitoring record. Serialized as one JSON object per line in
/// `trace.jsonl`, with exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub ts: i64,
    pub run_id: String,
    pub kind: TraceKind,
    pub brick: String,
    pub port: Option<String>,
    pub packet_id: Option<PacketId>,
    pub detail: Fields,
}

impl TraceEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace event serializes")
    }

    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.detail.get(key).and_then(|v| v.as_str())
    }

    pub fn detail_i64(&self, key: &str) -> Option<i64> {
        self.detail.get(key).and_then(|v| v.as_i64())
    }
}

/// Fan-out of trace events to memory, the run's trace file, and live subscribers.
pub(crate) struct TraceSink {
    events: Vec<TraceEvent>,
    file: Option<BufWriter<File>>,
    subscribers: Vec<Sender<TraceEvent>>,
    closed: bool,
}

impl TraceSink {
    pub fn new(path: Option<&Path>) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        Ok(TraceSink { events: Vec::new(), file, subscribers: Vec::new(), closed: false })
    }

    pub fn record(&mut self, ev: TraceEvent) {
        if let Some(f) = self.file.as_mut() {
            // A failing trace file must not stop the run; the in-memory copy stays complete.
            let _ = writeln!(f, "{}", ev.to_json_line());
        }
        self.subscribers.retain(|s| s.send(ev.clone()).is_ok());
        self.events.push(ev);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Stream of every event: the backlog so far, then live events until the run stops.
    pub fn subscribe(&mut self) -> Receiver<TraceEvent> {
        let (tx, rx) = channel();
        for ev in &self.events {
            let _ = tx.send(ev.clone());
        }
        if !self.closed {
            self.subscribers.push(tx);
        }
        rx
    }

    pub fn flush(&mut self) {
        if let Some(f) = self.file.as_mut() {
            let _ = f.flush();
        }
    }

    pub fn close(&mut self) {
        self.flush();
        self.subscribers.clear();
        self.closed = true;
    }
}

/// Replace run ids and (for wall-clock runs) timestamps so traces from two
/// runs can be compared byte for byte.
pub fn normalize_trace(text: &str, zero_timestamps: bool) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        match serde_json::from_str::<TraceEvent>(line) {
            Ok(mut ev) => {
                ev.run_id = "RUN".into();
                if zero_timestamps {
                    ev.ts = 0;
                }
                out.push_str(&ev.to_json_line());
            }
            Err(_) => out.push_str(line),
        }
        out.push('\n');
    }
    out
}
