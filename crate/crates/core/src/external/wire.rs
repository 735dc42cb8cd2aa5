use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::flow::BrickKind;
use crate::packet::PacketId;
use crate::scalar::Fields;

pub const PROTOCOL_VERSION: u64 = 1;

/// What an external brick claims to be, sent in its `hello`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrickDescriptor {
    pub name: String,
    pub kind: BrickKind,
    pub in_ports: Vec<String>,
    pub out_ports: Vec<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One protocol line. Serialized with the type under `"t"` and the version
/// under `"v"`; the body fields sit next to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum WireMessage {
    Hello(BrickDescriptor),
    Config {
        params: Fields,
    },
    Packet {
        port: String,
        packet_id: PacketId,
        fields: Fields,
    },
    Emit {
        port: String,
        packet_id: PacketId,
        fields: Fields,
        #[serde(default, skip_serializing_if = "is_false")]
        last: bool,
    },
    Done {
        packet_id: PacketId,
    },
    Signal {
        name: String,
        fields: Fields,
    },
    Error {
        code: String,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        packet_id: Option<PacketId>,
    },
    Ping {
        seq: u64,
    },
    Pong {
        seq: u64,
    },
    Bye,
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::Hello(_) => "hello",
            WireMessage::Config { .. } => "config",
            WireMessage::Packet { .. } => "packet",
            WireMessage::Emit { .. } => "emit",
            WireMessage::Done { .. } => "done",
            WireMessage::Signal { .. } => "signal",
            WireMessage::Error { .. } => "error",
            WireMessage::Ping { .. } => "ping",
            WireMessage::Pong { .. } => "pong",
            WireMessage::Bye => "bye",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct WireError {
    /// One of `malformed`, `version`, `unknown-type`, `schema`.
    pub code: &'static str,
    pub message: String,
}

impl WireError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        WireError { code, message: message.into() }
    }
}

/// Serialize to one line, without the terminating newline.
pub fn encode(msg: &WireMessage) -> String {
    let mut v = serde_json::to_value(msg).expect("wire message serializes");
    v.as_object_mut().expect("tagged enum is an object").insert("v".into(), PROTOCOL_VERSION.into());
    v.to_string()
}

/// Parse one line, without its terminating newline.
pub fn decode(line: &str) -> Result<WireMessage, WireError> {
    if line.contains('\r') {
        return Err(WireError::new("malformed", "carriage return in line"));
    }
    if line.contains('\n') {
        return Err(WireError::new("malformed", "embedded newline"));
    }
    let value: Value = serde_json::from_str(line).map_err(|e| WireError::new("malformed", e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| WireError::new("malformed", "line is not a JSON object"))?;
    match obj.get("v") {
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(v) => return Err(WireError::new("version", format!("unsupported protocol version {v}"))),
        None => return Err(WireError::new("version", "missing \"v\"")),
    }
    let t = match obj.get("t") {
        Some(Value::String(t)) => t.clone(),
        Some(_) => return Err(WireError::new("malformed", "\"t\" is not a string")),
        None => return Err(WireError::new("malformed", "missing \"t\"")),
    };
    const KNOWN: [&str; 10] = ["hello", "config", "packet", "emit", "done", "signal", "error", "ping", "pong", "bye"];
    if !KNOWN.contains(&t.as_str()) {
        return Err(WireError::new("unknown-type", format!("unknown message type {t:?}")));
    }
    serde_json::from_value(value).map_err(|e| WireError::new("schema", format!("bad {t} message: {e}")))
}
