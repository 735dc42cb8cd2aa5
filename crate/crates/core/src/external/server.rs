//! Brick side of the protocol, for writing external bricks in Rust.

use std::io::{self, BufRead, Write};

use super::wire::{decode, encode, BrickDescriptor, WireMessage};
use crate::scalar::Fields;

/// Result of handling one packet.
pub enum Outcome {
    /// Zero or more `(port, fields)` emissions.
    Emit(Vec<(String, Fields)>),
    Fail { code: String, message: String },
    /// Write this text as a line verbatim. For protocol conformance testing.
    Raw(String),
}

pub trait BrickHandler {
    fn configure(&mut self, _params: &Fields) -> Result<(), String> {
        Ok(())
    }

    fn handle(&mut self, port: &str, fields: &Fields) -> Outcome;

    /// Whether to answer pings. Only liveness tests turn this off.
    fn answers_pings(&self) -> bool {
        true
    }
}

fn send<W: Write>(out: &mut W, msg: &WireMessage) -> io::Result<()> {
    writeln!(out, "{}", encode(msg))?;
    out.flush()
}

/// Announce `descriptor`, then answer messages from `input` until `bye` or EOF.
pub fn serve<R: BufRead, W: Write>(
    descriptor: &BrickDescriptor,
    handler: &mut dyn BrickHandler,
    input: R,
    mut output: W,
) -> io::Result<()> {
    send(&mut output, &WireMessage::Hello(descriptor.clone()))?;
    for line in input.lines() {
        let line = line?;
        let msg = match decode(&line) {
            Ok(m) => m,
            Err(e) => {
                send(&mut output, &WireMessage::Error { code: "protocol".into(), message: e.to_string(), packet_id: None })?;
                continue;
            }
        };
        match msg {
            WireMessage::Config { params } => {
                if let Err(m) = handler.configure(&params) {
                    send(&mut output, &WireMessage::Error { code: "config".into(), message: m, packet_id: None })?;
                }
            }
            WireMessage::Packet { port, packet_id, fields } => match handler.handle(&port, &fields) {
                Outcome::Emit(ems) if ems.is_empty() => send(&mut output, &WireMessage::Done { packet_id })?,
                Outcome::Emit(ems) => {
                    let n = ems.len();
                    for (i, (port, fields)) in ems.into_iter().enumerate() {
                        send(&mut output, &WireMessage::Emit { port, packet_id, fields, last: i + 1 == n })?;
                    }
                }
                Outcome::Fail { code, message } => {
                    send(&mut output, &WireMessage::Error { code, message, packet_id: Some(packet_id) })?
                }
                Outcome::Raw(text) => {
                    writeln!(output, "{text}")?;
                    output.flush()?;
                }
            },
            WireMessage::Ping { seq } => {
                if handler.answers_pings() {
                    send(&mut output, &WireMessage::Pong { seq })?;
                }
            }
            WireMessage::Bye => return Ok(()),
            WireMessage::Error { .. } => {}
            other => {
                let message = format!("unexpected {} message", other.type_name());
                send(&mut output, &WireMessage::Error { code: "protocol".into(), message, packet_id: None })?;
            }
        }
    }
    Ok(())
}
