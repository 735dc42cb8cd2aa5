use std::fmt;

use super::trace::TraceKind;
use crate::flow::BrickSpec;
use crate::packet::Packet;
use crate::rules::{evaluate, BlockProgram};
use crate::scalar::Fields;

/// A packet a brick wants sent on one of its out-ports.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub port: String,
    pub packet: Packet,
}

impl Emission {
    pub fn new(port: impl Into<String>, packet: Packet) -> Self {
        Emission { port: port.into(), packet }
    }
}

/// Failure while a brick processes a packet. The engine traces it as
/// `BrickError` and drops the input packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrickError {
    pub code: String,
    pub message: String,
}

impl BrickError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        BrickError { code: code.into(), message: message.into() }
    }
}

impl fmt::Display for BrickError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for BrickError {}

/// What a brick sees of the run while it handles one activation.
pub struct BrickContext<'a> {
    pub spec: &'a BrickSpec,
    /// Effective params, including live patches.
    pub params: &'a Fields,
    /// Current clock reading: logical tick or wall milliseconds.
    pub now: i64,
    pub(crate) signals: Vec<(String, Fields)>,
    pub(crate) notes: Vec<(TraceKind, Fields)>,
}

impl<'a> BrickContext<'a> {
    pub(crate) fn new(spec: &'a BrickSpec, params: &'a Fields, now: i64) -> Self {
        BrickContext { spec, params, now, signals: Vec::new(), notes: Vec::new() }
    }

    /// Raise a signal once the current activation completes.
    pub fn fire_signal(&mut self, name: impl Into<String>, fields: Fields) {
        self.signals.push((name.into(), fields));
    }

    /// A non-fatal problem, traced as `BrickError` with severity "warning".
    pub fn warn(&mut self, code: &str, message: impl Into<String>) {
        let mut d = Fields::new();
        d.insert("severity".into(), "warning".into());
        d.insert("code".into(), code.into());
        d.insert("message".into(), message.into().into());
        self.notes.push((TraceKind::BrickError, d));
    }

    /// Lifecycle notes from supervised bricks (restarts, failure).
    pub fn note(&mut self, kind: TraceKind, detail: Fields) {
        self.notes.push((kind, detail));
    }
}

/// Behavior behind a brick instance. The engine calls these serially for one
/// instance; an implementation owns its state exclusively.
pub trait BrickLogic: Send {
    /// Handle one packet that arrived on `port`.
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, port: &str, packet: &Packet)
        -> Result<Vec<Emission>, BrickError>;

    /// Called once per scheduler round while the run accepts input. Sources
    /// (timers, devices) produce packets here.
    fn poll(&mut self, _ctx: &mut BrickContext<'_>) -> Result<Vec<Emission>, BrickError> {
        Ok(Vec::new())
    }

    /// A signal this brick produces was raised. `payload` is already derived
    /// from the consumer's input packet, when there is one.
    fn on_signal(&mut self, ctx: &mut BrickContext<'_>, payload: &Packet) -> Result<Vec<Emission>, BrickError> {
        Ok(ctx.spec.out_port_names().map(|p| Emission::new(p, payload.clone())).collect())
    }

    /// Validate a params patch already merged into `params`. Errors become
    /// `InvariantViolated` and the patch is not applied.
    fn check_params(&self, _params: &Fields) -> Result<(), String> {
        Ok(())
    }

    /// Periodic liveness work for bricks backed by another process.
    fn health(&mut self, _ctx: &mut BrickContext<'_>) {}

    /// True while the brick holds work the engine cannot see (drain waits for it).
    fn busy(&self) -> bool {
        false
    }

    /// Persist buffered output. Called on drain and stop.
    fn flush(&mut self) -> Result<(), BrickError> {
        Ok(())
    }

    fn shutdown(&mut self) {}
}

/// Logic bound to a rule program.
pub struct RulesLogic {
    program: BlockProgram,
}

impl RulesLogic {
    /// `program` must already have its params bound.
    pub fn new(program: BlockProgram) -> Self {
        RulesLogic { program }
    }
}

impl BrickLogic for RulesLogic {
    fn on_packet(&mut self, ctx: &mut BrickContext<'_>, _port: &str, packet: &Packet)
        -> Result<Vec<Emission>, BrickError> {
        let result = evaluate(&self.program, packet, ctx.params)
            .map_err(|e| BrickError::new(e.kind.code(), e.to_string()))?;
        Ok(result.emissions.into_iter().map(|(port, p)| Emission::new(port, p)).collect())
    }
}
