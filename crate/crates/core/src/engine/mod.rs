//! Executes deployed flows.
//!
//! Every connection is a bounded FIFO queue. A brick is activated when one of
//! its in-queues holds a packet and it is not blocked on a full downstream
//! queue. A single scheduler steps bricks in topological order per round, so
//! a logical-clock run with a fixed seed is reproducible event for event.
//! Signal consumers raise named signals on a bus that activates every
//! producer of that name, in any deployed flow.

mod logic;
mod run;
mod trace;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::Diagnostic;
use crate::external::ExternalOptions;
use crate::packet::Packet;

pub use logic::{BrickContext, BrickError, BrickLogic, Emission, RulesLogic};
pub use run::{BrickCounters, ConnCounters, Run, RunSummary};
pub use trace::{normalize_trace, TraceEvent, TraceKind};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DEFAULT_LINEAGE_LIMIT: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// System time in milliseconds; a driver thread runs rounds continuously.
    Wall,
    /// One tick per scheduler round; rounds run only when asked.
    Logical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunState {
    Created,
    Running,
    Draining,
    Stopped,
    Failed,
}

impl std::fmt::Display for RunState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Generated when absent.
    pub run_id: Option<String>,
    pub clock: ClockMode,
    pub seed: u64,
    pub queue_capacity: usize,
    pub lineage_limit: u32,
    /// Parent of the run directory; no files are written when absent.
    pub out_dir: Option<PathBuf>,
    /// Pause between rounds of the wall-clock driver.
    pub step_interval: Duration,
    pub external: ExternalOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            run_id: None,
            clock: ClockMode::Logical,
            seed: 0,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            lineage_limit: DEFAULT_LINEAGE_LIMIT,
            out_dir: None,
            step_interval: Duration::from_millis(1),
            external: ExternalOptions::default(),
        }
    }
}

impl RunOptions {
    pub fn deterministic(seed: u64) -> Self {
        RunOptions { seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalEvent {
    pub name: String,
    pub payload: Option<Packet>,
    pub emitted_by: String,
    pub seq: u64,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("no flows to deploy")]
    EmptyDeployment,
    #[error("flow {flow_id:?} does not validate ({} errors)", diagnostics.len())]
    InvalidFlow { flow_id: String, diagnostics: Vec<Diagnostic> },
    #[error("brick id {0:?} is used by more than one deployed brick")]
    DuplicateBrickId(String),
    #[error("unknown builtin brick {0:?}")]
    UnknownBuiltin(String),
    #[error("brick {brick:?}: {reason}")]
    InvalidBinding { brick: String, reason: String },
    #[error("rules of brick {brick:?} rejected ({} diagnostics)", diagnostics.len())]
    RulesRejected { brick: String, diagnostics: Vec<Diagnostic> },
    #[error("external brick {brick:?} failed to start: {reason}")]
    ExternalHandshakeFailed { brick: String, reason: String },
    #[error("cannot {action} a run in state {from}")]
    IllegalTransition { from: RunState, action: &'static str },
    #[error("brick {0:?} is not an Inlet")]
    NotAnInlet(String),
    #[error("run is not running")]
    RunNotRunning,
    #[error("unknown brick {0:?}")]
    UnknownBrick(String),
    #[error("brick {brick:?} declares no param {param:?}")]
    UnknownParam { brick: String, param: String },
    #[error("invariant violated: {0}")]
    InvariantViolated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// Stable machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::EmptyDeployment => "EmptyDeployment",
            EngineError::InvalidFlow { .. } => "InvalidFlow",
            EngineError::DuplicateBrickId(_) => "DuplicateBrickId",
            EngineError::UnknownBuiltin(_) => "UnknownBuiltin",
            EngineError::InvalidBinding { .. } => "InvalidBinding",
            EngineError::RulesRejected { .. } => "RulesRejected",
            EngineError::ExternalHandshakeFailed { .. } => "ExternalHandshakeFailed",
            EngineError::IllegalTransition { .. } => "IllegalTransition",
            EngineError::NotAnInlet(_) => "NotAnInlet",
            EngineError::RunNotRunning => "RunNotRunning",
            EngineError::UnknownBrick(_) => "UnknownBrick",
            EngineError::UnknownParam { .. } => "UnknownParam",
            EngineError::InvariantViolated(_) => "InvariantViolated",
            EngineError::Io(_) => "Io",
        }
    }
}
