//! Bricks running as separate processes, speaking newline-delimited JSON
//! over stdio (or TCP). See `docs/protocol.md` for the wire format.

mod handle;
mod server;
mod supervise;
mod wire;

use std::time::Duration;

use thiserror::Error;

pub use handle::{check_descriptor, DeliverError, Delivery, ExternalHandle, HandleState};
pub use server::{serve, BrickHandler, Outcome};
pub use supervise::ExternalLogic;
pub use wire::{decode, encode, BrickDescriptor, WireError, WireMessage, PROTOCOL_VERSION};

/// Timeouts and restart policy for external bricks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalOptions {
    pub handshake_timeout: Duration,
    pub packet_timeout: Duration,
    /// Idle time before a ping; two unanswered pings count as a crash.
    pub ping_interval: Duration,
    /// First restart delay; doubles on each consecutive failure.
    pub backoff_base: Duration,
    /// Consecutive failures tolerated before the brick is marked Failed.
    pub restart_limit: u32,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        ExternalOptions {
            handshake_timeout: Duration::from_secs(5),
            packet_timeout: Duration::from_secs(10),
            ping_interval: Duration::from_secs(5),
            backoff_base: Duration::from_secs(1),
            restart_limit: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExternalError {
    #[error("spawn failed: {0}")]
    SpawnFailed(String),
    #[error("no hello within the handshake timeout")]
    HandshakeTimeout,
    #[error("handshake mismatch: {0}")]
    HandshakeMismatch(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}
