//! flowforge: a flow-based integration engine.
//!
//! Integration-level models ([`flow::FlowGraph`]) contain only data flow:
//! bricks, connections, and named signals. Branching lives inside bricks,
//! either as builtin logic, as checkable rule programs ([`rules`]), or in
//! external processes speaking a line-delimited JSON protocol ([`external`]).
//! The [`engine`] runs deployed flows with bounded queues, a signal bus, and a
//! trace of every packet hop.

pub mod diag;
pub mod engine;
pub mod external;
pub mod flow;
pub mod packet;
pub mod rules;
pub mod scalar;
pub mod scenario;
pub mod stdlib;

pub use diag::{Diagnostic, Severity};
pub use packet::{fields, Hop, Packet, PacketId};
pub use scalar::{Fields, Scalar, ScalarKind};
