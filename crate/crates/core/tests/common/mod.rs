#![allow(dead_code)]

use std::collections::BTreeMap;

use flowforge_core::engine::{TraceEvent, TraceKind};
use flowforge_core::flow::{BrickKind, BrickSpec, Connection, FlowGraph, LogicBinding};

pub fn builtin(name: &str) -> LogicBinding {
    LogicBinding::Builtin { name: name.into() }
}

/// An Inlet whose timer never fires within a test; packets come from `inject`.
pub fn inlet(id: &str) -> BrickSpec {
    BrickSpec::new(id, BrickKind::Inlet, builtin("timer")).with_out_ports(["out"]).with_param("interval", 1_000_000i64)
}

pub fn filter(id: &str) -> BrickSpec {
    BrickSpec::new(id, BrickKind::Filter, builtin("passthrough")).with_in_ports(["in"]).with_out_ports(["out"])
}

pub fn sink(id: &str) -> BrickSpec {
    BrickSpec::new(id, BrickKind::Outlet, builtin("log_writer")).with_in_ports(["in"])
}

pub fn conn(from: &str, to: &str) -> Connection {
    Connection::new((from, "out"), (to, "in"))
}

pub fn flow(id: &str, bricks: Vec<BrickSpec>, connections: Vec<Connection>) -> FlowGraph {
    let mut g = FlowGraph::new(id, id);
    g.bricks = bricks;
    g.connections = connections;
    g
}

/// inlet `src` -> filter `mid` -> outlet `dst`.
pub fn chain() -> FlowGraph {
    flow("chain", vec![inlet("src"), filter("mid"), sink("dst")], vec![conn("src", "mid"), conn("mid", "dst")])
}

pub fn count(trace: &[TraceEvent], kind: TraceKind, brick: &str) -> usize {
    trace.iter().filter(|e| e.kind == kind && e.brick == brick).count()
}

/// Per-connection (emitted, consumed, dropped) recomputed from trace events.
pub fn connection_counts(trace: &[TraceEvent]) -> BTreeMap<String, (u64, u64, u64)> {
    let mut m: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for e in trace {
        let Some(c) = e.detail_str("connection") else { continue };
        let slot = m.entry(c.to_string()).or_default();
        match e.kind {
            TraceKind::PacketEmitted => slot.0 += 1,
            TraceKind::PacketConsumed => slot.1 += 1,
            TraceKind::PacketDropped => slot.2 += 1,
            _ => {}
        }
    }
    m
}
