//! Integration-level flow graphs.
//!
//! A flow is a set of bricks joined by data connections. The format carries
//! no predicates, gateways, or loops: any branching lives inside a brick's
//! logic. Cross-flow feedback is expressed only through named signals.

mod json;
mod topology;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::{Fields, ScalarKind};

pub use json::{parse_flow, serialize_flow, FlowParseError, FORMAT_KEYWORDS};
pub use topology::{signal_topology, BrickRef, SignalEndpoints, SignalTopology};
pub use validate::{has_cycle, validate};
pub(crate) use validate::check_thresholds;

/// Field-name to scalar-kind map declared on a port.
pub type PortSchema = std::collections::BTreeMap<String, ScalarKind>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrickKind {
    Inlet,
    Outlet,
    Filter,
    Selector,
    General,
    SignalProducer,
    SignalConsumer,
}

/// Allowed number of ports in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortCount {
    Exactly(usize),
    AtLeast(usize),
    Any,
}

impl PortCount {
    pub fn admits(self, n: usize) -> bool {
        match self {
            PortCount::Exactly(k) => n == k,
            PortCount::AtLeast(k) => n >= k,
            PortCount::Any => true,
        }
    }

    fn describe(self, noun: &str) -> String {
        match self {
            PortCount::Exactly(0) => format!("0 {noun}s"),
            PortCount::Exactly(1) => format!("exactly 1 {noun}"),
            PortCount::Exactly(k) => format!("exactly {k} {noun}s"),
            PortCount::AtLeast(k) => format!("≥{k} {noun}s"),
            PortCount::Any => format!("any number of {noun}s"),
        }
    }
}

impl BrickKind {
    pub const ALL: [BrickKind; 7] = [
        BrickKind::Inlet,
        BrickKind::Outlet,
        BrickKind::Filter,
        BrickKind::Selector,
        BrickKind::General,
        BrickKind::SignalProducer,
        BrickKind::SignalConsumer,
    ];

    /// `(in-ports, out-ports)` arity table.
    pub fn arity(self) -> (PortCount, PortCount) {
        use PortCount::*;
        match self {
            BrickKind::Inlet => (Exactly(0), AtLeast(1)),
            BrickKind::Outlet => (AtLeast(1), Exactly(0)),
            BrickKind::Filter => (Exactly(1), Exactly(1)),
            BrickKind::Selector => (Exactly(1), AtLeast(2)),
            BrickKind::General => (Any, Any),
            BrickKind::SignalProducer => (Exactly(0), AtLeast(1)),
            BrickKind::SignalConsumer => (AtLeast(1), Exactly(0)),
        }
    }

    /// Arity violations for the given port counts, as human messages.
    pub fn arity_violations(self, n_in: usize, n_out: usize) -> Vec<String> {
        let (ins, outs) = self.arity();
        let mut out = Vec::new();
        if !ins.admits(n_in) {
            out.push(format!("{self} requires {}", ins.describe("in-port")));
        }
        if !outs.admits(n_out) {
            out.push(format!("{self} requires {}", outs.describe("out-port")));
        }
        out
    }

    pub fn is_signal(self) -> bool {
        matches!(self, BrickKind::SignalProducer | BrickKind::SignalConsumer)
    }

    /// Bricks that start a data flow.
    pub fn is_source(self) -> bool {
        matches!(self, BrickKind::Inlet | BrickKind::SignalProducer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BrickKind::Inlet => "inlet",
            BrickKind::Outlet => "outlet",
            BrickKind::Filter => "filter",
            BrickKind::Selector => "selector",
            BrickKind::General => "general",
            BrickKind::SignalProducer => "signal_producer",
            BrickKind::SignalConsumer => "signal_consumer",
        }
    }

    pub fn from_name(name: &str) -> Option<BrickKind> {
        BrickKind::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

impl fmt::Display for BrickKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BrickKind::Inlet => "Inlet",
            BrickKind::Outlet => "Outlet",
            BrickKind::Filter => "Filter",
            BrickKind::Selector => "Selector",
            BrickKind::General => "General",
            BrickKind::SignalProducer => "SignalProducer",
            BrickKind::SignalConsumer => "SignalConsumer",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortDecl {
    pub name: String,
    pub schema: Option<PortSchema>,
}

impl PortDecl {
    pub fn new(name: impl Into<String>) -> Self {
        PortDecl { name: name.into(), schema: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Stdio,
    Tcp,
}

/// How a brick's behavior is provided.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogicBinding {
    Builtin { name: String },
    Rules { source: String },
    External { transport: Transport, endpoint: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrickSpec {
    pub id: String,
    pub display_name: String,
    pub kind: BrickKind,
    pub in_ports: Vec<PortDecl>,
    pub out_ports: Vec<PortDecl>,
    pub logic: LogicBinding,
    pub params: Fields,
    pub signal_name: Option<String>,
}

impl BrickSpec {
    pub fn new(id: impl Into<String>, kind: BrickKind, logic: LogicBinding) -> Self {
        let id = id.into();
        BrickSpec {
            display_name: id.clone(),
            id,
            kind,
            in_ports: Vec::new(),
            out_ports: Vec::new(),
            logic,
            params: Fields::new(),
            signal_name: None,
        }
    }

    pub fn with_in_ports<I: IntoIterator<Item = S>, S: Into<String>>(mut self, ports: I) -> Self {
        self.in_ports = ports.into_iter().map(PortDecl::new).collect();
        self
    }

    pub fn with_out_ports<I: IntoIterator<Item = S>, S: Into<String>>(mut self, ports: I) -> Self {
        self.out_ports = ports.into_iter().map(PortDecl::new).collect();
        self
    }

    pub fn with_param(mut self, name: impl Into<String>, value: impl Into<crate::Scalar>) -> Self {
        self.params.insert(name.into(), value.into());
        self
    }

    pub fn with_signal(mut self, name: impl Into<String>) -> Self {
        self.signal_name = Some(name.into());
        self
    }

    pub fn in_port(&self, name: &str) -> Option<&PortDecl> {
        self.in_ports.iter().find(|p| p.name == name)
    }

    pub fn out_port(&self, name: &str) -> Option<&PortDecl> {
        self.out_ports.iter().find(|p| p.name == name)
    }

    pub fn out_port_names(&self) -> impl Iterator<Item = &str> {
        self.out_ports.iter().map(|p| p.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Connection {
    pub from_brick: String,
    pub from_port: String,
    pub to_brick: String,
    pub to_port: String,
}

impl Connection {
    pub fn new(from: (&str, &str), to: (&str, &str)) -> Self {
        Connection {
            from_brick: from.0.to_string(),
            from_port: from.1.to_string(),
            to_brick: to.0.to_string(),
            to_port: to.1.to_string(),
        }
    }

    /// `from.port->to.port`, used in diagnostics and trace details.
    pub fn label(&self) -> String {
        format!("{}.{}->{}.{}", self.from_brick, self.from_port, self.to_brick, self.to_port)
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowGraph {
    pub id: String,
    pub name: String,
    pub bricks: Vec<BrickSpec>,
    pub connections: Vec<Connection>,
    pub metadata: std::collections::BTreeMap<String, String>,
}

impl FlowGraph {
    pub fn new(id: impl Into<String>, name: impl Into<String>) -> Self {
        FlowGraph { id: id.into(), name: name.into(), ..Default::default() }
    }

    pub fn brick(&self, id: &str) -> Option<&BrickSpec> {
        self.bricks.iter().find(|b| b.id == id)
    }

    pub fn brick_mut(&mut self, id: &str) -> Option<&mut BrickSpec> {
        self.bricks.iter_mut().find(|b| b.id == id)
    }

    /// Names used by this flow's signal bricks.
    pub fn signal_names(&self) -> BTreeSet<String> {
        self.bricks
            .iter()
            .filter(|b| b.kind.is_signal())
            .filter_map(|b| b.signal_name.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_messages() {
        assert_eq!(
            BrickKind::Selector.arity_violations(1, 1),
            vec!["Selector requires ≥2 out-ports".to_string()]
        );
        assert_eq!(
            BrickKind::Filter.arity_violations(0, 2),
            vec![
                "Filter requires exactly 1 in-port".to_string(),
                "Filter requires exactly 1 out-port".to_string()
            ]
        );
        assert!(BrickKind::General.arity_violations(0, 0).is_empty());
        assert_eq!(BrickKind::Inlet.arity_violations(1, 1), vec!["Inlet requires 0 in-ports"]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in BrickKind::ALL {
            assert_eq!(BrickKind::from_name(k.as_str()), Some(k));
        }
    }
}
