use std::collections::BTreeMap;

use serde::Serialize;

use super::{BrickKind, FlowGraph};
use crate::diag::Diagnostic;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct BrickRef {
    pub flow_id: String,
    pub brick_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SignalEndpoints {
    pub consumers: Vec<BrickRef>,
    pub producers: Vec<BrickRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SignalTopology {
    pub signals: BTreeMap<String, SignalEndpoints>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Map each signal name to the consumers that fire it and the producers it triggers.
///
/// A name with consumers but no producers is legal (triggering is optional)
/// and yields a warning.
pub fn signal_topology(graphs: &[FlowGraph]) -> SignalTopology {
    let mut signals: BTreeMap<String, SignalEndpoints> = BTreeMap::new();
    for g in graphs {
        for b in &g.bricks {
            let Some(name) = &b.signal_name else { continue };
            let r = BrickRef { flow_id: g.id.clone(), brick_id: b.id.clone() };
            match b.kind {
                BrickKind::SignalConsumer => signals.entry(name.clone()).or_default().consumers.push(r),
                BrickKind::SignalProducer => signals.entry(name.clone()).or_default().producers.push(r),
                _ => {}
            }
        }
    }
    let diagnostics = signals
        .iter()
        .filter(|(_, e)| !e.consumers.is_empty() && e.producers.is_empty())
        .map(|(name, _)| {
            Diagnostic::warning(
                "signal-without-producer",
                format!("signal:{name}"),
                format!("signal {name:?} has consumers but no producers"),
            )
        })
        .collect();
    SignalTopology { signals, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{BrickSpec, LogicBinding};

    fn consumer(id: &str, name: &str) -> BrickSpec {
        BrickSpec::new(id, BrickKind::SignalConsumer, LogicBinding::Builtin { name: "signal_consumer".into() })
            .with_in_ports(["in"])
            .with_signal(name)
    }

    #[test]
    fn no_signal_bricks_gives_empty_map() {
        let t = signal_topology(&[FlowGraph::new("f", "f")]);
        assert!(t.signals.is_empty());
        assert!(t.diagnostics.is_empty());
    }

    #[test]
    fn consumer_without_producer_warns() {
        let mut g = FlowGraph::new("f", "f");
        g.bricks.push(consumer("c", "lonely"));
        let t = signal_topology(&[g]);
        assert_eq!(t.signals["lonely"].consumers.len(), 1);
        assert!(t.signals["lonely"].producers.is_empty());
        assert_eq!(t.diagnostics.len(), 1);
        assert_eq!(t.diagnostics[0].code, "signal-without-producer");
    }
}
