//! The shipped engine-temperature scenario.

use crate::flow::{parse_flow, FlowGraph};

pub const ENGINE_MEASURE_JSON: &str = include_str!("../../../scenarios/engine-temperature/engine_measure.flow.json");
pub const HANDLE_TEMPERATURE_JSON: &str =
    include_str!("../../../scenarios/engine-temperature/handle_temperature.flow.json");

pub const SIGNAL_NAME: &str = "handle-temperature";

pub fn engine_measure() -> FlowGraph {
    parse_flow(ENGINE_MEASURE_JSON).expect("shipped engine_measure flow parses")
}

pub fn handle_temperature() -> FlowGraph {
    parse_flow(HANDLE_TEMPERATURE_JSON).expect("shipped handle_temperature flow parses")
}

/// Both flows, in deployment order.
pub fn canonical_flows() -> Vec<FlowGraph> {
    vec![engine_measure(), handle_temperature()]
}
