mod common;

use common::*;
use flowforge_core::engine::{Run, RunOptions, RunState, TraceKind};
use flowforge_core::flow::{BrickKind, BrickSpec, Connection};
use flowforge_core::scenario::canonical_flows;
use flowforge_core::stdlib::{read_log, read_tsdb, AlertError, AlertStore, Registry};
use flowforge_core::{fields, Fields, Scalar};

fn run_in(dir: &std::path::Path, graphs: &[flowforge_core::flow::FlowGraph], id: &str) -> Run {
    let opts = RunOptions { out_dir: Some(dir.into()), run_id: Some(id.into()), ..RunOptions::deterministic(7) };
    let r = Run::instantiate(graphs, &Registry::standard(), opts).unwrap();
    r.start().unwrap();
    r
}

/// inlet -> temperature_filter -> tsdb_writer, with the given filter params.
fn filter_flow(scale: f64, offset: f64) -> flowforge_core::flow::FlowGraph {
    let f = BrickSpec::new("tf", BrickKind::Filter, builtin("temperature_filter"))
        .with_in_ports(["in"])
        .with_out_ports(["out"])
        .with_param("scale", scale)
        .with_param("offset", offset);
    let db = BrickSpec::new("db", BrickKind::Outlet, builtin("tsdb_writer")).with_in_ports(["in"]).with_param("series", "s");
    flow("f", vec![inlet("src"), f, db], vec![conn("src", "tf"), Connection::new(("tf", "out"), ("db", "in"))])
}

#[test]
fn temperature_filter_scales_and_reports_missing_fields() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_in(dir.path(), &[filter_flow(0.1, 0.0)], "r");
    r.inject("src", fields([("value_raw", 700i64)])).unwrap();
    let bad = r.inject("src", fields([("other", 1i64)])).unwrap();
    let typed = r.inject("src", fields([("value_raw", "hot")])).unwrap();
    r.inject("src", fields([("value_raw", 655.0)])).unwrap();
    assert_eq!(r.drain().unwrap(), RunState::Stopped);
    let t = r.trace();
    let codes: Vec<_> = t.iter().filter(|e| e.kind == TraceKind::BrickError && e.brick == "tf").map(|e| e.detail_str("code").unwrap().to_string()).collect();
    assert_eq!(codes, ["MissingField", "TypeMismatch"]);
    for id in [bad, typed] {
        assert!(t.iter().any(|e| e.kind == TraceKind::PacketDropped && e.packet_id == Some(id)));
    }
    let values: Vec<f64> = read_tsdb(&dir.path().join("r/tsdb.jsonl"), None, None).unwrap().iter().map(|r| r.value).collect();
    assert_eq!(values, [70.0, 65.5]);
}

#[test]
fn filter_params_apply_live() {
    let r = run_in(tempfile::tempdir().unwrap().path(), &[filter_flow(1.0, 0.0)], "r");
    r.set_brick_params("tf", &fields([("offset", -273.15)])).unwrap();
    let id = r.inject("src", fields([("value_raw", 300.0)])).unwrap();
    r.run_ticks(1).unwrap();
    let t = r.trace();
    let out = t.iter().find(|e| e.kind == TraceKind::PacketEmitted && e.brick == "tf" && e.detail_i64("parent") == Some(id as i64));
    assert!(out.is_some());
}

#[test]
fn tsdb_unwritable_is_a_brick_error_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_in(dir.path(), &[filter_flow(1.0, 0.0)], "r");
    let path = dir.path().join("r/tsdb.jsonl");
    std::fs::remove_file(&path).unwrap();
    std::fs::create_dir(&path).unwrap();
    for v in [1.0, 2.0, 3.0] {
        r.inject("src", fields([("value_raw", v)])).unwrap();
    }
    assert_eq!(r.drain().unwrap(), RunState::Stopped);
    let t = r.trace();
    let io = t.iter().filter(|e| e.kind == TraceKind::BrickError && e.brick == "db" && e.detail_str("code") == Some("IoError")).count();
    assert_eq!(io, 3);
    assert_eq!(count(&t, TraceKind::PacketConsumed, "db"), 3);
}

#[test]
fn log_writer_renders_template_and_warns_on_unknown_field() {
    let dir = tempfile::tempdir().unwrap();
    let log = BrickSpec::new("log", BrickKind::Outlet, builtin("log_writer"))
        .with_in_ports(["in"])
        .with_param("template", "{who} saw {what} on {$port}")
        .with_param("level", "warn");
    let g = flow("l", vec![inlet("src"), log], vec![Connection::new(("src", "out"), ("log", "in"))]);
    let r = run_in(dir.path(), &[g], "r");
    r.inject("src", fields([("who", "a"), ("what", "b")])).unwrap();
    r.inject("src", fields([("who", "c")])).unwrap();
    r.drain().unwrap();
    let lines = read_log(&dir.path().join("r/log.jsonl"), None, None).unwrap();
    let msgs: Vec<_> = lines.iter().map(|l| l.message.as_str()).collect();
    assert_eq!(msgs, ["a saw b on in", "c saw ?what? on in"]);
    assert!(lines.iter().all(|l| l.level == "warn"));
    let warns: Vec<_> = r.trace().into_iter().filter(|e| e.kind == TraceKind::BrickError && e.brick == "log").collect();
    assert_eq!(warns.len(), 1);
    assert_eq!(warns[0].detail_str("severity"), Some("warning"));
}

#[test]
fn scenario_stores_match_trace_counts() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_in(dir.path(), &canonical_flows(), "r");
    r.run_ticks(1000).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    let measurements = t.iter().filter(|e| e.kind == TraceKind::PacketEmitted && e.brick == "engine").count();
    let tsdb = read_tsdb(&dir.path().join("r/tsdb.jsonl"), None, None).unwrap();
    assert_eq!(tsdb.len(), measurements);
    assert!(measurements >= 100);
    let log = read_log(&dir.path().join("r/log.jsonl"), None, None).unwrap();
    assert_eq!(log.len(), measurements);
    assert!(log.iter().all(|l| l.message.starts_with("engine-1 temperature ")));
    let out_of_range = log.iter().filter(|l| !l.message.ends_with("in_range")).count();
    assert!(out_of_range > 0);
    let alerts = r.alerts().list(None);
    assert_eq!(alerts.len(), out_of_range);
    assert!(alerts.iter().all(|a| a.alert_id.starts_with("r-") && !a.acked));
    // Range queries are inclusive on both ends.
    let window = read_tsdb(&dir.path().join("r/tsdb.jsonl"), Some(100), Some(200)).unwrap();
    assert!(window.iter().all(|x| (100..=200).contains(&x.ts)));
    assert!(window.iter().any(|x| x.ts == 100) && window.iter().any(|x| x.ts == 200));
}

#[test]
fn alerts_ack_once_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_in(dir.path(), &canonical_flows(), "r");
    r.fire_signal("handle-temperature", Some(fields([("MeasuredTemp", Scalar::from(90.0)), ("direction", Scalar::from("too_high"))]))).unwrap();
    r.drain().unwrap();
    let alerts = r.alerts().list(Some(false));
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].message, "engine-1 temperature 90 is too_high");
    let id = alerts[0].alert_id.clone();
    let acked = r.alerts().ack(&id, Some("op".into())).unwrap();
    assert!(acked.acked);
    assert!(matches!(r.alerts().ack(&id, None), Err(AlertError::AlreadyAcked(_))));
    assert!(matches!(r.alerts().ack("r-999", None), Err(AlertError::NotFound(_))));
    let reloaded = AlertStore::load("r", &dir.path().join("r/alerts.jsonl")).unwrap();
    assert_eq!(reloaded.get(&id).unwrap().acked_by.as_deref(), Some("op"));
    assert!(reloaded.list(Some(false)).is_empty());
}

#[test]
fn adapt_temperature_maps_direction_to_order() {
    let r = run_in(tempfile::tempdir().unwrap().path(), &canonical_flows(), "r");
    for d in ["too_high", "too_low", "sideways"] {
        r.fire_signal("handle-temperature", Some(fields([("MeasuredTemp", Scalar::from(70.0)), ("direction", Scalar::from(d))]))).unwrap();
    }
    r.drain().unwrap();
    let t = r.trace();
    let orders = t.iter().filter(|e| e.kind == TraceKind::PacketConsumed && e.brick == "engine-control").count();
    assert_eq!(orders, 2);
    let bad: Vec<_> = t.iter().filter(|e| e.kind == TraceKind::BrickError && e.brick == "adapt-temperature").collect();
    assert_eq!(bad.len(), 1);
    assert_eq!(bad[0].detail_str("code"), Some("BadDirection"));
}

#[test]
fn registry_kinds_are_enforced() {
    let reg = Registry::standard();
    assert!(reg.self_check().is_empty());
    let spec = BrickSpec::new("x", BrickKind::Filter, builtin("tsdb_writer")).with_in_ports(["in"]).with_out_ports(["out"]);
    let g = flow("k", vec![inlet("src"), spec, sink("dst")], vec![conn("src", "x"), conn("x", "dst")]);
    let err = Run::instantiate(&[g], &reg, RunOptions::default()).err().unwrap();
    assert_eq!(err.code(), "InvalidBinding");
    let _ = Fields::new();
}
