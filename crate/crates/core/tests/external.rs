mod common;

use std::time::{Duration, Instant};

use common::*;
use flowforge_core::engine::{EngineError, Run, RunOptions, RunState, TraceEvent, TraceKind};
use flowforge_core::external::{DeliverError, ExternalHandle, ExternalOptions, HandleState};
use flowforge_core::flow::{BrickKind, BrickSpec, Connection, FlowGraph, LogicBinding, Transport};
use flowforge_core::stdlib::Registry;
use flowforge_core::{fields, Fields, Scalar};

const SAMPLE: &str = env!("CARGO_BIN_EXE_flowforge-sample-brick");
const OUT: [&str; 3] = ["TooHighPort", "TooLowPort", "InRangePort"];

fn fast() -> ExternalOptions {
    ExternalOptions {
        handshake_timeout: Duration::from_secs(5),
        packet_timeout: Duration::from_millis(500),
        ping_interval: Duration::from_secs(60),
        backoff_base: Duration::from_millis(5),
        restart_limit: 3,
    }
}

fn check_spec(transport: Transport, endpoint: &str) -> BrickSpec {
    BrickSpec::new("check", BrickKind::Selector, LogicBinding::External { transport, endpoint: endpoint.into() })
        .with_in_ports(["in"])
        .with_out_ports(OUT)
        .with_param("MaxTemp", 75.0)
        .with_param("MinTemp", 65.0)
}

/// inlet `src` -> external selector `check` -> log writer with one in-port per route.
fn external_flow(transport: Transport, endpoint: &str) -> FlowGraph {
    let sink = BrickSpec::new("dst", BrickKind::Outlet, builtin("log_writer")).with_in_ports(OUT);
    let mut conns = vec![Connection::new(("src", "out"), ("check", "in"))];
    conns.extend(OUT.iter().map(|p| Connection::new(("check", p), ("dst", p))));
    flow("ext", vec![inlet("src"), check_spec(transport, endpoint), sink], conns)
}

fn start(g: FlowGraph, opts: ExternalOptions) -> Run {
    let opts = RunOptions { external: opts, ..RunOptions::deterministic(1) };
    let r = Run::instantiate(&[g], &Registry::standard(), opts).unwrap();
    r.start().unwrap();
    r
}

fn temp(t: f64) -> Fields {
    fields([("MeasuredTemp", t)])
}

fn with_flag(t: f64, flag: &str) -> Fields {
    let mut f = temp(t);
    f.insert(flag.into(), Scalar::Bool(true));
    f
}

fn errors<'a>(t: &'a [TraceEvent], code: &str) -> Vec<&'a TraceEvent> {
    t.iter().filter(|e| e.kind == TraceKind::BrickError && e.brick == "check" && e.detail_str("code") == Some(code)).collect()
}

fn restarts(t: &[TraceEvent]) -> usize {
    t.iter().filter(|e| e.kind == TraceKind::BrickStarted && e.brick == "check" && e.detail_i64("restart").is_some()).count()
}

fn routed(t: &[TraceEvent], parent: u64) -> Option<String> {
    t.iter()
        .find(|e| e.kind == TraceKind::PacketEmitted && e.brick == "check" && e.detail_i64("parent") == Some(parent as i64))
        .and_then(|e| e.port.clone())
}

fn dropped(t: &[TraceEvent], id: u64) -> bool {
    t.iter().any(|e| e.kind == TraceKind::PacketDropped && e.brick == "check" && e.packet_id == Some(id))
}

#[test]
fn handshake_reports_ready_descriptor() {
    let spec = check_spec(Transport::Stdio, SAMPLE);
    let mut h = ExternalHandle::spawn(&spec, Transport::Stdio, SAMPLE, &fast()).unwrap();
    assert_eq!(h.state(), HandleState::Ready);
    assert_eq!(h.descriptor().out_ports, OUT);
    assert_eq!(h.descriptor().kind, BrickKind::Selector);
    let d = h.deliver("in", 1, &temp(80.0), Duration::from_secs(5)).unwrap();
    assert_eq!(d.emissions, vec![("TooHighPort".to_string(), temp(80.0))]);
    let d = h.deliver("in", 2, &temp(65.0), Duration::from_secs(5)).unwrap();
    assert_eq!(d.emissions[0].0, "TooLowPort");
    h.close();
}

#[test]
fn config_updates_thresholds() {
    let spec = check_spec(Transport::Stdio, SAMPLE);
    let mut h = ExternalHandle::spawn(&spec, Transport::Stdio, SAMPLE, &fast()).unwrap();
    assert_eq!(h.deliver("in", 1, &temp(74.0), Duration::from_secs(5)).unwrap().emissions[0].0, "InRangePort");
    h.configure(&fields([("MaxTemp", 73.0), ("MinTemp", 65.0)])).unwrap();
    assert_eq!(h.deliver("in", 2, &temp(74.0), Duration::from_secs(5)).unwrap().emissions[0].0, "TooHighPort");
    h.close();
}

#[test]
fn descriptor_mismatch_is_rejected() {
    let spec = check_spec(Transport::Stdio, SAMPLE);
    let endpoint = format!("{SAMPLE} --out-ports TooHighPort");
    let err = ExternalHandle::spawn(&spec, Transport::Stdio, &endpoint, &fast()).err().unwrap();
    assert!(matches!(err, flowforge_core::external::ExternalError::HandshakeMismatch(_)), "{err:?}");

    let g = external_flow(Transport::Stdio, &format!("{SAMPLE} --kind filter --out-ports TooHighPort"));
    let opts = RunOptions { external: fast(), ..RunOptions::default() };
    let err = Run::instantiate(&[g], &Registry::standard(), opts).err().unwrap();
    assert!(matches!(err, EngineError::ExternalHandshakeFailed { ref brick, .. } if brick == "check"), "{err:?}");
}

#[test]
fn spawn_failure_is_reported() {
    let spec = check_spec(Transport::Stdio, "/nonexistent/brick");
    let err = ExternalHandle::spawn(&spec, Transport::Stdio, "/nonexistent/brick", &fast()).err().unwrap();
    assert!(matches!(err, flowforge_core::external::ExternalError::SpawnFailed(_)));
}

#[test]
fn handshake_timeout() {
    let spec = check_spec(Transport::Stdio, "sleep 5");
    let opts = ExternalOptions { handshake_timeout: Duration::from_millis(200), ..fast() };
    let t0 = Instant::now();
    let err = ExternalHandle::spawn(&spec, Transport::Stdio, "sleep 5", &opts).err().unwrap();
    assert!(matches!(err, flowforge_core::external::ExternalError::HandshakeTimeout), "{err:?}");
    assert!(t0.elapsed() < Duration::from_secs(3));
}

#[test]
fn routes_through_engine() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let ids: Vec<u64> = [80.0, 60.0, 70.0].iter().map(|t| r.inject("src", temp(*t)).unwrap()).collect();
    assert_eq!(r.drain().unwrap(), RunState::Stopped);
    let t = r.trace();
    let ports: Vec<_> = ids.iter().map(|id| routed(&t, *id).unwrap()).collect();
    assert_eq!(ports, OUT);
    assert_eq!(count(&t, TraceKind::PacketConsumed, "dst"), 3);
}

#[test]
fn brick_error_drops_packet_and_keeps_running() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let bad = r.inject("src", with_flag(80.0, "__fail")).unwrap();
    let good = r.inject("src", temp(80.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(errors(&t, "Requested").len(), 1);
    assert!(dropped(&t, bad));
    assert_eq!(routed(&t, good).as_deref(), Some("TooHighPort"));
    assert_eq!(restarts(&t), 0);
}

#[test]
fn single_crash_restarts_once_and_resumes() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let crash = r.inject("src", with_flag(80.0, "__crash")).unwrap();
    let after = r.inject("src", temp(60.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(errors(&t, "Crashed").len(), 1);
    assert!(dropped(&t, crash));
    assert_eq!(restarts(&t), 1);
    assert_eq!(routed(&t, after).as_deref(), Some("TooLowPort"));
    assert!(errors(&t, "BrickFailed").is_empty());
}

#[test]
fn four_consecutive_crashes_mark_failed() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let crashes: Vec<u64> = (0..4).map(|_| r.inject("src", with_flag(80.0, "__crash")).unwrap()).collect();
    let late = r.inject("src", temp(70.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(restarts(&t), 3);
    assert!(crashes.iter().all(|id| dropped(&t, *id)));
    // The limit is hit on the fourth crash; later packets are refused.
    assert!(!errors(&t, "BrickFailed").is_empty());
    assert!(dropped(&t, late));
    assert_eq!(routed(&t, late), None);
}

#[test]
fn success_resets_consecutive_failures() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    for _ in 0..3 {
        r.inject("src", with_flag(80.0, "__crash")).unwrap();
        r.inject("src", temp(70.0)).unwrap();
    }
    let last = r.inject("src", with_flag(80.0, "__crash")).unwrap();
    let tail = r.inject("src", temp(70.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(restarts(&t), 4);
    assert!(dropped(&t, last));
    assert_eq!(routed(&t, tail).as_deref(), Some("InRangePort"));
    assert!(errors(&t, "BrickFailed").is_empty());
}

#[test]
fn hang_times_out_and_restarts() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let hung = r.inject("src", with_flag(80.0, "__hang")).unwrap();
    let after = r.inject("src", temp(80.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(errors(&t, "Timeout").len(), 1);
    assert!(dropped(&t, hung));
    assert_eq!(restarts(&t), 1);
    assert_eq!(routed(&t, after).as_deref(), Some("TooHighPort"));
}

#[test]
fn malformed_line_fails_brick_without_restart() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let bad = r.inject("src", with_flag(80.0, "__garble")).unwrap();
    let after = r.inject("src", temp(80.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(errors(&t, "ProtocolError").len(), 1);
    assert!(dropped(&t, bad));
    assert_eq!(restarts(&t), 0);
    assert!(dropped(&t, after));
}

#[test]
fn zero_emissions_from_selector_is_a_violation() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let id = r.inject("src", with_flag(80.0, "__silent")).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(errors(&t, "selector-violation").len(), 1);
    assert!(dropped(&t, id));
}

#[test]
fn idle_crash_restarts_without_drops() {
    // First launch exits right after the handshake; relaunches behave.
    let dir = tempfile::tempdir().unwrap();
    let marker = dir.path().join("crashed");
    let script = dir.path().join("brick.sh");
    std::fs::write(
        &script,
        format!(
            "if [ -e {m} ]; then exec {s}; fi\ntouch {m}\n{s} <<EOF | head -n 1\nEOF\nsleep 0.2\n",
            m = marker.display(),
            s = SAMPLE
        ),
    )
    .unwrap();
    let r = start(external_flow(Transport::Stdio, &format!("sh {}", script.display())), fast());
    let deadline = Instant::now() + Duration::from_secs(5);
    while restarts(&r.trace()) == 0 && Instant::now() < deadline {
        r.run_ticks(1).unwrap();
        std::thread::sleep(Duration::from_millis(10));
    }
    let id = r.inject("src", temp(80.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(restarts(&t), 1);
    assert!(!t.iter().any(|e| e.kind == TraceKind::PacketDropped));
    assert_eq!(routed(&t, id).as_deref(), Some("TooHighPort"));
}

#[test]
fn missed_pongs_count_as_crash() {
    let opts = ExternalOptions { ping_interval: Duration::from_millis(20), ..fast() };
    let r = start(external_flow(Transport::Stdio, &format!("{SAMPLE} --no-pong")), opts);
    let deadline = Instant::now() + Duration::from_secs(5);
    while restarts(&r.trace()) == 0 && Instant::now() < deadline {
        r.run_ticks(1).unwrap();
        std::thread::sleep(Duration::from_millis(5));
    }
    r.stop().unwrap();
    let t = r.trace();
    assert!(restarts(&t) >= 1);
    let started = t.iter().find(|e| e.kind == TraceKind::BrickStarted && e.detail_i64("restart") == Some(1)).unwrap();
    assert!(started.detail_str("cause").unwrap().contains("pong"));
}

#[test]
fn answering_pongs_keeps_brick_alive() {
    let opts = ExternalOptions { ping_interval: Duration::from_millis(10), ..fast() };
    let r = start(external_flow(Transport::Stdio, SAMPLE), opts);
    for _ in 0..30 {
        r.run_ticks(1).unwrap();
        std::thread::sleep(Duration::from_millis(5));
    }
    r.stop().unwrap();
    assert_eq!(restarts(&r.trace()), 0);
}

#[test]
fn live_params_reach_external_brick() {
    let r = start(external_flow(Transport::Stdio, SAMPLE), fast());
    let before = r.inject("src", temp(74.0)).unwrap();
    r.run_ticks(2).unwrap();
    r.set_brick_params("check", &fields([("MaxTemp", 73.0)])).unwrap();
    let after = r.inject("src", temp(74.0)).unwrap();
    r.drain().unwrap();
    let t = r.trace();
    assert_eq!(routed(&t, before).as_deref(), Some("InRangePort"));
    assert_eq!(routed(&t, after).as_deref(), Some("TooHighPort"));
}

#[test]
fn tcp_transport() {
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let mut child = std::process::Command::new(SAMPLE).args(["--listen", &addr]).spawn().unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    while std::net::TcpStream::connect(&addr).is_err() {
        assert!(Instant::now() < deadline, "sample brick did not listen on {addr}");
        std::thread::sleep(Duration::from_millis(20));
    }
    let r = start(external_flow(Transport::Tcp, &addr), fast());
    let id = r.inject("src", temp(60.0)).unwrap();
    r.drain().unwrap();
    assert_eq!(routed(&r.trace(), id).as_deref(), Some("TooLowPort"));
    let _ = child.kill();
    let _ = child.wait();
}

#[test]
fn deliver_after_failure_reports_crash() {
    let spec = check_spec(Transport::Stdio, SAMPLE);
    let mut h = ExternalHandle::spawn(&spec, Transport::Stdio, SAMPLE, &fast()).unwrap();
    let err = h.deliver("in", 1, &with_flag(1.0, "__crash"), Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, DeliverError::Crashed(_)), "{err:?}");
}

#[test]
fn sample_brick_matches_interpreter_on_grid() {
    use flowforge_core::rules::{check_temperature_program, evaluate};
    use flowforge_core::Packet;
    let program = check_temperature_program();
    let params = fields([("MinTemp", 65.0), ("MaxTemp", 75.0)]);
    let spec = check_spec(Transport::Stdio, SAMPLE);
    let mut h = ExternalHandle::spawn(&spec, Transport::Stdio, SAMPLE, &fast()).unwrap();
    for i in 0..=40u64 {
        let input = temp(60.0 + 0.5 * i as f64);
        let want = evaluate(&program, &Packet::new(input.clone()), &params).unwrap().emissions;
        let want: Vec<(String, Fields)> = want.into_iter().map(|(p, pk)| (p, pk.fields)).collect();
        let got = h.deliver("in", i + 1, &input, Duration::from_secs(5)).unwrap().emissions;
        assert_eq!(got, want, "{input:?}");
    }
    h.close();
}
