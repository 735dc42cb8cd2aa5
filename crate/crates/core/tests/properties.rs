use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::time::Duration;

use flowforge_core::external::{decode, encode, BrickDescriptor, DeliverError, ExternalHandle, ExternalOptions, WireMessage};
use flowforge_core::flow::{
    has_cycle, parse_flow, serialize_flow, validate, BrickKind, BrickSpec, Connection, FlowGraph, LogicBinding, PortDecl, Transport,
};
use flowforge_core::rules::{parse_rules, pretty_print, ArithOp, BlockProgram, BoolOp, CmpOp, Expr, Payload, Stmt};
use flowforge_core::{Fields, Scalar};
use proptest::prelude::*;

fn scalar() -> impl Strategy<Value = Scalar> {
    prop_oneof![
        any::<i64>().prop_map(Scalar::Int),
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(Scalar::Float),
        any::<bool>().prop_map(Scalar::Bool),
        ".{0,12}".prop_map(Scalar::Str),
        any::<i64>().prop_map(Scalar::Timestamp),
    ]
}

fn params() -> impl Strategy<Value = Fields> {
    proptest::collection::btree_map("[A-Za-z_][A-Za-z0-9_]{0,8}", scalar(), 0..4)
}

fn ports() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::btree_set("[a-z]{1,6}", 0..4).prop_map(|s| s.into_iter().collect())
}

fn logic() -> impl Strategy<Value = LogicBinding> {
    prop_oneof![
        "[a-z_]{1,12}".prop_map(|name| LogicBinding::Builtin { name }),
        ".{0,40}".prop_map(|source| LogicBinding::Rules { source }),
        (prop_oneof![Just(Transport::Stdio), Just(Transport::Tcp)], "[ -~]{1,20}")
            .prop_map(|(transport, endpoint)| LogicBinding::External { transport, endpoint }),
    ]
}

fn brick(i: usize) -> impl Strategy<Value = BrickSpec> {
    (
        proptest::sample::select(BrickKind::ALL.to_vec()),
        ".{0,10}",
        ports(),
        ports(),
        logic(),
        params(),
        proptest::option::of("[a-z-]{1,10}"),
    )
        .prop_map(move |(kind, display_name, ins, outs, logic, params, signal_name)| BrickSpec {
            id: format!("b{i}"),
            display_name,
            kind,
            in_ports: ins.into_iter().map(PortDecl::new).collect(),
            out_ports: outs.into_iter().map(PortDecl::new).collect(),
            logic,
            params,
            signal_name,
        })
}

fn graph() -> impl Strategy<Value = FlowGraph> {
    (1usize..6)
        .prop_flat_map(|n| {
            let bricks: Vec<_> = (0..n).map(brick).collect();
            (bricks, proptest::collection::vec((any::<prop::sample::Index>(), any::<prop::sample::Index>()), 0..8))
        })
        .prop_flat_map(|(bricks, picks)| {
            let outs: Vec<(String, String)> =
                bricks.iter().flat_map(|b| b.out_ports.iter().map(move |p| (b.id.clone(), p.name.clone()))).collect();
            let ins: Vec<(String, String)> =
                bricks.iter().flat_map(|b| b.in_ports.iter().map(move |p| (b.id.clone(), p.name.clone()))).collect();
            let mut conns = Vec::new();
            if !outs.is_empty() && !ins.is_empty() {
                for (a, b) in picks {
                    let (fb, fp) = a.get(&outs);
                    let (tb, tp) = b.get(&ins);
                    conns.push(Connection::new((fb, fp), (tb, tp)));
                }
            }
            ("[a-z0-9-]{1,10}", ".{0,10}", proptest::collection::btree_map("[a-z]{1,5}", ".{0,8}", 0..3))
                .prop_map(move |(id, name, metadata)| FlowGraph {
                    id,
                    name,
                    bricks: bricks.clone(),
                    connections: conns.clone(),
                    metadata,
                })
        })
}

const NAMES: &[&str] = &["a", "b", "Temp", "x_1", "value"];

fn name() -> impl Strategy<Value = String> {
    proptest::sample::select(NAMES).prop_map(String::from)
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        name().prop_map(Expr::Field),
        (0i64..1000).prop_map(|i| Expr::Const(Scalar::Int(i))),
        (0u32..4000).prop_map(|q| Expr::Const(Scalar::Float(q as f64 / 8.0))),
        any::<bool>().prop_map(|b| Expr::Const(Scalar::Bool(b))),
        "[a-zA-Z ']{0,6}".prop_map(|s| Expr::Const(Scalar::Str(s))),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        let cmp = proptest::sample::select(vec![CmpOp::Ge, CmpOp::Le, CmpOp::Gt, CmpOp::Lt, CmpOp::Eq, CmpOp::Ne]);
        let arith = proptest::sample::select(vec![ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div]);
        prop_oneof![
            (cmp, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::compare(op, l, r)),
            (arith, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::arith(op, l, r)),
            inner.clone().prop_map(|e| Expr::Bool { op: BoolOp::Not, args: vec![e] }),
            (prop_oneof![Just(BoolOp::And), Just(BoolOp::Or)], proptest::collection::vec(inner, 2..4))
                .prop_map(|(op, args)| Expr::Bool { op, args }),
        ]
    })
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        Just(Payload::Passthrough),
        proptest::collection::btree_map(name(), expr(), 1..3).prop_map(|m| Payload::FieldMap(m.into_iter().collect())),
    ]
}

fn stmt() -> impl Strategy<Value = Stmt> {
    let leaf = prop_oneof![
        ("[A-Z][a-zA-Z]{0,8}Port", payload()).prop_map(|(port, payload)| Stmt::Emit { port, payload }),
        (name(), expr()).prop_map(|(field, value)| Stmt::SetField { field, value }),
        Just(Stmt::Drop),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        let body = proptest::collection::vec(inner, 1..3);
        (proptest::collection::vec((expr(), body.clone()), 1..3), prop_oneof![Just(Vec::new()), body])
            .prop_map(|(branches, else_body)| Stmt::If { branches, else_body })
    })
}

/// Transitive closure by Warshall; a cycle exists iff some node reaches itself.
fn cycle_oracle(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut r = vec![vec![false; n]; n];
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    (0..n).any(|i| r[i][i])
}

fn general_graph(n: usize, edges: &[(usize, usize)]) -> FlowGraph {
    let mut g = FlowGraph::new("g", "g");
    for i in 0..n {
        let logic = LogicBinding::Builtin { name: "passthrough".into() };
        g.bricks.push(BrickSpec::new(format!("n{i}"), BrickKind::General, logic).with_in_ports(["in"]).with_out_ports(["out"]));
    }
    for &(a, b) in edges {
        g.connections.push(Connection::new((&format!("n{a}"), "out"), (&format!("n{b}"), "in")));
    }
    g
}

/// A fake brick on a TCP socket: handshake, read config and one packet, answer
/// with `reply`, then record everything the engine sends until it hangs up.
fn fake_brick(reply: String) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let t = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        let mut w = stream.try_clone().unwrap();
        let mut r = BufReader::new(stream);
        let hello = WireMessage::Hello(BrickDescriptor {
            name: "fuzz".into(),
            kind: BrickKind::Filter,
            in_ports: vec!["in".into()],
            out_ports: vec!["out".into()],
        });
        writeln!(w, "{}", encode(&hello)).unwrap();
        let mut seen = Vec::new();
        let mut line = String::new();
        for _ in 0..2 {
            line.clear();
            r.read_line(&mut line).unwrap();
            seen.push(line.trim_end().to_string());
        }
        let _ = writeln!(w, "{reply}");
        loop {
            line.clear();
            match r.read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => seen.push(line.trim_end().to_string()),
            }
        }
        seen
    });
    (addr, t)
}

fn garbage() -> impl Strategy<Value = String> {
    prop_oneof![
        "[^\n]{0,40}",
        "\\{[\"a-z:,0-9 {}\\[\\]]{0,30}\\}?",
        (any::<u8>(), "[a-z]{1,8}").prop_map(|(v, t)| format!("{{\"t\":\"{t}\",\"v\":{v}}}")),
        proptest::sample::select(vec![
            r#"{"t":"emit","v":1,"port":"out","packet_id":1,"fields":{"x":1},"last":true}"#.to_string(),
            r#"{"t":"emit","v":1,"port":"nowhere","packet_id":1,"fields":{},"last":true}"#.to_string(),
            r#"{"t":"emit","v":1,"port":"out","packet_id":99,"fields":{},"last":true}"#.to_string(),
            r#"{"t":"done","v":2,"packet_id":1}"#.to_string(),
            r#"{"t":"done","packet_id":1}"#.to_string(),
            r#"{"t":"hello","v":1,"name":"x","kind":"filter","in_ports":[],"out_ports":[]}"#.to_string(),
            r#"{"t":"emit","v":1,"port":"out","packet_id":1,"fields":{"x":[1,2]}}"#.to_string(),
            "[1,2,3]".to_string(),
            "null".to_string(),
        ]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn flow_json_round_trips(g in graph()) {
        let text = serialize_flow(&g);
        let back = parse_flow(&text).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(serialize_flow(&back), text);
    }

    #[test]
    fn rules_pretty_print_is_a_fixed_point(stmts in proptest::collection::vec(stmt(), 1..4)) {
        let p = BlockProgram::new(stmts);
        let text = pretty_print(&p);
        let once = parse_rules(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        let again = pretty_print(&once);
        prop_assert_eq!(&again, &text);
        prop_assert_eq!(parse_rules(&again).unwrap(), once);
    }

    #[test]
    fn cycle_detection_matches_closure(n in 1usize..=10, raw in proptest::collection::vec((0usize..10, 0usize..10), 0..20)) {
        let edges: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
        let g = general_graph(n, &edges);
        let want = cycle_oracle(n, &edges);
        prop_assert_eq!(has_cycle(&g), want);
        prop_assert_eq!(validate(&g).iter().any(|d| d.code == "cycle"), want);
    }

    #[test]
    fn decode_never_panics(line in "\\PC{0,80}") {
        let _ = decode(&line);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn engine_survives_malformed_brick_output(reply in garbage()) {
        let (addr, brick) = fake_brick(reply.clone());
        let spec = BrickSpec::new("fuzz", BrickKind::Filter, LogicBinding::External { transport: Transport::Tcp, endpoint: addr.clone() })
            .with_in_ports(["in"])
            .with_out_ports(["out"]);
        let opts = ExternalOptions { handshake_timeout: Duration::from_secs(5), ..ExternalOptions::default() };
        let mut h = ExternalHandle::spawn(&spec, Transport::Tcp, &addr, &opts).unwrap();
        let result = h.deliver("in", 1, &Fields::new(), Duration::from_millis(200));
        drop(h);
        let seen = brick.join().unwrap();
        // Everything the engine wrote is a valid message.
        for l in &seen {
            prop_assert!(decode(l).is_ok(), "engine sent invalid line {:?}", l);
        }
        match result {
            Ok(d) => prop_assert!(d.emissions.iter().all(|(p, _)| p == "out")),
            Err(DeliverError::Protocol(_)) => {
                // Answered with an error before closing.
                let answered = seen.iter().skip(2).any(|l| matches!(decode(l), Ok(WireMessage::Error { .. })));
                prop_assert!(answered, "no error reply to {:?}: {:?}", reply, seen);
            }
            Err(DeliverError::Timeout) | Err(DeliverError::Brick { .. }) | Err(DeliverError::Crashed(_)) => {}
        }
    }
}
