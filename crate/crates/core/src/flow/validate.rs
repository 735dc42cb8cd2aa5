use std::collections::{HashMap, HashSet, VecDeque};

use super::{BrickSpec, Connection, FlowGraph, LogicBinding};
use crate::diag::Diagnostic;
use crate::rules;
use crate::scalar::{Fields, ScalarKind};

/// Check every flow and brick invariant. Returns an empty list iff the graph
/// is valid. Order is deterministic: brick findings in brick order, then
/// connection findings in connection order, then cycles, then reachability.
pub fn validate(graph: &FlowGraph) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut seen = HashSet::new();
    for b in &graph.bricks {
        if !seen.insert(b.id.as_str()) {
            diags.push(Diagnostic::error(
                "duplicate-brick-id",
                format!("brick:{}", b.id),
                format!("brick id {:?} is declared more than once", b.id),
            ));
        }
        check_brick(b, &mut diags);
    }

    let index: HashMap<&str, usize> =
        graph.bricks.iter().enumerate().rev().map(|(i, b)| (b.id.as_str(), i)).collect();

    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut seen_conns = HashSet::new();
    for c in &graph.connections {
        let target = format!("connection:{}", c.label());
        if !seen_conns.insert(c) {
            diags.push(Diagnostic::error("duplicate-connection", &target, "identical connection declared twice"));
            continue;
        }
        match resolve(graph, &index, c) {
            Ok((from, to)) => {
                check_schemas(&graph.bricks[from], &graph.bricks[to], c, &target, &mut diags);
                edges.push((from, to));
            }
            Err(msg) => diags.push(Diagnostic::error("dangling-connection", &target, msg)),
        }
    }

    let n = graph.bricks.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &edges {
        if !adj[a].contains(&b) {
            adj[a].push(b);
        }
    }

    for cycle in find_cycles(&adj) {
        let names: Vec<&str> = cycle.iter().map(|&i| graph.bricks[i].id.as_str()).collect();
        diags.push(Diagnostic::error(
            "cycle",
            format!("brick:{}", names[0]),
            format!("data-edge cycle: {}", names.join(" → ")),
        ));
    }

    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, b) in graph.bricks.iter().enumerate() {
        if b.kind.is_source() {
            reached[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !reached[j] {
                reached[j] = true;
                queue.push_back(j);
            }
        }
    }
    for (i, b) in graph.bricks.iter().enumerate() {
        if !reached[i] {
            diags.push(Diagnostic::error(
                "unreachable-brick",
                format!("brick:{}", b.id),
                "brick is not reachable from any Inlet or SignalProducer",
            ));
        }
    }

    diags
}

fn check_brick(b: &BrickSpec, diags: &mut Vec<Diagnostic>) {
    let target = format!("brick:{}", b.id);
    for msg in b.kind.arity_violations(b.in_ports.len(), b.out_ports.len()) {
        diags.push(Diagnostic::error("arity", &target, msg));
    }
    for (dir, ports) in [("in", &b.in_ports), ("out", &b.out_ports)] {
        let mut names = HashSet::new();
        for p in ports.iter() {
            if !names.insert(p.name.as_str()) {
                diags.push(Diagnostic::error(
                    "duplicate-port",
                    &target,
                    format!("{dir}-port {:?} declared more than once", p.name),
                ));
            }
        }
    }
    match (b.kind.is_signal(), &b.signal_name) {
        (true, None) => diags.push(Diagnostic::error("signal-name", &target, format!("{} requires a signal_name", b.kind))),
        (true, Some(s)) if s.is_empty() => {
            diags.push(Diagnostic::error("signal-name", &target, "signal_name must be non-empty"))
        }
        (false, Some(_)) => diags.push(Diagnostic::error(
            "signal-name",
            &target,
            format!("{} bricks do not carry a signal_name", b.kind),
        )),
        _ => {}
    }
    if let Err(msg) = check_thresholds(&b.params) {
        diags.push(Diagnostic::error("threshold-params", &target, msg));
    }
    if let LogicBinding::Rules { source } = &b.logic {
        match rules::parse_rules(source) {
            Ok(program) => {
                for d in rules::check(&program, b) {
                    diags.push(Diagnostic { target: format!("{target}/{}", d.target), ..d });
                }
            }
            Err(e) => diags.push(Diagnostic::error("rules-syntax", &target, e.to_string())),
        }
    }
}

/// `MinTemp < MaxTemp` whenever both are present.
pub(crate) fn check_thresholds(params: &Fields) -> Result<(), String> {
    let min = params.get("MinTemp");
    let max = params.get("MaxTemp");
    match (min, max) {
        (Some(min), Some(max)) => match (min.as_f64(), max.as_f64()) {
            (Some(lo), Some(hi)) if lo < hi => Ok(()),
            (Some(lo), Some(hi)) => Err(format!("MinTemp ({lo}) must be below MaxTemp ({hi})")),
            _ => Err("MinTemp and MaxTemp must be numeric".to_string()),
        },
        _ => Ok(()),
    }
}

fn resolve(
    graph: &FlowGraph,
    index: &HashMap<&str, usize>,
    c: &Connection,
) -> Result<(usize, usize), String> {
    let from = *index
        .get(c.from_brick.as_str())
        .ok_or_else(|| format!("unknown source brick {:?}", c.from_brick))?;
    let to = *index
        .get(c.to_brick.as_str())
        .ok_or_else(|| format!("unknown target brick {:?}", c.to_brick))?;
    if graph.bricks[from].out_port(&c.from_port).is_none() {
        return Err(format!("{:?} is not an out-port of {:?}", c.from_port, c.from_brick));
    }
    if graph.bricks[to].in_port(&c.to_port).is_none() {
        return Err(format!("{:?} is not an in-port of {:?}", c.to_port, c.to_brick));
    }
    Ok((from, to))
}

fn check_schemas(from: &BrickSpec, to: &BrickSpec, c: &Connection, target: &str, diags: &mut Vec<Diagnostic>) {
    let (Some(src), Some(dst)) = (
        from.out_port(&c.from_port).and_then(|p| p.schema.as_ref()),
        to.in_port(&c.to_port).and_then(|p| p.schema.as_ref()),
    ) else {
        return;
    };
    for (field, want) in dst {
        match src.get(field) {
            None => diags.push(Diagnostic::error(
                "schema-mismatch",
                target,
                format!("field {field:?} required by {}.{} is not produced by {}.{}", c.to_brick, c.to_port, c.from_brick, c.from_port),
            )),
            Some(have) if have == want || (*have == ScalarKind::Int && *want == ScalarKind::Float) => {}
            Some(have) => diags.push(Diagnostic::error(
                "schema-mismatch",
                target,
                format!("field {field:?} is {have} at the source but {want} at the target"),
            )),
        }
    }
}

/// One representative cycle per non-trivial strongly connected component,
/// reported in order of the component's first brick. Each cycle starts and
/// ends at the same brick.
pub(crate) fn find_cycles(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let comps = tarjan(adj);
    let mut out = Vec::new();
    let mut comps: Vec<Vec<usize>> = comps
        .into_iter()
        .filter(|c| c.len() > 1 || adj[c[0]].contains(&c[0]))
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    comps.sort_by_key(|c| c[0]);
    for comp in comps {
        let members: HashSet<usize> = comp.iter().copied().collect();
        let start = comp[0];
        // BFS inside the component back to `start` gives a shortest cycle.
        let mut prev: HashMap<usize, usize> = HashMap::new();
        let mut queue = VecDeque::from([start]);
        let mut closing = None;
        'bfs: while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !members.contains(&v) {
                    continue;
                }
                if v == start {
                    closing = Some(u);
                    break 'bfs;
                }
                if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(v) {
                    e.insert(u);
                    queue.push_back(v);
                }
            }
        }
        let last = closing.expect("strongly connected component contains a cycle through its member");
        let mut path = vec![last];
        let mut cur = last;
        while cur != start {
            cur = prev[&cur];
            path.push(cur);
        }
        path.reverse();
        path.push(start);
        out.push(path);
    }
    out
}

fn tarjan(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        comps: Vec<Vec<usize>>,
    }

    fn strong(s: &mut State<'_>, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for i in 0..s.adj[v].len() {
            let w = s.adj[v][i];
            match s.index[w] {
                None => {
                    strong(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) if s.on_stack[w] => s.low[v] = s.low[v].min(iw),
                _ => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = s.stack.pop().expect("stack holds the component");
                s.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            s.comps.push(comp);
        }
    }

    let n = adj.len();
    let mut s = State {
        adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        comps: Vec::new(),
    };
    for v in 0..n {
        if s.index[v].is_none() {
            strong(&mut s, v);
        }
    }
    s.comps
}

/// True iff the data-edge graph has a cycle.
pub fn has_cycle(graph: &FlowGraph) -> bool {
    let index: HashMap<&str, usize> =
        graph.bricks.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    let mut adj = vec![Vec::new(); graph.bricks.len()];
    for c in &graph.connections {
        if let (Some(&a), Some(&b)) = (index.get(c.from_brick.as_str()), index.get(c.to_brick.as_str())) {
            adj[a].push(b);
        }
    }
    !find_cycles(&adj).is_empty()
}
