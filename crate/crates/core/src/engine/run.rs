use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::mpsc::Receiver;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::logic::{BrickContext, BrickLogic, Emission, RulesLogic};
use super::trace::{TraceEvent, TraceKind, TraceSink};
use super::{ClockMode, EngineError, RunOptions, RunState, SignalEvent};
use crate::diag::Diagnostic;
use crate::external;
use crate::flow::{check_thresholds, validate, BrickKind, BrickSpec, Connection, FlowGraph, LogicBinding};
use crate::packet::{Hop, Packet, PacketId};
use crate::rules::{check, parse_rules};
use crate::scalar::{Fields, Scalar};
use crate::stdlib::{AlertStore, BuildContext, DeviceHub, Registry};

/// Upper bound on scheduler rounds spent draining before the run is declared Failed.
const DRAIN_ROUND_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BrickCounters {
    pub consumed: u64,
    pub emitted: u64,
    pub dropped: u64,
    pub errors: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConnCounters {
    pub emitted: u64,
    pub consumed: u64,
    pub dropped: u64,
}

/// Packet counts at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub state: RunState,
    pub ticks: u64,
    pub bricks: BTreeMap<String, BrickCounters>,
    pub connections: BTreeMap<String, ConnCounters>,
    pub signals: BTreeMap<String, u64>,
}

struct BrickInst {
    spec: BrickSpec,
    logic: Box<dyn BrickLogic>,
    params: Fields,
    /// Packets that could not enter a full queue yet; the brick is blocked until empty.
    outbox: VecDeque<Pending>,
    in_conns: Vec<usize>,
    out_conns: Vec<usize>,
    counters: BrickCounters,
}

struct Pending {
    conn: usize,
    packet: Packet,
    detail: Fields,
}

struct ConnState {
    label: String,
    spec: Connection,
    to: usize,
    queue: VecDeque<(u64, Packet)>,
    saturated: bool,
    counts: ConnCounters,
}

pub(crate) struct RunCore {
    run_id: String,
    state: RunState,
    clock: ClockMode,
    queue_capacity: usize,
    lineage_limit: u32,
    tick: u64,
    bricks: Vec<BrickInst>,
    index: HashMap<String, usize>,
    conns: Vec<ConnState>,
    order: Vec<usize>,
    producers: BTreeMap<String, Vec<usize>>,
    signal_seq: BTreeMap<String, u64>,
    next_packet_id: PacketId,
    next_enqueue_seq: u64,
    trace: TraceSink,
    run_dir: Option<PathBuf>,
    alerts: AlertStore,
}

/// A deployed set of flows. All methods may be called from any thread; they
/// are serialized on one lock.
pub struct Run {
    core: Arc<Mutex<RunCore>>,
    driver: Mutex<Option<JoinHandle<()>>>,
    run_id: String,
    clock: ClockMode,
    step_interval: Duration,
}

impl Run {
    pub fn instantiate(graphs: &[FlowGraph], registry: &Registry, options: RunOptions) -> Result<Run, EngineError> {
        if graphs.is_empty() {
            return Err(EngineError::EmptyDeployment);
        }
        for g in graphs {
            let errors: Vec<Diagnostic> = validate(g).into_iter().filter(Diagnostic::is_error).collect();
            if !errors.is_empty() {
                return Err(EngineError::InvalidFlow { flow_id: g.id.clone(), diagnostics: errors });
            }
        }

        let run_id = options.run_id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
        let run_dir = match &options.out_dir {
            Some(dir) => {
                let d = dir.join(&run_id);
                std::fs::create_dir_all(&d)?;
                for f in ["tsdb.jsonl", "log.jsonl", "alerts.jsonl"] {
                    std::fs::OpenOptions::new().create(true).append(true).open(d.join(f))?;
                }
                Some(d)
            }
            None => None,
        };
        let trace = TraceSink::new(run_dir.as_ref().map(|d| d.join("trace.jsonl")).as_deref())?;
        let alerts = AlertStore::new(&run_id, run_dir.as_ref().map(|d| d.join("alerts.jsonl")))?;
        let devices = DeviceHub::default();
        let build = BuildContext {
            run_id: &run_id,
            run_dir: run_dir.as_deref(),
            seed: options.seed,
            devices: &devices,
            alerts: &alerts,
        };

        let mut bricks = Vec::new();
        let mut index = HashMap::new();
        let mut flow_of = Vec::new();
        for (fi, g) in graphs.iter().enumerate() {
            for spec in &g.bricks {
                if index.insert(spec.id.clone(), bricks.len()).is_some() {
                    return Err(EngineError::DuplicateBrickId(spec.id.clone()));
                }
                let logic = build_logic(spec, registry, &build, &options)?;
                bricks.push(BrickInst {
                    spec: spec.clone(),
                    logic,
                    params: spec.params.clone(),
                    outbox: VecDeque::new(),
                    in_conns: Vec::new(),
                    out_conns: Vec::new(),
                    counters: BrickCounters::default(),
                });
                flow_of.push(fi);
            }
        }

        let mut conns = Vec::new();
        for g in graphs {
            for c in &g.connections {
                let from = index[&c.from_brick];
                let to = index[&c.to_brick];
                let ci = conns.len();
                bricks[from].out_conns.push(ci);
                bricks[to].in_conns.push(ci);
                conns.push(ConnState {
                    label: c.label(),
                    spec: c.clone(),
                    to,
                    queue: VecDeque::new(),
                    saturated: false,
                    counts: ConnCounters::default(),
                });
            }
        }

        let order = schedule_order(&bricks, &conns, &flow_of, graphs.len(), options.seed);
        let mut producers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, b) in bricks.iter().enumerate() {
            if b.spec.kind == BrickKind::SignalProducer {
                if let Some(name) = &b.spec.signal_name {
                    producers.entry(name.clone()).or_default().push(i);
                }
            }
        }

        let mut core = RunCore {
            run_id: run_id.clone(),
            state: RunState::Created,
            clock: options.clock,
            queue_capacity: options.queue_capacity.max(1),
            lineage_limit: options.lineage_limit,
            tick: 0,
            bricks,
            index,
            conns,
            order,
            producers,
            signal_seq: BTreeMap::new(),
            next_packet_id: 1,
            next_enqueue_seq: 0,
            trace,
            run_dir,
            alerts,
        };
        for i in 0..core.bricks.len() {
            let id = core.bricks[i].spec.id.clone();
            let mut d = Fields::new();
            d.insert("kind".into(), core.bricks[i].spec.kind.as_str().into());
            core.record(TraceKind::BrickStarted, &id, None, None, d);
        }
        Ok(Run {
            core: Arc::new(Mutex::new(core)),
            driver: Mutex::new(None),
            run_id,
            clock: options.clock,
            step_interval: options.step_interval,
        })
    }

    pub fn id(&self) -> &str {
        &self.run_id
    }

    pub fn clock(&self) -> ClockMode {
        self.clock
    }

    fn lock(&self) -> MutexGuard<'_, RunCore> {
        // A panic inside a brick poisons the lock; the state is still usable for shutdown.
        self.core.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn state(&self) -> RunState {
        self.lock().state
    }

    /// Created → Running. In wall-clock mode this also starts a driver thread
    /// that runs scheduler rounds until the run leaves Running.
    pub fn start(&self) -> Result<RunState, EngineError> {
        {
            let mut core = self.lock();
            if core.state != RunState::Created {
                return Err(EngineError::IllegalTransition { from: core.state, action: "start" });
            }
            core.state = RunState::Running;
        }
        if self.clock == ClockMode::Wall {
            let core = Arc::clone(&self.core);
            let pause = self.step_interval;
            let handle = std::thread::spawn(move || loop {
                {
                    let mut c = core.lock().unwrap_or_else(|e| e.into_inner());
                    if c.state != RunState::Running {
                        break;
                    }
                    c.step();
                }
                std::thread::sleep(pause);
            });
            *self.driver.lock().unwrap_or_else(|e| e.into_inner()) = Some(handle);
        }
        Ok(RunState::Running)
    }

    /// Run `n` scheduler rounds synchronously.
    pub fn run_ticks(&self, n: u64) -> Result<(), EngineError> {
        let mut core = self.lock();
        if core.state != RunState::Running {
            return Err(EngineError::RunNotRunning);
        }
        for _ in 0..n {
            core.step();
        }
        Ok(())
    }

    /// Stop sources, process everything in flight, then Stopped.
    pub fn drain(&self) -> Result<RunState, EngineError> {
        let state = {
            let mut core = self.lock();
            if core.state != RunState::Running {
                return Err(EngineError::IllegalTransition { from: core.state, action: "drain" });
            }
            core.state = RunState::Draining;
            let mut rounds = 0;
            while !core.quiescent() {
                core.step();
                rounds += 1;
                if rounds >= DRAIN_ROUND_LIMIT {
                    core.fail("drain did not reach quiescence");
                    break;
                }
            }
            if core.state == RunState::Draining {
                core.finish();
            }
            core.state
        };
        self.join_driver();
        Ok(state)
    }

    /// Halt now. Queued and blocked packets are recorded as dropped.
    pub fn stop(&self) -> Result<RunState, EngineError> {
        let state = {
            let mut core = self.lock();
            if !matches!(core.state, RunState::Running | RunState::Draining) {
                return Err(EngineError::IllegalTransition { from: core.state, action: "stop" });
            }
            core.drop_in_flight();
            core.finish();
            core.state
        };
        self.join_driver();
        Ok(state)
    }

    fn join_driver(&self) {
        let handle = self.driver.lock().unwrap_or_else(|e| e.into_inner()).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }

    /// Feed a packet into an Inlet as if its external source produced it.
    pub fn inject(&self, brick_id: &str, fields: Fields) -> Result<PacketId, EngineError> {
        let mut core = self.lock();
        if core.state != RunState::Running {
            return Err(EngineError::RunNotRunning);
        }
        let b = *core.index.get(brick_id).ok_or_else(|| EngineError::UnknownBrick(brick_id.to_string()))?;
        if core.bricks[b].spec.kind != BrickKind::Inlet {
            return Err(EngineError::NotAnInlet(brick_id.to_string()));
        }
        let ports: Vec<String> = core.bricks[b].spec.out_port_names().map(String::from).collect();
        let mut first = None;
        for port in ports {
            let id = core.emit(b, Emission::new(port, Packet::new(fields.clone())), &Fields::new());
            first = first.or(id);
        }
        Ok(first.unwrap_or(0))
    }

    pub fn fire_signal(&self, name: &str, payload: Option<Fields>) -> Result<SignalEvent, EngineError> {
        let mut core = self.lock();
        if core.state != RunState::Running {
            return Err(EngineError::RunNotRunning);
        }
        Ok(core.fire_signal(name, payload.unwrap_or_default(), "control-plane", None))
    }

    /// Patch declared params of one brick. Applies from the next packet on.
    pub fn set_brick_params(&self, brick_id: &str, patch: &Fields) -> Result<Fields, EngineError> {
        let mut core = self.lock();
        if core.state != RunState::Running {
            return Err(EngineError::RunNotRunning);
        }
        let b = *core.index.get(brick_id).ok_or_else(|| EngineError::UnknownBrick(brick_id.to_string()))?;
        let inst = &core.bricks[b];
        let mut merged = inst.params.clone();
        for (k, v) in patch {
            if !inst.spec.params.contains_key(k) {
                return Err(EngineError::UnknownParam { brick: brick_id.to_string(), param: k.clone() });
            }
            merged.insert(k.clone(), v.clone());
        }
        check_thresholds(&merged).map_err(EngineError::InvariantViolated)?;
        inst.logic.check_params(&merged).map_err(EngineError::InvariantViolated)?;
        core.bricks[b].params = merged.clone();
        core.record(TraceKind::ParamsChanged, brick_id, None, None, patch.clone());
        Ok(merged)
    }

    pub fn brick_params(&self, brick_id: &str) -> Option<Fields> {
        let core = self.lock();
        core.index.get(brick_id).map(|&b| core.bricks[b].params.clone())
    }

    pub fn brick_ids(&self) -> Vec<String> {
        self.lock().bricks.iter().map(|b| b.spec.id.clone()).collect()
    }

    /// Every event so far, then live events until the run stops.
    pub fn subscribe_trace(&self) -> Receiver<TraceEvent> {
        self.lock().trace.subscribe()
    }

    /// Snapshot of the trace so far.
    pub fn trace(&self) -> Vec<TraceEvent> {
        self.lock().trace.events().to_vec()
    }

    pub fn summary(&self) -> RunSummary {
        self.lock().summary()
    }

    pub fn run_dir(&self) -> Option<PathBuf> {
        self.lock().run_dir.clone()
    }

    pub fn alerts(&self) -> AlertStore {
        self.lock().alerts.clone()
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        let live = matches!(self.state(), RunState::Running | RunState::Draining);
        if live {
            let _ = self.stop();
        } else {
            self.join_driver();
        }
    }
}

fn build_logic(
    spec: &BrickSpec,
    registry: &Registry,
    build: &BuildContext<'_>,
    options: &RunOptions,
) -> Result<Box<dyn BrickLogic>, EngineError> {
    match &spec.logic {
        LogicBinding::Builtin { name } => {
            let def = registry.get(name).ok_or_else(|| EngineError::UnknownBuiltin(name.clone()))?;
            if !def.kinds.contains(&spec.kind) {
                return Err(EngineError::InvalidBinding {
                    brick: spec.id.clone(),
                    reason: format!("builtin {name:?} cannot run as a {} brick", spec.kind),
                });
            }
            (def.factory)(spec, build).map_err(|reason| EngineError::InvalidBinding { brick: spec.id.clone(), reason })
        }
        LogicBinding::Rules { source } => {
            let program = parse_rules(source).map_err(|e| EngineError::RulesRejected {
                brick: spec.id.clone(),
                diagnostics: vec![Diagnostic::error("rules-syntax", "program", e.to_string())],
            })?;
            let diagnostics = check(&program, spec);
            if diagnostics.iter().any(Diagnostic::is_error) {
                return Err(EngineError::RulesRejected { brick: spec.id.clone(), diagnostics });
            }
            Ok(Box::new(RulesLogic::new(program.bind_params(spec.params.keys()))))
        }
        LogicBinding::External { transport, endpoint } => {
            let logic = external::ExternalLogic::spawn(spec, *transport, endpoint, options.external.clone())
                .map_err(|e| EngineError::ExternalHandshakeFailed { brick: spec.id.clone(), reason: e.to_string() })?;
            Ok(Box::new(logic))
        }
    }
}

/// Flows in deployment order; within a flow, topological order with ties
/// broken by a per-brick key drawn from the run seed.
fn schedule_order(bricks: &[BrickInst], conns: &[ConnState], flow_of: &[usize], n_flows: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u64> = bricks.iter().map(|_| rng.random()).collect();
    let mut indeg = vec![0usize; bricks.len()];
    for c in conns {
        indeg[c.to] += 1;
    }
    let mut order = Vec::with_capacity(bricks.len());
    for f in 0..n_flows {
        let mut ready: Vec<usize> = (0..bricks.len()).filter(|&i| flow_of[i] == f && indeg[i] == 0).collect();
        while !ready.is_empty() {
            let pos = (0..ready.len()).min_by_key(|&j| (keys[ready[j]], ready[j])).unwrap();
            let b = ready.swap_remove(pos);
            order.push(b);
            for &ci in &bricks[b].out_conns {
                let t = conns[ci].to;
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(t);
                }
            }
        }
    }
    // Validation rejects cycles, so every brick was placed; keep any stragglers runnable anyway.
    for i in 0..bricks.len() {
        if !order.contains(&i) {
            order.push(i);
        }
    }
    order
}

fn detail<const N: usize>(pairs: [(&str, Scalar); N]) -> Fields {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

impl RunCore {
    fn now(&self) -> i64 {
        match self.clock {
            ClockMode::Logical => self.tick as i64,
            ClockMode::Wall => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0),
        }
    }

    fn record(&mut self, kind: TraceKind, brick: &str, port: Option<&str>, packet_id: Option<PacketId>, detail: Fields) {
        let ev = TraceEvent {
            ts: self.now(),
            run_id: self.run_id.clone(),
            kind,
            brick: brick.to_string(),
            port: port.map(String::from),
            packet_id,
            detail,
        };
        self.trace.record(ev);
    }

    /// One scheduler round.
    fn step(&mut self) {
        self.tick += 1;
        let order = self.order.clone();
        if self.state == RunState::Running {
            for &b in &order {
                self.flush_outbox(b);
                if self.bricks[b].outbox.is_empty() {
                    self.poll(b);
                }
            }
        }
        for &b in &order {
            self.flush_outbox(b);
            if self.bricks[b].outbox.is_empty() {
                self.process_one(b);
            }
        }
        for &b in &order {
            self.health(b);
        }
    }

    fn quiescent(&self) -> bool {
        self.conns.iter().all(|c| c.queue.is_empty())
            && self.bricks.iter().all(|b| b.outbox.is_empty() && !b.logic.busy())
    }

    fn poll(&mut self, b: usize) {
        let now = self.now();
        let inst = &mut self.bricks[b];
        let mut ctx = BrickContext::new(&inst.spec, &inst.params, now);
        let result = inst.logic.poll(&mut ctx);
        let (signals, notes) = (std::mem::take(&mut ctx.signals), std::mem::take(&mut ctx.notes));
        let id = inst.spec.id.clone();
        match result {
            Ok(ems) => {
                for e in ems {
                    self.emit(b, e, &Fields::new());
                }
            }
            Err(e) => {
                self.bricks[b].counters.errors += 1;
                self.record(TraceKind::BrickError, &id, None, None, detail([("code", e.code.into()), ("message", e.message.into())]));
            }
        }
        self.apply_notes(&id, notes);
        for (name, fields) in signals {
            self.fire_signal(&name, fields, &id, None);
        }
    }

    fn health(&mut self, b: usize) {
        let now = self.now();
        let inst = &mut self.bricks[b];
        let mut ctx = BrickContext::new(&inst.spec, &inst.params, now);
        inst.logic.health(&mut ctx);
        let notes = std::mem::take(&mut ctx.notes);
        if !notes.is_empty() {
            let id = inst.spec.id.clone();
            self.apply_notes(&id, notes);
        }
    }

    fn apply_notes(&mut self, brick: &str, notes: Vec<(TraceKind, Fields)>) {
        for (kind, d) in notes {
            self.record(kind, brick, None, None, d);
        }
    }

    /// Take the earliest-enqueued packet across the brick's in-connections and run the brick on it.
    fn process_one(&mut self, b: usize) {
        let Some(ci) = self.bricks[b]
            .in_conns
            .iter()
            .copied()
            .filter(|&ci| !self.conns[ci].queue.is_empty())
            .min_by_key(|&ci| self.conns[ci].queue.front().map(|(seq, _)| *seq))
        else {
            return;
        };
        let cap = self.queue_capacity;
        let conn = &mut self.conns[ci];
        let (_, packet) = conn.queue.pop_front().expect("non-empty queue");
        if conn.queue.len() < cap {
            conn.saturated = false;
        }
        conn.counts.consumed += 1;
        let port = conn.spec.to_port.clone();
        let d = detail([
            ("connection", conn.label.clone().into()),
            ("from_brick", conn.spec.from_brick.clone().into()),
            ("from_port", conn.spec.from_port.clone().into()),
        ]);
        self.bricks[b].counters.consumed += 1;
        let id = self.bricks[b].spec.id.clone();
        self.record(TraceKind::PacketConsumed, &id, Some(&port), Some(packet.id), d);

        let now = self.now();
        let inst = &mut self.bricks[b];
        let mut ctx = BrickContext::new(&inst.spec, &inst.params, now);
        let result = inst.logic.on_packet(&mut ctx, &port, &packet);
        let (signals, notes) = (std::mem::take(&mut ctx.signals), std::mem::take(&mut ctx.notes));
        let kind = inst.spec.kind;
        let has_outputs = !inst.spec.out_ports.is_empty();

        match result {
            Ok(ems) if kind == BrickKind::Selector && ems.len() != 1 => {
                let msg = format!("Selector emitted {} packets; exactly one is required", ems.len());
                self.brick_failure(b, &port, packet.id, "selector-violation", &msg);
            }
            Ok(ems) => {
                if ems.is_empty() && has_outputs {
                    self.bricks[b].counters.dropped += 1;
                    self.record(TraceKind::PacketDropped, &id, Some(&port), Some(packet.id), detail([("reason", "filtered".into())]));
                }
                for e in ems {
                    self.emit(b, e, &Fields::new());
                }
            }
            Err(e) => self.brick_failure(b, &port, packet.id, &e.code, &e.message),
        }
        self.apply_notes(&id, notes);
        for (name, fields) in signals {
            self.fire_signal(&name, fields, &id, Some(&packet));
        }
    }

    fn brick_failure(&mut self, b: usize, port: &str, packet_id: PacketId, code: &str, message: &str) {
        let id = self.bricks[b].spec.id.clone();
        self.bricks[b].counters.errors += 1;
        self.bricks[b].counters.dropped += 1;
        self.record(
            TraceKind::BrickError,
            &id,
            Some(port),
            Some(packet_id),
            detail([("code", code.into()), ("message", message.into())]),
        );
        self.record(TraceKind::PacketDropped, &id, Some(port), Some(packet_id), detail([("reason", code.into())]));
    }

    /// Stamp and route one emission. Returns the packet id, or None if it was rejected.
    fn emit(&mut self, b: usize, e: Emission, extra: &Fields) -> Option<PacketId> {
        let Emission { port, mut packet } = e;
        let id = self.bricks[b].spec.id.clone();
        if self.bricks[b].spec.out_port(&port).is_none() {
            self.bricks[b].counters.errors += 1;
            self.record(
                TraceKind::BrickError,
                &id,
                Some(&port),
                packet.parent,
                detail([("code", "unknown-port".into()), ("message", format!("emission on undeclared port {port:?}").into())]),
            );
            return None;
        }
        if packet.lineage_depth > self.lineage_limit {
            self.bricks[b].counters.errors += 1;
            self.bricks[b].counters.dropped += 1;
            self.record(
                TraceKind::BrickError,
                &id,
                Some(&port),
                packet.parent,
                detail([
                    ("code", "lineage-limit".into()),
                    ("message", format!("lineage limit: depth {} exceeds {}", packet.lineage_depth, self.lineage_limit).into()),
                ]),
            );
            return None;
        }
        let now = self.now();
        let pid = self.next_packet_id;
        self.next_packet_id += 1;
        packet.id = pid;
        packet.created_at = now;
        packet.trace.push(Hop { brick_id: id.clone(), port: port.clone(), ts: now });
        self.bricks[b].counters.emitted += 1;

        let targets: Vec<usize> = self.bricks[b]
            .out_conns
            .iter()
            .copied()
            .filter(|&ci| self.conns[ci].spec.from_port == port)
            .collect();
        if targets.is_empty() {
            self.bricks[b].counters.dropped += 1;
            self.record(TraceKind::PacketDropped, &id, Some(&port), Some(pid), detail([("reason", "unconnected".into())]));
            return Some(pid);
        }
        let mut d = extra.clone();
        d.insert("depth".into(), Scalar::Int(packet.lineage_depth as i64));
        if let Some(parent) = packet.parent {
            d.insert("parent".into(), Scalar::Int(parent as i64));
        }
        for ci in targets {
            let pending = Pending { conn: ci, packet: packet.clone(), detail: d.clone() };
            if self.bricks[b].outbox.is_empty() && self.conns[ci].queue.len() < self.queue_capacity {
                self.enqueue(pending);
            } else {
                self.block(b, pending);
            }
        }
        Some(pid)
    }

    fn block(&mut self, b: usize, pending: Pending) {
        let ci = pending.conn;
        self.bricks[b].outbox.push_back(pending);
        if self.conns[ci].queue.len() >= self.queue_capacity && !self.conns[ci].saturated {
            self.conns[ci].saturated = true;
            let c = &self.conns[ci];
            let (id, port) = (c.spec.from_brick.clone(), c.spec.from_port.clone());
            let d = detail([("connection", c.label.clone().into()), ("capacity", Scalar::Int(self.queue_capacity as i64))]);
            self.record(TraceKind::QueueSaturated, &id, Some(&port), None, d);
        }
    }

    fn enqueue(&mut self, p: Pending) {
        let seq = self.next_enqueue_seq;
        self.next_enqueue_seq += 1;
        let c = &mut self.conns[p.conn];
        c.counts.emitted += 1;
        let mut d = p.detail;
        d.insert("connection".into(), c.label.clone().into());
        d.insert("to_brick".into(), c.spec.to_brick.clone().into());
        d.insert("to_port".into(), c.spec.to_port.clone().into());
        let (brick, port, pid) = (c.spec.from_brick.clone(), c.spec.from_port.clone(), p.packet.id);
        c.queue.push_back((seq, p.packet));
        self.record(TraceKind::PacketEmitted, &brick, Some(&port), Some(pid), d);
    }

    fn flush_outbox(&mut self, b: usize) {
        while let Some(front) = self.bricks[b].outbox.front() {
            let ci = front.conn;
            if self.conns[ci].queue.len() >= self.queue_capacity {
                // Still full: re-arm the saturation event for the next episode only.
                break;
            }
            let p = self.bricks[b].outbox.pop_front().expect("front exists");
            self.enqueue(p);
        }
    }

    fn fire_signal(&mut self, name: &str, fields: Fields, by: &str, parent: Option<&Packet>) -> SignalEvent {
        let seq = {
            let s = self.signal_seq.entry(name.to_string()).or_insert(0);
            *s += 1;
            *s
        };
        let producers = self.producers.get(name).cloned().unwrap_or_default();
        let payload = match parent {
            Some(p) => p.derive(fields),
            None => Packet::new(fields),
        };
        self.record(
            TraceKind::SignalFired,
            by,
            None,
            parent.map(|p| p.id),
            detail([
                ("name", name.into()),
                ("seq", Scalar::Int(seq as i64)),
                ("producers", Scalar::Int(producers.len() as i64)),
            ]),
        );
        let extra = detail([("signal", name.into()), ("signal_seq", Scalar::Int(seq as i64))]);
        for b in producers {
            let now = self.now();
            let inst = &mut self.bricks[b];
            let mut ctx = BrickContext::new(&inst.spec, &inst.params, now);
            let result = inst.logic.on_signal(&mut ctx, &payload);
            let (signals, notes) = (std::mem::take(&mut ctx.signals), std::mem::take(&mut ctx.notes));
            let id = inst.spec.id.clone();
            match result {
                Ok(ems) => {
                    for e in ems {
                        self.emit(b, e, &extra);
                    }
                }
                Err(e) => {
                    self.bricks[b].counters.errors += 1;
                    self.record(TraceKind::BrickError, &id, None, None, detail([("code", e.code.into()), ("message", e.message.into())]));
                }
            }
            self.apply_notes(&id, notes);
            for (n, f) in signals {
                self.fire_signal(&n, f, &id, Some(&payload));
            }
        }
        SignalEvent { name: name.to_string(), payload: Some(payload), emitted_by: by.to_string(), seq }
    }

    fn drop_in_flight(&mut self) {
        for ci in 0..self.conns.len() {
            let drained: Vec<(u64, Packet)> = self.conns[ci].queue.drain(..).collect();
            let (to, port, label) = {
                let c = &self.conns[ci];
                (c.to, c.spec.to_port.clone(), c.label.clone())
            };
            for (_, p) in drained {
                self.conns[ci].counts.dropped += 1;
                self.bricks[to].counters.dropped += 1;
                let brick = self.bricks[to].spec.id.clone();
                let d = detail([("reason", "stopped".into()), ("connection", label.clone().into())]);
                self.record(TraceKind::PacketDropped, &brick, Some(&port), Some(p.id), d);
            }
        }
        for b in 0..self.bricks.len() {
            let pending: Vec<Pending> = self.bricks[b].outbox.drain(..).collect();
            let brick = self.bricks[b].spec.id.clone();
            for p in pending {
                self.bricks[b].counters.dropped += 1;
                let c = &self.conns[p.conn];
                let port = c.spec.from_port.clone();
                let d = detail([("reason", "stopped".into()), ("pending_connection", c.label.clone().into())]);
                self.record(TraceKind::PacketDropped, &brick, Some(&port), Some(p.packet.id), d);
            }
        }
    }

    fn finish(&mut self) {
        for b in 0..self.bricks.len() {
            let id = self.bricks[b].spec.id.clone();
            if let Err(e) = self.bricks[b].logic.flush() {
                self.bricks[b].counters.errors += 1;
                self.record(TraceKind::BrickError, &id, None, None, detail([("code", e.code.into()), ("message", e.message.into())]));
            }
            self.bricks[b].logic.shutdown();
            self.record(TraceKind::BrickStopped, &id, None, None, Fields::new());
        }
        self.state = RunState::Stopped;
        self.trace.close();
    }

    fn fail(&mut self, reason: &str) {
        for b in 0..self.bricks.len() {
            let _ = self.bricks[b].logic.flush();
            self.bricks[b].logic.shutdown();
        }
        let run_id = self.run_id.clone();
        self.record(TraceKind::BrickError, &run_id, None, None, detail([("code", "run-failed".into()), ("message", reason.into())]));
        self.state = RunState::Failed;
        self.trace.close();
    }

    fn summary(&self) -> RunSummary {
        RunSummary {
            run_id: self.run_id.clone(),
            state: self.state,
            ticks: self.tick,
            bricks: self.bricks.iter().map(|b| (b.spec.id.clone(), b.counters)).collect(),
            connections: self.conns.iter().map(|c| (c.label.clone(), c.counts)).collect(),
            signals: self.signal_seq.clone(),
        }
    }
}
