//! `validate`, `run` and `rules` subcommands. Each returns the process exit
//! code and writes to the given streams.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use flowforge_core::engine::{ClockMode, EngineError, Run, RunOptions, RunState};
use flowforge_core::flow::{parse_flow, validate as validate_flow, BrickKind, BrickSpec, FlowGraph, LogicBinding, PortDecl};
use flowforge_core::rules::{check, parse_rules, pretty_print, BlockProgram, Stmt};
use flowforge_core::stdlib::Registry;
use flowforge_core::{Diagnostic, Fields, Scalar};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIAGNOSTICS: i32 = 1;
pub const EXIT_UNREADABLE: i32 = 2;

/// Data directory from `FLOWFORGE_DATA_DIR`, default `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("FLOWFORGE_DATA_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

/// One diagnostic as a JSON line. The HTTP API uses the same encoding.
pub fn diagnostic_json(d: &Diagnostic) -> String {
    serde_json::to_string(d).expect("diagnostic serializes")
}

fn report(out: &mut dyn Write, err: &mut dyn Write, json: bool, source: &str, diags: &[Diagnostic]) -> io::Result<()> {
    for d in diags {
        if json {
            writeln!(out, "{}", diagnostic_json(d))?;
        } else {
            writeln!(err, "{source}: {d}")?;
        }
    }
    Ok(())
}

pub fn load_flow(path: &Path) -> Result<FlowGraph, Diagnostic> {
    let target = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Diagnostic::error("unreadable", &target, e.to_string()))?;
    parse_flow(&text).map_err(|e| Diagnostic::error("flow-parse", &target, e.to_string()))
}

/// Exit 0 iff every file parses and validates without diagnostics; 2 if any
/// file cannot be read or parsed, else 1.
pub fn validate(paths: &[PathBuf], json: bool, out: &mut dyn Write, err: &mut dyn Write) -> io::Result<i32> {
    let mut code = EXIT_OK;
    for path in paths {
        let source = path.display().to_string();
        match load_flow(path) {
            Err(d) => {
                report(out, err, json, &source, &[d])?;
                code = EXIT_UNREADABLE;
            }
            Ok(g) => {
                let diags = validate_flow(&g);
                if diags.is_empty() {
                    if !json {
                        writeln!(err, "{source}: ok")?;
                    }
                } else {
                    report(out, err, json, &source, &diags)?;
                    code = code.max(EXIT_DIAGNOSTICS);
                }
            }
        }
    }
    Ok(code)
}

pub struct RunArgs {
    pub paths: Vec<PathBuf>,
    pub deterministic: bool,
    pub seed: u64,
    pub ticks: u64,
    pub duration: Duration,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
}

/// Write the run summary next to its trace.
pub fn save_summary(run: &Run) -> io::Result<()> {
    if let Some(dir) = run.run_dir() {
        let text = serde_json::to_string_pretty(&run.summary()).expect("summary serializes");
        std::fs::write(dir.join("summary.json"), text + "\n")?;
    }
    Ok(())
}

fn engine_error(err: &mut dyn Write, e: &EngineError) -> io::Result<()> {
    writeln!(err, "error[{}]: {e}", e.code())?;
    let diags = match e {
        EngineError::InvalidFlow { diagnostics, .. } | EngineError::RulesRejected { diagnostics, .. } => diagnostics.as_slice(),
        _ => &[],
    };
    for d in diags {
        writeln!(err, "  {d}")?;
    }
    Ok(())
}

/// Deploy the flows, run them, drain, and print the summary as JSON.
pub fn run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> io::Result<i32> {
    let mut graphs = Vec::new();
    for p in &args.paths {
        match load_flow(p) {
            Ok(g) => graphs.push(g),
            Err(d) => {
                writeln!(err, "{d}")?;
                return Ok(EXIT_UNREADABLE);
            }
        }
    }
    let mut opts = if args.deterministic {
        RunOptions::deterministic(args.seed)
    } else {
        RunOptions { clock: ClockMode::Wall, seed: args.seed, ..RunOptions::default() }
    };
    opts.out_dir = Some(args.out.clone().unwrap_or_else(|| data_dir().join("runs")));
    opts.run_id = args.run_id.clone();
    let run = match Run::instantiate(&graphs, &Registry::standard(), opts) {
        Ok(r) => r,
        Err(e) => {
            engine_error(err, &e)?;
            return Ok(EXIT_DIAGNOSTICS);
        }
    };
    let result = (|| {
        run.start()?;
        if args.deterministic {
            run.run_ticks(args.ticks)?;
        } else {
            std::thread::sleep(args.duration);
        }
        run.drain()
    })();
    let state = match result {
        Ok(s) => s,
        Err(e) => {
            engine_error(err, &e)?;
            run.state()
        }
    };
    save_summary(&run)?;
    if let Some(dir) = run.run_dir() {
        writeln!(err, "run {} written to {}", run.id(), dir.display())?;
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&run.summary()).expect("summary serializes"))?;
    Ok(if state == RunState::Stopped { EXIT_OK } else { EXIT_DIAGNOSTICS })
}

pub struct BrickArgs {
    /// `FLOW.json:BRICK_ID`: check against a brick declared in a flow file.
    pub brick: Option<String>,
    pub kind: Option<BrickKind>,
    pub in_ports: Vec<String>,
    pub out_ports: Vec<String>,
    pub params: Vec<(String, String)>,
}

/// A `K=V` param value: JSON scalar if it parses as one, else a string.
pub fn param_value(v: &str) -> Scalar {
    serde_json::from_str::<Scalar>(v).unwrap_or_else(|_| Scalar::Str(v.to_string()))
}

fn emitted_ports(stmts: &[Stmt], out: &mut BTreeSet<String>) {
    for s in stmts {
        match s {
            Stmt::Emit { port, .. } => {
                out.insert(port.clone());
            }
            Stmt::If { branches, else_body } => {
                for (_, body) in branches {
                    emitted_ports(body, out);
                }
                emitted_ports(else_body, out);
            }
            _ => {}
        }
    }
}

/// The brick a rule program is checked against when none is named: the given
/// kind (default General), one in-port `in`, and the ports the program emits on.
pub fn rules_brick(program: &BlockProgram, kind: Option<BrickKind>, in_ports: &[String], out_ports: &[String], params: Fields) -> BrickSpec {
    let mut ports = BTreeSet::new();
    emitted_ports(&program.statements, &mut ports);
    let logic = LogicBinding::Rules { source: String::new() };
    let mut spec = BrickSpec::new("rules", kind.unwrap_or(BrickKind::General), logic).with_in_ports(["in"]).with_out_ports(ports);
    override_ports(&mut spec, in_ports, out_ports);
    spec.params = params;
    spec
}

fn override_ports(spec: &mut BrickSpec, in_ports: &[String], out_ports: &[String]) {
    if !in_ports.is_empty() {
        spec.in_ports = in_ports.iter().map(PortDecl::new).collect();
    }
    if !out_ports.is_empty() {
        spec.out_ports = out_ports.iter().map(PortDecl::new).collect();
    }
}

fn brick_for(program: &BlockProgram, args: &BrickArgs) -> Result<BrickSpec, String> {
    let params: Fields = args.params.iter().map(|(k, v)| (k.clone(), param_value(v))).collect();
    let Some(r) = &args.brick else {
        return Ok(rules_brick(program, args.kind, &args.in_ports, &args.out_ports, params));
    };
    let (file, id) = r.rsplit_once(':').ok_or_else(|| format!("--brick expects FLOW.json:BRICK_ID, got {r:?}"))?;
    let g = load_flow(Path::new(file)).map_err(|d| d.to_string())?;
    let mut spec = g.brick(id).cloned().ok_or_else(|| format!("{file} has no brick {id:?}"))?;
    if let Some(k) = args.kind {
        spec.kind = k;
    }
    override_ports(&mut spec, &args.in_ports, &args.out_ports);
    spec.params.extend(params);
    Ok(spec)
}

/// Parse and statically check a rule program. 0 clean, 1 diagnostics, 2 unreadable or syntax error.
pub fn rules_check(path: &Path, args: &BrickArgs, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> io::Result<i32> {
    let source = path.display().to_string();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            writeln!(err, "{source}: {e}")?;
            return Ok(EXIT_UNREADABLE);
        }
    };
    let program = match parse_rules(&text) {
        Ok(p) => p,
        Err(e) => {
            report(out, err, json, &source, &[Diagnostic::error("rules-syntax", "program", e.to_string())])?;
            return Ok(EXIT_UNREADABLE);
        }
    };
    let spec = match brick_for(&program, args) {
        Ok(s) => s,
        Err(m) => {
            writeln!(err, "{m}")?;
            return Ok(EXIT_UNREADABLE);
        }
    };
    let diags = check(&program, &spec);
    if diags.is_empty() {
        if !json {
            writeln!(err, "{source}: ok ({} brick, out-ports {})", spec.kind, spec.out_port_names().collect::<Vec<_>>().join(","))?;
        }
        Ok(EXIT_OK)
    } else {
        report(out, err, json, &source, &diags)?;
        Ok(EXIT_DIAGNOSTICS)
    }
}

/// Print the canonical formatting of a rule program.
pub fn rules_fmt(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> io::Result<i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            writeln!(err, "{}: {e}", path.display())?;
            return Ok(EXIT_UNREADABLE);
        }
    };
    match parse_rules(&text) {
        Ok(p) => {
            write!(out, "{}", pretty_print(&p))?;
            Ok(EXIT_OK)
        }
        Err(e) => {
            writeln!(err, "{}: {e}", path.display())?;
            Ok(EXIT_UNREADABLE)
        }
    }
}
