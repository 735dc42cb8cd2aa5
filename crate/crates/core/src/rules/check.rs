use super::ast::{BlockProgram, Expr, Payload, Stmt};
use crate::diag::Diagnostic;
use crate::flow::{BrickKind, BrickSpec};

pub const MAX_EXPR_DEPTH: usize = 64;

/// Emission counts over all execution paths through a statement list,
/// counting every `Emit` statement structurally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathCounts {
    pub min: usize,
    pub max: usize,
    pub may_drop: bool,
}

impl PathCounts {
    const EMPTY: PathCounts = PathCounts { min: 0, max: 0, may_drop: false };

    fn then(self, next: PathCounts) -> PathCounts {
        PathCounts {
            min: self.min + next.min,
            max: self.max + next.max,
            may_drop: self.may_drop || next.may_drop,
        }
    }

    fn either(self, other: PathCounts) -> PathCounts {
        PathCounts {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            may_drop: self.may_drop || other.may_drop,
        }
    }
}

pub fn path_counts(stmts: &[Stmt]) -> PathCounts {
    stmts.iter().fold(PathCounts::EMPTY, |acc, s| acc.then(stmt_counts(s)))
}

fn stmt_counts(s: &Stmt) -> PathCounts {
    match s {
        Stmt::Emit { .. } => PathCounts { min: 1, max: 1, may_drop: false },
        Stmt::Drop => PathCounts { min: 0, max: 0, may_drop: true },
        Stmt::SetField { .. } => PathCounts::EMPTY,
        Stmt::If { branches, else_body } => branches
            .iter()
            .map(|(_, body)| path_counts(body))
            .fold(path_counts(else_body), PathCounts::either),
    }
}

/// True iff every execution path performs exactly one emit and no drop.
pub fn exactly_one_emit(program: &BlockProgram) -> bool {
    let c = path_counts(&program.statements);
    c.min == 1 && c.max == 1 && !c.may_drop
}

/// Static checks of a program against the brick that will run it.
///
/// Bare names matching the brick's params are bound first, so the program
/// may come straight from [`super::parse_rules`].
pub fn check(program: &BlockProgram, brick: &BrickSpec) -> Vec<Diagnostic> {
    let program = program.bind_params(brick.params.keys());
    let mut diags = Vec::new();
    check_body(&program.statements, brick, "stmt", &mut diags);

    if brick.kind == BrickKind::Selector {
        let c = path_counts(&program.statements);
        if c.min == 0 {
            diags.push(Diagnostic::error(
                "selector-paths",
                "program",
                "path with zero emissions: a Selector must emit exactly once on every path",
            ));
        }
        if c.max > 1 {
            diags.push(Diagnostic::error(
                "selector-paths",
                "program",
                "path with multiple emissions: a Selector must emit exactly once on every path",
            ));
        }
        if c.may_drop {
            diags.push(Diagnostic::error(
                "selector-paths",
                "program",
                "path with drop: a Selector must emit exactly once on every path",
            ));
        }
    }
    diags
}

fn check_body(stmts: &[Stmt], brick: &BrickSpec, prefix: &str, diags: &mut Vec<Diagnostic>) {
    let mut terminated = false;
    for (i, s) in stmts.iter().enumerate() {
        let path = format!("{prefix}[{i}]");
        if terminated {
            diags.push(Diagnostic::error(
                "unreachable",
                &path,
                "statement is unreachable: an earlier statement in this block always emits or drops",
            ));
            // One report per block is enough.
            return;
        }
        match s {
            Stmt::If { branches, else_body } => {
                for (bi, (cond, body)) in branches.iter().enumerate() {
                    check_expr(cond, brick, &format!("{path}.branch[{bi}].cond"), diags);
                    check_body(body, brick, &format!("{path}.branch[{bi}].body"), diags);
                }
                check_body(else_body, brick, &format!("{path}.else"), diags);
            }
            Stmt::Emit { port, payload } => {
                if port.is_empty() {
                    diags.push(Diagnostic::error("unknown-port", &path, "EmitPacket port name is empty"));
                } else if brick.out_port(port).is_none() {
                    diags.push(Diagnostic::error(
                        "unknown-port",
                        &path,
                        format!("EmitPacket to unknown port {port:?} (brick {:?} declares: {})", brick.id, port_list(brick)),
                    ));
                }
                if let Payload::FieldMap(entries) = payload {
                    for (k, e) in entries {
                        if k.is_empty() {
                            diags.push(Diagnostic::error("empty-field", &path, "payload field name is empty"));
                        }
                        check_expr(e, brick, &format!("{path}.payload.{k}"), diags);
                    }
                }
            }
            Stmt::SetField { field, value } => {
                if field.is_empty() {
                    diags.push(Diagnostic::error("empty-field", &path, "set target field name is empty"));
                }
                check_expr(value, brick, &format!("{path}.value"), diags);
            }
            Stmt::Drop => {}
        }
        if s.terminates() {
            terminated = true;
        }
    }
}

fn check_expr(e: &Expr, brick: &BrickSpec, path: &str, diags: &mut Vec<Diagnostic>) {
    let depth = e.depth();
    if depth > MAX_EXPR_DEPTH {
        diags.push(Diagnostic::error(
            "expr-depth",
            path,
            format!("expression depth {depth} exceeds the limit of {MAX_EXPR_DEPTH}"),
        ));
        return;
    }
    visit_params(e, &mut |name| {
        if !brick.params.contains_key(name) {
            diags.push(Diagnostic::error(
                "unknown-param",
                path,
                format!("reference to undeclared parameter {name:?}"),
            ));
        }
    });
}

fn visit_params(e: &Expr, f: &mut dyn FnMut(&str)) {
    match e {
        Expr::Param(name) => f(name),
        Expr::Compare { lhs, rhs, .. } | Expr::Arith { lhs, rhs, .. } => {
            visit_params(lhs, f);
            visit_params(rhs, f);
        }
        Expr::Bool { args, .. } => args.iter().for_each(|a| visit_params(a, f)),
        Expr::Field(_) | Expr::Const(_) => {}
    }
}

fn port_list(brick: &BrickSpec) -> String {
    if brick.out_ports.is_empty() {
        "no out-ports".into()
    } else {
        brick.out_port_names().collect::<Vec<_>>().join(", ")
    }
}
