use super::ast::{BlockProgram, BoolOp, CmpOp, Expr, Payload, Stmt};
use super::parser::RESERVED;
use crate::scalar::Scalar;

const INDENT: &str = "    ";

/// Render a program in the textual rule syntax. `parse_rules` of the result
/// yields a structurally equal program.
pub fn pretty_print(program: &BlockProgram) -> String {
    let mut out = String::new();
    write_body(&mut out, &program.statements, 0);
    out
}

fn write_body(out: &mut String, stmts: &[Stmt], level: usize) {
    if stmts.is_empty() && level > 0 {
        line(out, level, "pass");
        return;
    }
    for s in stmts {
        write_stmt(out, s, level);
    }
}

fn line(out: &mut String, level: usize, text: &str) {
    for _ in 0..level {
        out.push_str(INDENT);
    }
    out.push_str(text);
    out.push('\n');
}

fn write_stmt(out: &mut String, s: &Stmt, level: usize) {
    match s {
        Stmt::If { branches, else_body } => {
            for (i, (cond, body)) in branches.iter().enumerate() {
                let kw = if i == 0 { "if" } else { "elif" };
                line(out, level, &format!("{kw} {}:", expr(cond)));
                write_body(out, body, level + 1);
            }
            if !else_body.is_empty() {
                line(out, level, "else:");
                write_body(out, else_body, level + 1);
            }
        }
        Stmt::Emit { port, payload } => {
            line(out, level, &format!("EmitPacket({}, {})", payload_text(payload), quote(port)));
        }
        Stmt::SetField { field, value } => {
            line(out, level, &format!("set {} = {}", key(field), expr(value)));
        }
        Stmt::Drop => line(out, level, "drop"),
    }
}

fn payload_text(p: &Payload) -> String {
    match p {
        Payload::Passthrough => "packet".into(),
        Payload::FieldMap(entries) => {
            if let [(k, e)] = entries.as_slice() {
                // The short `EmitPacket(expr, ...)` form desugars back to exactly this entry.
                let short = match e {
                    Expr::Field(name) => name == k,
                    _ => k == "value",
                };
                if short {
                    return expr(e);
                }
            }
            let inner: Vec<String> = entries.iter().map(|(k, e)| format!("{}: {}", key(k), expr(e))).collect();
            format!("{{{}}}", inner.join(", "))
        }
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_') && !RESERVED.contains(&s)
}

fn key(name: &str) -> String {
    if is_ident(name) {
        name.to_string()
    } else {
        quote(name)
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

// Binding strength; higher binds tighter.
const P_OR: u8 = 1;
const P_AND: u8 = 2;
const P_NOT: u8 = 3;
const P_CMP: u8 = 4;
const P_ADD: u8 = 5;
const P_MUL: u8 = 6;
const P_ATOM: u8 = 7;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bool { op: BoolOp::Or, .. } => P_OR,
        Expr::Bool { op: BoolOp::And, .. } => P_AND,
        Expr::Bool { op: BoolOp::Not, .. } => P_NOT,
        Expr::Compare { .. } => P_CMP,
        Expr::Arith { op, .. } => match op {
            super::ast::ArithOp::Add | super::ast::ArithOp::Sub => P_ADD,
            _ => P_MUL,
        },
        _ => P_ATOM,
    }
}

pub(crate) fn expr(e: &Expr) -> String {
    match e {
        Expr::Field(name) => {
            if is_ident(name) {
                name.clone()
            } else {
                format!("field({})", quote(name))
            }
        }
        Expr::Param(name) => format!("params.{name}"),
        Expr::Const(c) => constant(c),
        Expr::Compare { op, lhs, rhs } => {
            format!("{} {} {}", wrap(lhs, P_CMP + 1), cmp_symbol(*op), wrap(rhs, P_CMP + 1))
        }
        Expr::Arith { op, lhs, rhs } => {
            let p = prec(e);
            format!("{} {} {}", wrap(lhs, p), op.symbol(), wrap(rhs, p + 1))
        }
        Expr::Bool { op: BoolOp::Not, args } => format!("not {}", wrap(&args[0], P_NOT)),
        Expr::Bool { op, args } => {
            let (p, word) = if *op == BoolOp::And { (P_AND, " and ") } else { (P_OR, " or ") };
            let parts: Vec<String> = args.iter().map(|a| wrap(a, p + 1)).collect();
            parts.join(word)
        }
    }
}

fn cmp_symbol(op: CmpOp) -> &'static str {
    op.symbol()
}

fn wrap(e: &Expr, min: u8) -> String {
    let text = expr(e);
    if prec(e) < min {
        format!("({text})")
    } else {
        text
    }
}

fn constant(c: &Scalar) -> String {
    match c {
        Scalar::Int(i) => i.to_string(),
        Scalar::Float(f) => format!("{f:?}"),
        Scalar::Bool(true) => "True".into(),
        Scalar::Bool(false) => "False".into(),
        Scalar::Str(s) => quote(s),
        Scalar::Timestamp(t) => format!("timestamp({t})"),
    }
}
