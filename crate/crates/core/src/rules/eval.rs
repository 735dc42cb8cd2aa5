use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use super::ast::{ArithOp, BlockProgram, BoolOp, CmpOp, Expr, Payload, Stmt};
use crate::packet::Packet;
use crate::scalar::{Fields, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub emissions: Vec<(String, Packet)>,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalErrorKind {
    MissingField(String),
    MissingParam(String),
    TypeMismatch(String),
    DivisionByZero,
    Overflow,
}

impl fmt::Display for EvalErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalErrorKind::MissingField(n) => write!(f, "missing field {n:?}"),
            EvalErrorKind::MissingParam(n) => write!(f, "missing param {n:?}"),
            EvalErrorKind::TypeMismatch(d) => write!(f, "type mismatch: {d}"),
            EvalErrorKind::DivisionByZero => f.write_str("division by zero"),
            EvalErrorKind::Overflow => f.write_str("integer overflow"),
        }
    }
}

impl EvalErrorKind {
    pub fn code(&self) -> &'static str {
        match self {
            EvalErrorKind::MissingField(_) => "MissingField",
            EvalErrorKind::MissingParam(_) => "MissingParam",
            EvalErrorKind::TypeMismatch(_) => "TypeMismatch",
            EvalErrorKind::DivisionByZero => "DivisionByZero",
            EvalErrorKind::Overflow => "Overflow",
        }
    }
}

/// Evaluation failure, naming the IR node (e.g. `stmt[0].branch[1].cond.lhs`).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {node}")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    pub node: String,
}

/// Run a program against one input packet.
///
/// Execution ends at the first `EmitPacket` or `drop`. Bare names must
/// already be bound to params (see [`BlockProgram::bind_params`]); unbound
/// names are looked up as packet fields only.
pub fn evaluate(program: &BlockProgram, input: &Packet, params: &Fields) -> Result<EvalResult, EvalError> {
    let mut ctx = Ctx { input, params, fields: input.fields.clone() };
    let mut result = EvalResult { emissions: Vec::new(), dropped: false };
    ctx.run(&program.statements, "stmt", &mut result)?;
    Ok(result)
}

struct Ctx<'a> {
    input: &'a Packet,
    params: &'a Fields,
    /// Working copy of the input fields, updated by `set`.
    fields: Fields,
}

enum Flow {
    Continue,
    Done,
}

impl Ctx<'_> {
    fn run(&mut self, stmts: &[Stmt], prefix: &str, out: &mut EvalResult) -> Result<Flow, EvalError> {
        for (i, s) in stmts.iter().enumerate() {
            let path = format!("{prefix}[{i}]");
            match s {
                Stmt::If { branches, else_body } => {
                    let mut taken = false;
                    for (bi, (cond, body)) in branches.iter().enumerate() {
                        let cpath = format!("{path}.branch[{bi}].cond");
                        let v = self.eval(cond, &cpath)?;
                        let Scalar::Bool(b) = v else {
                            return Err(err(&cpath, EvalErrorKind::TypeMismatch(format!("condition is {}, not bool", v.kind()))));
                        };
                        if b {
                            taken = true;
                            if let Flow::Done = self.run(body, &format!("{path}.branch[{bi}].body"), out)? {
                                return Ok(Flow::Done);
                            }
                            break;
                        }
                    }
                    if !taken {
                        if let Flow::Done = self.run(else_body, &format!("{path}.else"), out)? {
                            return Ok(Flow::Done);
                        }
                    }
                }
                Stmt::Emit { port, payload } => {
                    let fields = match payload {
                        Payload::Passthrough => self.fields.clone(),
                        Payload::FieldMap(entries) => {
                            let mut f = Fields::new();
                            for (k, e) in entries {
                                f.insert(k.clone(), self.eval(e, &format!("{path}.payload.{k}"))?);
                            }
                            f
                        }
                    };
                    out.emissions.push((port.clone(), self.input.derive(fields)));
                    return Ok(Flow::Done);
                }
                Stmt::SetField { field, value } => {
                    let v = self.eval(value, &format!("{path}.value"))?;
                    self.fields.insert(field.clone(), v);
                }
                Stmt::Drop => {
                    out.dropped = true;
                    return Ok(Flow::Done);
                }
            }
        }
        Ok(Flow::Continue)
    }

    fn eval(&self, e: &Expr, path: &str) -> Result<Scalar, EvalError> {
        match e {
            Expr::Field(name) => {
                self.fields.get(name).cloned().ok_or_else(|| err(path, EvalErrorKind::MissingField(name.clone())))
            }
            Expr::Param(name) => {
                self.params.get(name).cloned().ok_or_else(|| err(path, EvalErrorKind::MissingParam(name.clone())))
            }
            Expr::Const(c) => Ok(c.clone()),
            Expr::Compare { op, lhs, rhs } => {
                let l = self.eval(lhs, &format!("{path}.lhs"))?;
                let r = self.eval(rhs, &format!("{path}.rhs"))?;
                compare(*op, &l, &r).map(Scalar::Bool).map_err(|k| err(path, k))
            }
            Expr::Arith { op, lhs, rhs } => {
                let l = self.eval(lhs, &format!("{path}.lhs"))?;
                let r = self.eval(rhs, &format!("{path}.rhs"))?;
                arith(*op, &l, &r).map_err(|k| err(path, k))
            }
            Expr::Bool { op, args } => match op {
                BoolOp::Not => {
                    let v = self.bool_arg(&args[0], &format!("{path}.arg[0]"))?;
                    Ok(Scalar::Bool(!v))
                }
                BoolOp::And => {
                    for (i, a) in args.iter().enumerate() {
                        if !self.bool_arg(a, &format!("{path}.arg[{i}]"))? {
                            return Ok(Scalar::Bool(false));
                        }
                    }
                    Ok(Scalar::Bool(true))
                }
                BoolOp::Or => {
                    for (i, a) in args.iter().enumerate() {
                        if self.bool_arg(a, &format!("{path}.arg[{i}]"))? {
                            return Ok(Scalar::Bool(true));
                        }
                    }
                    Ok(Scalar::Bool(false))
                }
            },
        }
    }

    fn bool_arg(&self, e: &Expr, path: &str) -> Result<bool, EvalError> {
        match self.eval(e, path)? {
            Scalar::Bool(b) => Ok(b),
            other => Err(err(path, EvalErrorKind::TypeMismatch(format!("expected bool, found {}", other.kind())))),
        }
    }
}

fn err(path: &str, kind: EvalErrorKind) -> EvalError {
    EvalError { kind, node: path.to_string() }
}

fn compare(op: CmpOp, l: &Scalar, r: &Scalar) -> Result<bool, EvalErrorKind> {
    let ord = l.compare(r);
    let Some(ord) = ord else {
        // NaN compares unequal to everything; other mixes are type errors.
        if l.is_numeric() && r.is_numeric() {
            return Ok(op == CmpOp::Ne);
        }
        return Err(EvalErrorKind::TypeMismatch(format!("cannot compare {} with {}", l.kind(), r.kind())));
    };
    Ok(match op {
        CmpOp::Ge => ord != Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
    })
}

fn arith(op: ArithOp, l: &Scalar, r: &Scalar) -> Result<Scalar, EvalErrorKind> {
    use Scalar::*;
    match (l, r) {
        (Int(a), Int(b)) => match op {
            ArithOp::Add => a.checked_add(*b).map(Int).ok_or(EvalErrorKind::Overflow),
            ArithOp::Sub => a.checked_sub(*b).map(Int).ok_or(EvalErrorKind::Overflow),
            ArithOp::Mul => a.checked_mul(*b).map(Int).ok_or(EvalErrorKind::Overflow),
            ArithOp::Div => {
                if *b == 0 {
                    Err(EvalErrorKind::DivisionByZero)
                } else {
                    Ok(Float(*a as f64 / *b as f64))
                }
            }
        },
        (Int(_) | Float(_), Int(_) | Float(_)) => {
            let a = l.as_f64().expect("numeric");
            let b = r.as_f64().expect("numeric");
            match op {
                ArithOp::Add => Ok(Float(a + b)),
                ArithOp::Sub => Ok(Float(a - b)),
                ArithOp::Mul => Ok(Float(a * b)),
                ArithOp::Div => {
                    if b == 0.0 {
                        Err(EvalErrorKind::DivisionByZero)
                    } else {
                        Ok(Float(a / b))
                    }
                }
            }
        }
        (Str(a), Str(b)) if op == ArithOp::Add => Ok(Str(format!("{a}{b}"))),
        (Timestamp(t), Int(d)) if matches!(op, ArithOp::Add | ArithOp::Sub) => {
            let v = if op == ArithOp::Add { t.checked_add(*d) } else { t.checked_sub(*d) };
            v.map(Timestamp).ok_or(EvalErrorKind::Overflow)
        }
        _ => Err(EvalErrorKind::TypeMismatch(format!(
            "cannot apply '{}' to {} and {}",
            op.symbol(),
            l.kind(),
            r.kind()
        ))),
    }
}
