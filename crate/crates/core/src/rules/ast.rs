use std::collections::BTreeSet;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Ge,
    Le,
    Gt,
    Lt,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
    Not,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// A field of the packet being processed.
    Field(String),
    /// A brick parameter.
    Param(String),
    Const(Scalar),
    Compare { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Arith { op: ArithOp, lhs: Box<Expr>, rhs: Box<Expr> },
    /// `Not` takes one argument, `And`/`Or` two or more.
    Bool { op: BoolOp, args: Vec<Expr> },
}

impl Expr {
    pub fn field(name: &str) -> Expr {
        Expr::Field(name.to_string())
    }

    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    pub fn compare(op: CmpOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Compare { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn arith(op: ArithOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Arith { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Height of the expression tree; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Field(_) | Expr::Param(_) | Expr::Const(_) => 1,
            Expr::Compare { lhs, rhs, .. } | Expr::Arith { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
            Expr::Bool { args, .. } => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    fn bind(&mut self, params: &BTreeSet<String>) {
        match self {
            Expr::Field(name) if params.contains(name) => *self = Expr::Param(std::mem::take(name)),
            Expr::Compare { lhs, rhs, .. } | Expr::Arith { lhs, rhs, .. } => {
                lhs.bind(params);
                rhs.bind(params);
            }
            Expr::Bool { args, .. } => args.iter_mut().for_each(|a| a.bind(params)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Forward every field of the (possibly modified) input.
    Passthrough,
    /// Emit exactly these fields, in declaration order.
    FieldMap(Vec<(String, Expr)>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    If { branches: Vec<(Expr, Vec<Stmt>)>, else_body: Vec<Stmt> },
    Emit { port: String, payload: Payload },
    SetField { field: String, value: Expr },
    Drop,
}

impl Stmt {
    pub fn emit_field(port: &str, field: &str) -> Stmt {
        Stmt::Emit { port: port.into(), payload: Payload::FieldMap(vec![(field.into(), Expr::field(field))]) }
    }

    /// Whether execution never continues past this statement.
    pub fn terminates(&self) -> bool {
        match self {
            Stmt::Emit { .. } | Stmt::Drop => true,
            Stmt::SetField { .. } => false,
            Stmt::If { branches, else_body } => {
                branches.iter().all(|(_, body)| body_terminates(body)) && body_terminates(else_body)
            }
        }
    }
}

pub(crate) fn body_terminates(body: &[Stmt]) -> bool {
    body.iter().any(Stmt::terminates)
}

/// A brick's internal control flow: conditionals, field updates, and
/// emissions. There is no loop construct, so evaluation always terminates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockProgram {
    pub statements: Vec<Stmt>,
}

impl BlockProgram {
    pub fn new(statements: Vec<Stmt>) -> Self {
        BlockProgram { statements }
    }

    /// Resolve bare names that match a declared brick parameter to
    /// [`Expr::Param`]. The textual syntax does not distinguish fields from
    /// parameters, so this runs once the target brick is known.
    pub fn bind_params<'a, I: IntoIterator<Item = &'a String>>(&self, params: I) -> BlockProgram {
        let names: BTreeSet<String> = params.into_iter().cloned().collect();
        let mut out = self.clone();
        bind_stmts(&mut out.statements, &names);
        out
    }
}

fn bind_stmts(stmts: &mut [Stmt], params: &BTreeSet<String>) {
    for s in stmts {
        match s {
            Stmt::If { branches, else_body } => {
                for (cond, body) in branches.iter_mut() {
                    cond.bind(params);
                    bind_stmts(body, params);
                }
                bind_stmts(else_body, params);
            }
            Stmt::Emit { payload: Payload::FieldMap(entries), .. } => {
                entries.iter_mut().for_each(|(_, e)| e.bind(params));
            }
            Stmt::SetField { value, .. } => value.bind(params),
            Stmt::Emit { payload: Payload::Passthrough, .. } | Stmt::Drop => {}
        }
    }
}
