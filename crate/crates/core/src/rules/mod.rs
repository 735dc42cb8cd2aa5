//! Brick-internal control flow: the rule syntax, its block IR, a static
//! checker, and an interpreter.
//!
//! The surface syntax is an indentation-based subset of Python:
//!
//! ```text
//! if MeasuredTemp >= MaxTemp:
//!     EmitPacket(MeasuredTemp, 'TooHighPort')
//! elif MeasuredTemp <= MinTemp:
//!     EmitPacket(MeasuredTemp, 'TooLowPort')
//! else:
//!     EmitPacket(MeasuredTemp, 'InRangePort')
//! ```
//!
//! plus `set field = expr`, `drop`, and `pass`. `EmitPacket(packet, 'Port')`
//! forwards every field; `EmitPacket({a: expr, b: expr}, 'Port')` emits an
//! explicit field map. There are no loops.

mod ast;
mod check;
mod eval;
mod lexer;
mod parser;
mod pretty;

use thiserror::Error;

pub use ast::{ArithOp, BlockProgram, BoolOp, CmpOp, Expr, Payload, Stmt};
pub use check::{check, exactly_one_emit, path_counts, PathCounts, MAX_EXPR_DEPTH};
pub use eval::{evaluate, EvalError, EvalErrorKind, EvalResult};
pub use parser::parse_rules;
pub use pretty::pretty_print;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleSyntaxError {
    #[error("syntax error at line {line}, column {col}: expected {}, found {found}", expected.join(" or "))]
    Syntax { line: usize, col: usize, expected: Vec<String>, found: String },
    #[error("indentation error at line {line}: {message}")]
    Indentation { line: usize, message: String },
}

/// The check-temperature selector program.
pub const CHECK_TEMPERATURE_SOURCE: &str = "\
if MeasuredTemp >= MaxTemp:
    EmitPacket(MeasuredTemp, 'TooHighPort')
elif MeasuredTemp <= MinTemp:
    EmitPacket(MeasuredTemp, 'TooLowPort')
else:
    EmitPacket(MeasuredTemp, 'InRangePort')
";

/// [`CHECK_TEMPERATURE_SOURCE`] parsed and bound to the `MaxTemp`/`MinTemp` params.
pub fn check_temperature_program() -> BlockProgram {
    let params = ["MaxTemp".to_string(), "MinTemp".to_string()];
    parse_rules(CHECK_TEMPERATURE_SOURCE).expect("check-temperature program parses").bind_params(params.iter())
}
