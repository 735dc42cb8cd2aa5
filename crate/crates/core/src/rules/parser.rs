use super::ast::{ArithOp, BlockProgram, BoolOp, CmpOp, Expr, Payload, Stmt};
use super::lexer::{tokenize, Tok, Token};
use super::RuleSyntaxError;
use crate::scalar::Scalar;

/// Words that cannot be used as bare field names.
pub(crate) const RESERVED: &[&str] = &[
    "if", "elif", "else", "and", "or", "not", "set", "drop", "pass", "True", "False", "true", "false",
    "packet", "params", "timestamp", "field", "EmitPacket",
];

const STMT_START: &[&str] = &["'if'", "'EmitPacket'", "'set'", "'drop'", "'pass'"];

/// Parse rule source into a [`BlockProgram`].
///
/// Bare names parse as packet fields; call
/// [`BlockProgram::bind_params`] to resolve the ones that are brick params.
pub fn parse_rules(source: &str) -> Result<BlockProgram, RuleSyntaxError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0 };
    let statements = p.stmts_until_eof()?;
    Ok(BlockProgram { statements })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_tok(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> RuleSyntaxError {
        let t = self.peek();
        if t.tok == Tok::Indent {
            return RuleSyntaxError::Indentation { line: t.line, message: "unexpected indent".into() };
        }
        RuleSyntaxError::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, RuleSyntaxError> {
        if *self.peek_tok() == tok {
            Ok(self.bump())
        } else {
            Err(self.error(&[what]))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek_tok(), Tok::Ident(s) if s == kw)
    }

    fn stmts_until_eof(&mut self) -> Result<Vec<Stmt>, RuleSyntaxError> {
        let mut out = Vec::new();
        while *self.peek_tok() != Tok::Eof {
            if let Some(s) = self.stmt()? {
                out.push(s);
            }
        }
        Ok(out)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, RuleSyntaxError> {
        self.expect(Tok::Colon, "':'")?;
        self.expect(Tok::Newline, "end of line")?;
        if *self.peek_tok() != Tok::Indent {
            let t = self.peek();
            return Err(RuleSyntaxError::Indentation { line: t.line, message: "expected an indented block".into() });
        }
        self.bump();
        let mut out = Vec::new();
        while !matches!(self.peek_tok(), Tok::Dedent | Tok::Eof) {
            if let Some(s) = self.stmt()? {
                out.push(s);
            }
        }
        if *self.peek_tok() == Tok::Dedent {
            self.bump();
        }
        Ok(out)
    }

    /// `None` for `pass`.
    fn stmt(&mut self) -> Result<Option<Stmt>, RuleSyntaxError> {
        let Tok::Ident(word) = self.peek_tok().clone() else {
            return Err(self.error(STMT_START));
        };
        match word.as_str() {
            "if" => {
                self.bump();
                let mut branches = Vec::new();
                let cond = self.expr()?;
                let body = self.block()?;
                branches.push((cond, body));
                let mut else_body = Vec::new();
                loop {
                    if self.is_kw("elif") {
                        self.bump();
                        let cond = self.expr()?;
                        let body = self.block()?;
                        branches.push((cond, body));
                    } else if self.is_kw("else") {
                        self.bump();
                        else_body = self.block()?;
                        break;
                    } else {
                        break;
                    }
                }
                Ok(Some(Stmt::If { branches, else_body }))
            }
            "EmitPacket" => {
                self.bump();
                self.expect(Tok::LParen, "'('")?;
                let payload = self.payload()?;
                self.expect(Tok::Comma, "','")?;
                let port = match self.peek_tok().clone() {
                    Tok::Str(s) => {
                        self.bump();
                        s
                    }
                    _ => return Err(self.error(&["port name string"])),
                };
                self.expect(Tok::RParen, "')'")?;
                self.end_simple()?;
                Ok(Some(Stmt::Emit { port, payload }))
            }
            "set" => {
                self.bump();
                let field = self.field_name()?;
                self.expect(Tok::Assign, "'='")?;
                let value = self.expr()?;
                self.end_simple()?;
                Ok(Some(Stmt::SetField { field, value }))
            }
            "drop" => {
                self.bump();
                self.end_simple()?;
                Ok(Some(Stmt::Drop))
            }
            "pass" => {
                self.bump();
                self.end_simple()?;
                Ok(None)
            }
            _ => Err(self.error(STMT_START)),
        }
    }

    fn end_simple(&mut self) -> Result<(), RuleSyntaxError> {
        match self.peek_tok() {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Eof | Tok::Dedent => Ok(()),
            _ => Err(self.error(&["end of line"])),
        }
    }

    /// Identifier, or a quoted string for names that are not plain identifiers.
    fn field_name(&mut self) -> Result<String, RuleSyntaxError> {
        match self.peek_tok().clone() {
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            Tok::Str(s) if !s.is_empty() => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&["field name"])),
        }
    }

    fn payload(&mut self) -> Result<Payload, RuleSyntaxError> {
        if self.is_kw("packet") {
            self.bump();
            return Ok(Payload::Passthrough);
        }
        if *self.peek_tok() == Tok::LBrace {
            self.bump();
            let mut entries: Vec<(String, Expr)> = Vec::new();
            while *self.peek_tok() != Tok::RBrace {
                let key_tok = self.peek().clone();
                let key = self.field_name()?;
                if entries.iter().any(|(k, _)| *k == key) {
                    return Err(RuleSyntaxError::Syntax {
                        line: key_tok.line,
                        col: key_tok.col,
                        expected: vec!["distinct field names".into()],
                        found: format!("duplicate field {key:?}"),
                    });
                }
                self.expect(Tok::Colon, "':'")?;
                let value = self.expr()?;
                entries.push((key, value));
                if *self.peek_tok() == Tok::Comma {
                    self.bump();
                } else if *self.peek_tok() != Tok::RBrace {
                    return Err(self.error(&["','", "'}'"]));
                }
            }
            self.bump();
            return Ok(Payload::FieldMap(entries));
        }
        let e = self.expr()?;
        let key = match &e {
            Expr::Field(name) => name.clone(),
            _ => "value".to_string(),
        };
        Ok(Payload::FieldMap(vec![(key, e)]))
    }

    fn expr(&mut self) -> Result<Expr, RuleSyntaxError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, RuleSyntaxError> {
        let first = self.and_expr()?;
        if !self.is_kw("or") {
            return Ok(first);
        }
        let mut args = vec![first];
        while self.is_kw("or") {
            self.bump();
            args.push(self.and_expr()?);
        }
        Ok(Expr::Bool { op: BoolOp::Or, args })
    }

    fn and_expr(&mut self) -> Result<Expr, RuleSyntaxError> {
        let first = self.not_expr()?;
        if !self.is_kw("and") {
            return Ok(first);
        }
        let mut args = vec![first];
        while self.is_kw("and") {
            self.bump();
            args.push(self.not_expr()?);
        }
        Ok(Expr::Bool { op: BoolOp::And, args })
    }

    fn not_expr(&mut self) -> Result<Expr, RuleSyntaxError> {
        if self.is_kw("not") {
            self.bump();
            let inner = self.not_expr()?;
            return Ok(Expr::Bool { op: BoolOp::Not, args: vec![inner] });
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, RuleSyntaxError> {
        let lhs = self.add_expr()?;
        let op = match self.peek_tok() {
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        Ok(Expr::compare(op, lhs, rhs))
    }

    fn add_expr(&mut self) -> Result<Expr, RuleSyntaxError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek_tok() {
                Tok::Op("+") => ArithOp::Add,
                Tok::Op("-") => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::arith(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, RuleSyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_tok() {
                Tok::Op("*") => ArithOp::Mul,
                Tok::Op("/") => ArithOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::arith(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, RuleSyntaxError> {
        if *self.peek_tok() == Tok::Op("-") {
            if let Tok::Number(text) = self.peek_at(1).clone() {
                let t = self.bump();
                self.bump();
                return number(&format!("-{text}"), &t).map(Expr::Const);
            }
            // `-x` is sugar for `0 - x`
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::arith(ArithOp::Sub, Expr::Const(Scalar::Int(0)), inner));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, RuleSyntaxError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Number(ref text) => {
                self.bump();
                number(text, &t).map(Expr::Const)
            }
            Tok::Str(ref s) => {
                self.bump();
                Ok(Expr::Const(Scalar::Str(s.clone())))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(ref word) => match word.as_str() {
                "True" | "true" => {
                    self.bump();
                    Ok(Expr::Const(Scalar::Bool(true)))
                }
                "False" | "false" => {
                    self.bump();
                    Ok(Expr::Const(Scalar::Bool(false)))
                }
                "params" => {
                    self.bump();
                    self.expect(Tok::Dot, "'.'")?;
                    match self.peek_tok().clone() {
                        Tok::Ident(name) => {
                            self.bump();
                            Ok(Expr::Param(name))
                        }
                        _ => Err(self.error(&["parameter name"])),
                    }
                }
                "field" => {
                    self.bump();
                    self.expect(Tok::LParen, "'('")?;
                    let name = match self.peek_tok().clone() {
                        Tok::Str(s) if !s.is_empty() => {
                            self.bump();
                            s
                        }
                        _ => return Err(self.error(&["field name string"])),
                    };
                    self.expect(Tok::RParen, "')'")?;
                    Ok(Expr::Field(name))
                }
                "timestamp" => {
                    self.bump();
                    self.expect(Tok::LParen, "'('")?;
                    let neg = if *self.peek_tok() == Tok::Op("-") {
                        self.bump();
                        true
                    } else {
                        false
                    };
                    let nt = self.peek().clone();
                    let Tok::Number(text) = nt.tok.clone() else {
                        return Err(self.error(&["integer"]));
                    };
                    self.bump();
                    let text = if neg { format!("-{text}") } else { text };
                    let v: i64 = text.parse().map_err(|_| RuleSyntaxError::Syntax {
                        line: nt.line,
                        col: nt.col,
                        expected: vec!["integer".into()],
                        found: format!("number {text}"),
                    })?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(Expr::Const(Scalar::Timestamp(v)))
                }
                w if RESERVED.contains(&w) => Err(self.error(&["expression"])),
                _ => {
                    self.bump();
                    Ok(Expr::Field(word.clone()))
                }
            },
            _ => Err(self.error(&["expression"])),
        }
    }
}

fn number(text: &str, at: &Token) -> Result<Scalar, RuleSyntaxError> {
    let is_float = text.contains(['.', 'e', 'E']);
    let bad = || RuleSyntaxError::Syntax {
        line: at.line,
        col: at.col,
        expected: vec!["number".into()],
        found: format!("number {text}"),
    };
    if is_float {
        let f: f64 = text.parse().map_err(|_| bad())?;
        if !f.is_finite() {
            return Err(bad());
        }
        Ok(Scalar::Float(f))
    } else {
        text.parse::<i64>().map(Scalar::Int).map_err(|_| bad())
    }
}
