//! Tokenizer for the indentation-based rule syntax.

use super::RuleSyntaxError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    /// Numeric literal text, parsed by the parser so a leading `-` can join it.
    Number(String),
    Str(String),
    Op(&'static str),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Colon,
    Comma,
    Dot,
    Assign,
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Number(s) => format!("number {s}"),
            Tok::Str(_) => "string".into(),
            Tok::Op(o) => format!("'{o}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::Colon => "':'".into(),
            Tok::Comma => "','".into(),
            Tok::Dot => "'.'".into(),
            Tok::Assign => "'='".into(),
            Tok::Newline => "end of line".into(),
            Tok::Indent => "indent".into(),
            Tok::Dedent => "dedent".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, RuleSyntaxError> {
    let mut out = Vec::new();
    let mut indents: Vec<usize> = vec![0];
    let mut depth = 0usize; // bracket nesting; newlines inside brackets are ignored

    let lines: Vec<&str> = src.split('\n').collect();
    for (li, raw) in lines.iter().enumerate() {
        let line_no = li + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;

        if depth == 0 {
            let mut width = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t') {
                if chars[i] == '\t' {
                    return Err(RuleSyntaxError::Indentation {
                        line: line_no,
                        message: "tabs are not allowed in indentation".into(),
                    });
                }
                width += 1;
                i += 1;
            }
            if i == chars.len() || chars[i] == '#' {
                continue; // blank or comment-only line
            }
            let top = *indents.last().expect("indent stack is never empty");
            if width > top {
                indents.push(width);
                out.push(Token { tok: Tok::Indent, line: line_no, col: 1 });
            } else if width < top {
                while *indents.last().expect("non-empty") > width {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, line: line_no, col: 1 });
                }
                if *indents.last().expect("non-empty") != width {
                    return Err(RuleSyntaxError::Indentation {
                        line: line_no,
                        message: "unindent does not match any outer indentation level".into(),
                    });
                }
            }
        }

        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let push = |out: &mut Vec<Token>, tok: Tok| out.push(Token { tok, line: line_no, col });
            match c {
                ' ' | '\t' => {
                    i += 1;
                }
                '#' => break,
                '(' => {
                    depth += 1;
                    push(&mut out, Tok::LParen);
                    i += 1;
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    push(&mut out, Tok::RParen);
                    i += 1;
                }
                '{' => {
                    depth += 1;
                    push(&mut out, Tok::LBrace);
                    i += 1;
                }
                '}' => {
                    depth = depth.saturating_sub(1);
                    push(&mut out, Tok::RBrace);
                    i += 1;
                }
                ':' => {
                    push(&mut out, Tok::Colon);
                    i += 1;
                }
                ',' => {
                    push(&mut out, Tok::Comma);
                    i += 1;
                }
                '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                    push(&mut out, Tok::Dot);
                    i += 1;
                }
                '>' | '<' | '=' | '!' => {
                    let next = chars.get(i + 1).copied();
                    let (tok, len) = match (c, next) {
                        ('>', Some('=')) => (Tok::Op(">="), 2),
                        ('<', Some('=')) => (Tok::Op("<="), 2),
                        ('=', Some('=')) => (Tok::Op("=="), 2),
                        ('!', Some('=')) => (Tok::Op("!="), 2),
                        ('>', _) => (Tok::Op(">"), 1),
                        ('<', _) => (Tok::Op("<"), 1),
                        ('=', _) => (Tok::Assign, 1),
                        _ => {
                            return Err(RuleSyntaxError::Syntax {
                                line: line_no,
                                col,
                                expected: vec!["'!='".into()],
                                found: "'!'".into(),
                            })
                        }
                    };
                    push(&mut out, tok);
                    i += len;
                }
                '+' => {
                    push(&mut out, Tok::Op("+"));
                    i += 1;
                }
                '-' => {
                    push(&mut out, Tok::Op("-"));
                    i += 1;
                }
                '*' => {
                    push(&mut out, Tok::Op("*"));
                    i += 1;
                }
                '/' => {
                    push(&mut out, Tok::Op("/"));
                    i += 1;
                }
                '\'' | '"' => {
                    let quote = c;
                    let mut s = String::new();
                    i += 1;
                    loop {
                        match chars.get(i) {
                            None => {
                                return Err(RuleSyntaxError::Syntax {
                                    line: line_no,
                                    col,
                                    expected: vec!["closing quote".into()],
                                    found: "end of line".into(),
                                })
                            }
                            Some(&q) if q == quote => {
                                i += 1;
                                break;
                            }
                            Some('\\') => {
                                let esc = chars.get(i + 1).copied();
                                s.push(match esc {
                                    Some('n') => '\n',
                                    Some('t') => '\t',
                                    Some('r') => '\r',
                                    Some('\\') => '\\',
                                    Some('\'') => '\'',
                                    Some('"') => '"',
                                    _ => {
                                        return Err(RuleSyntaxError::Syntax {
                                            line: line_no,
                                            col: i + 1,
                                            expected: vec!["escape sequence".into()],
                                            found: format!("{esc:?}"),
                                        })
                                    }
                                });
                                i += 2;
                            }
                            Some(&ch) => {
                                s.push(ch);
                                i += 1;
                            }
                        }
                    }
                    push(&mut out, Tok::Str(s));
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let start = i;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i < chars.len() && chars[i] == '.' {
                        i += 1;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let text: String = chars[start..i].iter().collect();
                    push(&mut out, Tok::Number(text));
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    let text: String = chars[start..i].iter().collect();
                    push(&mut out, Tok::Ident(text));
                }
                other => {
                    return Err(RuleSyntaxError::Syntax {
                        line: line_no,
                        col,
                        expected: vec!["token".into()],
                        found: format!("{other:?}"),
                    })
                }
            }
        }
        if depth == 0 && out.last().is_some_and(|t| t.tok != Tok::Newline && t.tok != Tok::Indent && t.tok != Tok::Dedent) {
            out.push(Token { tok: Tok::Newline, line: line_no, col: chars.len() + 1 });
        }
    }
    let last_line = lines.len();
    if depth > 0 && out.last().is_some_and(|t| t.tok != Tok::Newline) {
        out.push(Token { tok: Tok::Newline, line: last_line, col: 1 });
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, line: last_line, col: 1 });
    }
    out.push(Token { tok: Tok::Eof, line: last_line, col: 1 });
    Ok(out)
}
