use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A finding from flow validation or rule checking.
///
/// `target` names the offending element: `flow`, `brick:<id>`,
/// `connection:<from>.<port>-><to>.<port>`, `signal:<name>`, or an IR path
/// such as `stmt[0].branch[1].body[0]` for rule programs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    // Alphabetical, so the struct and its `serde_json::Value` print identically.
    pub code: String,
    pub message: String,
    pub severity: Severity,
    pub target: String,
}

impl Diagnostic {
    pub fn error(code: &str, target: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code: code.to_string(),
            target: target.into(),
            message: message.into(),
        }
    }

    pub fn warning(code: &str, target: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code: code.to_string(),
            target: target.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostic serializes")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}: {}", self.code, self.target, self.message)
    }
}

/// Render diagnostics as JSON lines (one object per line, trailing newline).
pub fn render_jsonl(diags: &[Diagnostic]) -> String {
    let mut out = String::new();
    for d in diags {
        out.push_str(&d.to_json_line());
        out.push('\n');
    }
    out
}

pub fn render_text(diags: &[Diagnostic]) -> String {
    let mut out = String::new();
    for d in diags {
        out.push_str(&d.to_string());
        out.push('\n');
    }
    out
}
