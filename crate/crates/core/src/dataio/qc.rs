//! Quality control for annotated expressions.

use serde::{Deserialize, Serialize};

pub const MIN_WORDS: usize = 5;

pub const RULE_MIN_WORDS: &str = "a-min-words";
pub const RULE_ASCII: &str = "b-ascii-only";
pub const RULE_NONEMPTY: &str = "c-nonempty";

/// Rules enforced by the annotation client in the original collection
/// setup. They have no server-side definition and are not checked here.
pub const UNIMPLEMENTED_RULES: [&str; 2] = ["spellcheck", "no-copy-paste"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcViolation {
    pub rule: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcReport {
    pub pass: bool,
    pub violations: Vec<QcViolation>,
}

impl QcReport {
    /// Violations joined into one line, e.g. for error messages.
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("rule {}: {}", v.rule, v.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub fn validate_expression(text: &str) -> QcReport {
    let mut violations = Vec::new();
    let mut add = |rule: &str, message: String| {
        violations.push(QcViolation {
            rule: rule.to_string(),
            message,
        })
    };
    if text.trim().is_empty() {
        add(RULE_NONEMPTY, "expression is empty".into());
    }
    let words = text.split_whitespace().count();
    if words < MIN_WORDS {
        add(RULE_MIN_WORDS, format!("{words} words, at least {MIN_WORDS} required"));
    }
    if let Some(c) = text.chars().find(|c| !c.is_ascii()) {
        add(RULE_ASCII, format!("non-ASCII character {c:?}"));
    }
    QcReport {
        pass: violations.is_empty(),
        violations,
    }
}
