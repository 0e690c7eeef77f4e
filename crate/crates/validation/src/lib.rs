//! Pass/fail bookkeeping for the acceptance suite in `tests/acceptance.rs`.

use std::fmt;

/// One checked criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} | {} | {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Collects lines and echoes each one to stdout as it is recorded.
#[derive(Debug, Default)]
pub struct Report {
    lines: Vec<Line>,
}

impl Report {
    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        let line = Line { name: name.into(), pass, detail: detail.into() };
        println!("{line}");
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn failed(&self) -> Vec<&str> {
        self.lines.iter().filter(|l| !l.pass).map(|l| l.name.as_str()).collect()
    }

    pub fn summary(&self) -> String {
        format!("acceptance: {} of {} lines pass", self.lines.len() - self.failed().len(), self.lines.len())
    }
}
