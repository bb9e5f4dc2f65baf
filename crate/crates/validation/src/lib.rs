//! Reporting harness for the acceptance tests.
//!
//! Each criterion collects failures and notes in a [`Check`], then prints one
//! `criterion N: PASS|FAIL` line straight to stderr (visible with or without
//! `--nocapture`) and asserts. Criteria hold [`serial`] so wall-clock budgets
//! are measured without competition from each other.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

static SERIAL: Mutex<()> = Mutex::new(());

pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Default)]
pub struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn expect(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    /// Records `got` and requires `|got - want| <= tol`.
    pub fn near(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.notes.push(format!("{name}={got:.6}"));
        self.expect(
            (got - want).abs() <= tol,
            format!("{name}={got} not within {tol} of {want}"),
        );
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn within(&mut self, what: &str, elapsed: Duration, budget: Duration) {
        self.notes.push(format!("{what} {:.2}s", elapsed.as_secs_f64()));
        self.expect(elapsed < budget, format!("{what} took {elapsed:?}, budget {budget:?}"));
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn report(&self, id: u32, title: &str) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let mut line = format!("criterion {id}: {verdict} {title} [{}]", self.notes.join(", "));
        for f in &self.failures {
            line.push_str(&format!("\n    - {f}"));
        }
        line
    }

    /// Prints the report and panics if any expectation failed.
    pub fn finish(self, id: u32, title: &str) {
        let _ = writeln!(std::io::stderr(), "{}", self.report(id, title));
        assert!(self.passed(), "criterion {id} failed: {:?}", self.failures);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_lists_failures_under_the_verdict() {
        let mut c = Check::new();
        c.near("x", 1.0, 1.0, 0.0);
        c.expect(false, "broken");
        let text = c.report(3, "demo");
        assert!(text.starts_with("criterion 3: FAIL demo [x=1.000000]"));
        assert!(text.ends_with("\n    - broken"));
    }

    #[test]
    fn empty_check_passes() {
        let c = Check::new();
        assert!(c.passed());
        assert!(c.report(1, "t").contains("PASS"));
        c.finish(1, "t");
    }
}
