//! Pass/fail bookkeeping for the acceptance run.

use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Debug, Default)]
pub struct Checklist {
    outcomes: Vec<Outcome>,
}

/// One criterion under evaluation; sub-checks are combined with AND.
pub struct Check {
    pass: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { pass: true, notes: Vec::new() }
    }

    /// Records a named sub-check and its evidence.
    pub fn expect(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        self.notes.push(if ok { what } else { format!("{what} [failed]") });
        self.pass &= ok;
    }

    pub fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

impl Checklist {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `body`, prints one PASS/FAIL line and keeps the outcome. An
    /// `Err` from the body counts as a failure.
    pub fn run<F>(&mut self, id: u32, name: &'static str, body: F)
    where
        F: FnOnce(&mut Check) -> Result<(), String>,
    {
        let start = Instant::now();
        let mut check = Check::new();
        if let Err(e) = body(&mut check) {
            check.expect(false, format!("error: {e}"));
        }
        let elapsed = start.elapsed();
        let outcome = Outcome {
            id,
            name,
            pass: check.pass,
            detail: check.notes.join("; "),
            elapsed,
        };
        println!(
            "{} criterion {:>2} {} ({:.2} s): {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.id,
            outcome.name,
            elapsed.as_secs_f64(),
            outcome.detail
        );
        self.outcomes.push(outcome);
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    pub fn failed_ids(&self) -> Vec<u32> {
        self.outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect()
    }
}

/// `|value - target| <= k * se`.
pub fn within_sigma(value: f64, target: f64, se: f64, k: f64) -> bool {
    (value - target).abs() <= k * se
}
