//! Invariant checks for every library module, runnable from the CLI.
//!
//! Each check measures one quantity and compares it with a tolerance; the
//! report lists every check with its measurement. Checks are independent and
//! run concurrently; each is single-threaded and seeded.

pub mod blr;
pub mod conjugate;
pub mod estimators;
pub mod expfam;
pub mod fd;
pub mod optimizers;
pub mod problems;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Check {
    /// Passes when `measured <= tolerance`; NaN fails.
    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured, tolerance, Relation::AtMost, measured <= tolerance)
    }

    /// Passes when `measured >= tolerance`; NaN fails.
    pub fn at_least(name: &str, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured, tolerance, Relation::AtLeast, measured >= tolerance)
    }

    fn new(name: &str, measured: f64, tolerance: f64, relation: Relation, passed: bool) -> Self {
        Self { suite: "", name: name.to_string(), measured, tolerance, relation, passed, note: String::new() }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        write!(
            f,
            "{} {}::{} measured {:.3e} {op} {:.1e}",
            if self.passed { "ok  " } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.tolerance
        )?;
        if !self.note.is_empty() {
            write!(f, " ({})", self.note)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Expfam,
    Estimators,
    Blr,
    Optimizers,
    Conjugate,
    Problems,
    All,
}

impl Suite {
    pub const MODULES: [Suite; 6] =
        [Suite::Expfam, Suite::Estimators, Suite::Blr, Suite::Optimizers, Suite::Conjugate, Suite::Problems];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Expfam => "expfam",
            Suite::Estimators => "estimators",
            Suite::Blr => "blr",
            Suite::Optimizers => "optimizers",
            Suite::Conjugate => "conjugate",
            Suite::Problems => "problems",
            Suite::All => "all",
        }
    }

    fn checks(self) -> Vec<CheckFn> {
        match self {
            Suite::Expfam => expfam::checks(),
            Suite::Estimators => estimators::checks(),
            Suite::Blr => blr::checks(),
            Suite::Optimizers => optimizers::checks(),
            Suite::Conjugate => conjugate::checks(),
            Suite::Problems => problems::checks(),
            Suite::All => unreachable!("expanded by the caller"),
        }
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Suite::MODULES
            .into_iter()
            .chain([Suite::All])
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expfam, estimators, blr, optimizers, conjugate, problems, all)"))
    }
}

/// A named check; a library error counts as a failure.
pub type CheckFn = (&'static str, fn() -> blrkit::Result<Check>);

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub suite: String,
    pub passed: bool,
    pub elapsed_ms: f64,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

fn run_one(suite: Suite, (name, f): CheckFn) -> Check {
    let mut c = match f() {
        Ok(c) => c,
        Err(e) => Check::at_most(name, f64::NAN, 0.0).with_note(format!("error: {e}")),
    };
    c.suite = suite.as_str();
    c.name = name.to_string();
    c
}

/// Runs every check of `suite` (all modules for [`Suite::All`]).
pub fn verify(suite: Suite) -> Report {
    let start = Instant::now();
    let suites: Vec<Suite> = if suite == Suite::All { Suite::MODULES.to_vec() } else { vec![suite] };
    let jobs: Vec<(Suite, CheckFn)> = suites.iter().flat_map(|s| s.checks().into_iter().map(move |c| (*s, c))).collect();
    let checks: Vec<Check> = jobs.into_par_iter().map(|(s, c)| run_one(s, c)).collect();
    Report {
        suite: suite.as_str().to_string(),
        passed: checks.iter().all(|c| c.passed),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        checks,
    }
}
