//! Property checks over traces, exhaustive two-step checks, the fast-path
//! recovery oracle, and a seeded fuzzer.
//!
//! Every check returns a [`Verdict`]. Failing verdicts carry a witness that
//! reproduces the failure: a scenario for run-based checks, or a vote
//! configuration for the oracle.

mod fuzz;
mod oracle;
mod properties;
mod twostep;

use std::fmt;

use thiserror::Error;

use crate::model::ModelError;
use crate::simnet::{Scenario, ScenarioError, SimError};

pub use fuzz::{fuzz, fuzz_with, random_scenario, reproduces, splice_scenario, FuzzOptions, TERMINATION_SLACK_ROUNDS};
pub use oracle::{lemma_oracle, lemma_oracle_with, tightness, OracleCounterexample, MAX_ORACLE_N};
pub use properties::{
    check_agreement, check_handler_faults, check_slow_path_safety, check_termination, check_validity,
};
pub use twostep::{
    check_two_step_object, check_two_step_object_with, check_two_step_task, check_two_step_task_with, MAX_TWO_STEP_RUNS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("this check needs the {expected} variant")]
    WrongVariant { expected: crate::model::Variant },
    #[error("{what}: {size} exceeds the enumeration limit {limit}")]
    TooLarge { what: &'static str, size: u64, limit: u64 },
    #[error("trace horizon {horizon} is shorter than the bound {bound}")]
    HorizonTooShort { horizon: u64, bound: u64 },
    #[error("crash budget {budget} exceeds f={f}")]
    CrashBudget { budget: usize, f: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub runs: u64,
    /// Enumerated cases (item-1 cases for two-step checks, vote
    /// configurations times quorums for the oracle).
    pub cases: u64,
    pub counterexamples: u64,
    pub min_decision_time: Option<u64>,
    pub max_decision_time: Option<u64>,
    /// Largest `decision time - GST` among correct processes.
    pub max_post_gst_latency: Option<u64>,
}

impl Stats {
    pub(crate) fn note_decision(&mut self, t: u64) {
        self.min_decision_time = Some(self.min_decision_time.map_or(t, |m| m.min(t)));
        self.max_decision_time = Some(self.max_decision_time.map_or(t, |m| m.max(t)));
    }

    pub(crate) fn merge(&mut self, other: &Stats) {
        self.runs += other.runs;
        self.cases += other.cases;
        self.counterexamples += other.counterexamples;
        if let Some(t) = other.min_decision_time {
            self.note_decision(t);
        }
        if let Some(t) = other.max_decision_time {
            self.note_decision(t);
        }
        self.max_post_gst_latency = self.max_post_gst_latency.max(other.max_post_gst_latency);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Witness {
    Run(Box<Scenario>),
    Votes(Box<OracleCounterexample>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub property: String,
    pub passed: bool,
    /// First violation, or a short summary when passing.
    pub detail: String,
    pub witness: Option<Witness>,
    pub stats: Stats,
}

impl Verdict {
    pub(crate) fn pass(property: &str, detail: impl Into<String>, stats: Stats) -> Self {
        Verdict {
            property: property.to_string(),
            passed: true,
            detail: detail.into(),
            witness: None,
            stats,
        }
    }

    pub(crate) fn fail(property: &str, detail: impl Into<String>, witness: Witness, stats: Stats) -> Self {
        Verdict {
            property: property.to_string(),
            passed: false,
            detail: detail.into(),
            witness: Some(witness),
            stats,
        }
    }

    pub fn witness_scenario(&self) -> Option<&Scenario> {
        match &self.witness {
            Some(Witness::Run(s)) => Some(s),
            _ => None,
        }
    }

    /// One `key=value` record per verdict; `detail` is quoted.
    pub fn record(&self) -> String {
        let opt = |x: Option<u64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
        format!(
            "property={} status={} runs={} cases={} counterexamples={} min_decision={} max_decision={} max_post_gst={} detail={:?}",
            self.property,
            if self.passed { "pass" } else { "fail" },
            self.stats.runs,
            self.stats.cases,
            self.stats.counterexamples,
            opt(self.stats.min_decision_time),
            opt(self.stats.max_decision_time),
            opt(self.stats.max_post_gst_latency),
            self.detail
        )
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.property, self.detail)
    }
}

/// Fixed-width table of verdicts.
pub fn summary_table(verdicts: &[Verdict]) -> String {
    let width = verdicts.iter().map(|v| v.property.len()).max().unwrap_or(8).max(8);
    let mut out = format!(
        "{:<width$}  {:<6}  {:>9}  {:>11}  {:>8}\n",
        "property", "status", "runs", "cases", "max dec"
    );
    for v in verdicts {
        out.push_str(&format!(
            "{:<width$}  {:<6}  {:>9}  {:>11}  {:>8}\n",
            v.property,
            if v.passed { "pass" } else { "FAIL" },
            v.stats.runs,
            v.stats.cases,
            v.stats.max_decision_time.map_or_else(|| "-".into(), |t| t.to_string()),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_table_formats() {
        let mut stats = Stats {
            runs: 3,
            ..Stats::default()
        };
        stats.note_decision(20);
        stats.note_decision(30);
        let v = Verdict::pass("agreement", "ok", stats);
        assert_eq!(
            v.record(),
            "property=agreement status=pass runs=3 cases=0 counterexamples=0 min_decision=20 max_decision=30 max_post_gst=- detail=\"ok\""
        );
        let table = summary_table(&[v]);
        assert!(table.lines().nth(1).unwrap().starts_with("agreement  pass"));
    }
}
