//! Exhaustive check of fast-path recovery.
//!
//! Enumerates every ballot-0 vote configuration in which `p1` fast-decided a
//! value `v` (its own proposal, backed by `n - e - 1` explicit votes), every
//! `(n - f)`-quorum of 1B replies, and every coordinator in that quorum, and
//! asks [`compute_proposal`] which value to re-propose. Any answer other than
//! `v` is a counterexample. Deciding processes in the quorum report `v`.
//!
//! Vote rules per variant:
//! - task: every process votes, either for its own input or for another
//!   process's input that is at least as large;
//! - object: a process with a proposal votes for it or for an equal value
//!   proposed by someone else; a process without one may not have voted, or
//!   voted for anyone's proposal.
//!
//! Processes are interchangeable in [`compute_proposal`], so fixing the
//! decider to `p1` loses nothing.

use std::collections::BTreeSet;
use std::fmt;

use itertools::Itertools;

use super::{CheckError, Stats, Verdict, Witness};
use crate::exec::Exec;
use crate::model::{Ballot, Config, OneB, ProcessId, Value, Variant};
use crate::protocol::compute_proposal;

/// Largest system size the oracle enumerates.
pub const MAX_ORACLE_N: usize = 8;

/// A fast decision that [`compute_proposal`] fails to recover.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleCounterexample {
    pub cfg: Config,
    /// Value `p1` fast-decided.
    pub decided: Value,
    pub initials: Vec<Value>,
    /// Ballot-0 vote of each process as (value, proposer).
    pub votes: Vec<Option<(Value, ProcessId)>>,
    pub quorum: Vec<ProcessId>,
    pub coordinator: ProcessId,
    pub returned: Option<Value>,
}

impl OracleCounterexample {
    pub fn replies(&self) -> Vec<(ProcessId, OneB)> {
        replies(&self.quorum, &self.initials, &self.votes, self.decided)
    }

    /// Recomputes the coordinator's choice.
    pub fn replay(&self) -> Option<Value> {
        let quorum: BTreeSet<_> = self.quorum.iter().copied().collect();
        compute_proposal(
            &self.replies(),
            &quorum,
            &self.cfg,
            self.initials[self.coordinator.slot()],
        )
        .expect("well-formed reply set")
    }
}

impl fmt::Display for OracleCounterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} n={} e={} f={}: p1 fast-decided {}",
            self.cfg.variant, self.cfg.n, self.cfg.e, self.cfg.f, self.decided
        )?;
        for (i, (init, vote)) in self.initials.iter().zip(&self.votes).enumerate() {
            let vote = vote.map_or_else(|| "none".to_string(), |(v, p)| format!("({v},{p})"));
            writeln!(f, "  p{}: initial {init}, vote {vote}", i + 1)?;
        }
        let q = self.quorum.iter().map(ToString::to_string).join(",");
        let got = self.returned.map_or_else(|| "nothing".to_string(), |v| v.to_string());
        write!(
            f,
            "  quorum {{{q}}} with coordinator {} recovers {got}",
            self.coordinator
        )
    }
}

fn replies(
    quorum: &[ProcessId],
    initials: &[Value],
    votes: &[Option<(Value, ProcessId)>],
    v: Value,
) -> Vec<(ProcessId, OneB)> {
    quorum
        .iter()
        .map(|&q| {
            let vote = votes[q.slot()];
            (
                q,
                OneB {
                    ballot: Ballot(1),
                    vbal: Ballot::FAST,
                    val: vote.map(|x| x.0),
                    val_proposer: vote.map(|x| x.1),
                    decided: (q.index() == 1).then_some(v),
                    initial: initials[q.slot()],
                },
            )
        })
        .collect()
}

/// Votes process `i` may hold, excluding a vote for `(v, p1)`.
fn other_votes(cfg: &Config, initials: &[Value], i: usize) -> Vec<Option<(Value, ProcessId)>> {
    let me = initials[i];
    let mut out = Vec::new();
    match cfg.variant {
        Variant::Task => out.push(Some((me, ProcessId::new(i + 1)))),
        Variant::Object if me.is_bottom() => out.push(None),
        Variant::Object => out.push(Some((me, ProcessId::new(i + 1)))),
    }
    for (j, &theirs) in initials.iter().enumerate() {
        if j == i || j == 0 || theirs.is_bottom() {
            continue;
        }
        let allowed = match cfg.variant {
            Variant::Task => theirs >= me,
            Variant::Object => me.is_bottom() || theirs == me,
        };
        if allowed {
            out.push(Some((theirs, ProcessId::new(j + 1))));
        }
    }
    out
}

fn may_vote_for_decider(cfg: &Config, mine: Value, v: Value) -> bool {
    match cfg.variant {
        Variant::Task => v >= mine,
        Variant::Object => mine.is_bottom() || mine == v,
    }
}

struct JobResult {
    cases: u64,
    counterexamples: u64,
    first: Option<OracleCounterexample>,
}

/// All configurations sharing one assignment of initial values.
fn explore(cfg: &Config, initials: Vec<Value>, quorums: &[Vec<ProcessId>]) -> JobResult {
    let n = cfg.n;
    let v = initials[0];
    let mut result = JobResult {
        cases: 0,
        counterexamples: 0,
        first: None,
    };
    let backers: Vec<usize> = (1..n).filter(|&i| may_vote_for_decider(cfg, initials[i], v)).collect();
    // Processes outside the fast quorum: any `<= e` of the others, and every
    // process that could not have voted for p1.
    let forced: Vec<usize> = (1..n).filter(|i| !backers.contains(i)).collect();
    if forced.len() > cfg.e {
        return result;
    }
    let choices: Vec<Vec<Option<(Value, ProcessId)>>> = (0..n).map(|i| other_votes(cfg, &initials, i)).collect();
    for extra in 0..=(cfg.e - forced.len()) {
        for chosen in backers.iter().copied().combinations(extra) {
            let outside: Vec<usize> = forced.iter().copied().chain(chosen).collect();
            let options = outside.iter().map(|&i| choices[i].iter().copied());
            for assignment in options.multi_cartesian_product() {
                let mut votes: Vec<Option<(Value, ProcessId)>> = vec![Some((v, ProcessId::new(1))); n];
                for (&i, &vote) in outside.iter().zip(&assignment) {
                    votes[i] = vote;
                }
                check_config(cfg, &initials, &votes, quorums, &mut result);
            }
        }
    }
    result
}

fn check_config(
    cfg: &Config,
    initials: &[Value],
    votes: &[Option<(Value, ProcessId)>],
    quorums: &[Vec<ProcessId>],
    result: &mut JobResult,
) {
    let v = initials[0];
    for quorum in quorums {
        let reply_set = replies(quorum, initials, votes, v);
        let qset: BTreeSet<ProcessId> = quorum.iter().copied().collect();
        let coordinator_inputs: BTreeSet<(Value, ProcessId)> =
            quorum.iter().map(|&c| (initials[c.slot()], c)).collect();
        let mut tried = BTreeSet::new();
        for (own, c) in coordinator_inputs {
            if !tried.insert(own) {
                continue;
            }
            result.cases += 1;
            let got = compute_proposal(&reply_set, &qset, cfg, own).expect("well-formed reply set");
            if got != Some(v) {
                result.counterexamples += 1;
                result.first.get_or_insert_with(|| OracleCounterexample {
                    cfg: cfg.clone(),
                    decided: v,
                    initials: initials.to_vec(),
                    votes: votes.to_vec(),
                    quorum: quorum.clone(),
                    coordinator: c,
                    returned: got,
                });
            }
        }
    }
}

/// Passes iff every fast decision is recovered by every quorum.
pub fn lemma_oracle(cfg: &Config) -> Result<Verdict, CheckError> {
    lemma_oracle_with(cfg, Exec::default())
}

pub fn lemma_oracle_with(cfg: &Config, exec: Exec) -> Result<Verdict, CheckError> {
    cfg.validate()?;
    if cfg.n > MAX_ORACLE_N {
        return Err(CheckError::TooLarge {
            what: "oracle system size",
            size: cfg.n as u64,
            limit: MAX_ORACLE_N as u64,
        });
    }
    let quorums: Vec<Vec<ProcessId>> = cfg.processes().combinations(cfg.slow_quorum()).collect();
    let per_other: Vec<Value> = match cfg.variant {
        Variant::Task => cfg.value_domain.clone(),
        Variant::Object => std::iter::once(Value::Bottom)
            .chain(cfg.value_domain.iter().copied())
            .collect(),
    };
    let mut jobs = Vec::new();
    for &v in &cfg.value_domain {
        for rest in std::iter::repeat_n(per_other.iter().copied(), cfg.n - 1).multi_cartesian_product() {
            jobs.push(std::iter::once(v).chain(rest).collect::<Vec<Value>>());
        }
    }
    let results = exec.map(jobs, |initials| explore(cfg, initials, &quorums));
    let mut stats = Stats::default();
    let mut first = None;
    for r in results {
        stats.cases += r.cases;
        stats.counterexamples += r.counterexamples;
        if first.is_none() {
            first = r.first;
        }
    }
    let property = "fast-path-recovery";
    Ok(match first {
        Some(cx) => {
            let detail = format!(
                "{} of {} cases lose the fast decision; first:\n{cx}",
                stats.counterexamples, stats.cases
            );
            Verdict::fail(property, detail, Witness::Votes(Box::new(cx)), stats)
        }
        None => Verdict::pass(
            property,
            format!("all {} cases recover the fast decision", stats.cases),
            stats,
        ),
    })
}

/// The oracle passes at `n` and fails at `n - 1`.
pub fn tightness(at: &Config) -> Result<Verdict, CheckError> {
    let tight = lemma_oracle(at)?;
    let below_cfg = Config::below_bound(at.n - 1, at.e, at.f, at.variant)?.with_domain(at.value_domain.clone())?;
    let below = lemma_oracle(&below_cfg)?;
    let mut stats = tight.stats.clone();
    stats.merge(&below.stats);
    let property = "recovery-tightness";
    let detail = format!(
        "n={}: {} counterexamples; n={}: {} counterexamples",
        at.n,
        tight.stats.counterexamples,
        at.n - 1,
        below.stats.counterexamples
    );
    Ok(match (tight.passed, below.passed, tight.witness, below.witness) {
        (true, false, _, _) => Verdict::pass(property, detail, stats),
        (false, _, Some(w), _) => Verdict::fail(property, detail, w, stats),
        (_, true, _, _) => Verdict {
            property: property.into(),
            passed: false,
            detail: format!("{detail} (no counterexample below the bound)"),
            witness: None,
            stats,
        },
        _ => unreachable!("failing oracle verdicts carry a witness"),
    })
}
