//! Seeded fuzzing over random and spliced schedules.
//!
//! Each seed yields two scenarios: one with random delays and crashes, and one
//! that first lets two or three groups run in isolation for a few rounds. Both
//! are checked for agreement, validity, handler faults, the chosen-value scan,
//! and termination by `GST + TERMINATION_SLACK_ROUNDS·Δ`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::properties::{
    check_agreement, check_handler_faults, check_slow_path_safety, check_termination, check_validity,
};
use super::{CheckError, Stats, Verdict, Witness};
use crate::exec::Exec;
use crate::model::{Config, ProcessId, Value, Variant};
use crate::simnet::{run, CrashAt, Proposals, ProposeCall, Scenario, Trace};

/// Termination bound after GST, in rounds of Δ.
pub const TERMINATION_SLACK_ROUNDS: u64 = 15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuzzOptions {
    pub seeds: Range<u64>,
    pub crash_budget: usize,
    pub termination_slack_rounds: u64,
    /// Largest GST drawn, in rounds of Δ.
    pub max_gst_rounds: u64,
    pub exec: Exec,
}

impl FuzzOptions {
    pub fn new(seeds: Range<u64>, crash_budget: usize) -> Self {
        FuzzOptions {
            seeds,
            crash_budget,
            termination_slack_rounds: TERMINATION_SLACK_ROUNDS,
            max_gst_rounds: 20,
            exec: Exec::default(),
        }
    }
}

fn random_value(cfg: &Config, rng: &mut ChaCha8Rng) -> Value {
    cfg.value_domain[rng.random_range(0..cfg.value_domain.len())]
}

fn pick_crashed(cfg: &Config, budget: usize, rng: &mut ChaCha8Rng) -> Vec<ProcessId> {
    let mut all: Vec<ProcessId> = cfg.processes().collect();
    all.shuffle(rng);
    all.truncate(rng.random_range(0..=budget));
    all.sort();
    all
}

/// Object variant: random `propose()` calls, with at least one correct caller
/// no later than `latest`.
fn random_calls(cfg: &Config, crashed: &[ProcessId], latest: u64, rng: &mut ChaCha8Rng) -> Vec<ProposeCall> {
    let mut calls = Vec::new();
    for pid in cfg.processes() {
        if rng.random_bool(0.5) {
            let time = rng.random_range(0..=latest);
            calls.push(ProposeCall {
                time,
                pid,
                value: random_value(cfg, rng),
            });
        }
    }
    if !calls.iter().any(|c| !crashed.contains(&c.pid)) {
        let correct: Vec<ProcessId> = cfg.processes().filter(|p| !crashed.contains(p)).collect();
        let pid = correct[rng.random_range(0..correct.len())];
        calls.push(ProposeCall {
            time: rng.random_range(0..=latest),
            pid,
            value: random_value(cfg, rng),
        });
        calls.sort_by_key(|c| c.pid);
    }
    calls
}

/// A random-delay scenario with up to `crash_budget` crashes before GST.
pub fn random_scenario(
    cfg: &Config,
    seed: u64,
    crash_budget: usize,
    max_gst_rounds: u64,
) -> Result<Scenario, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.delta;
    let gst = rng.random_range(0..=max_gst_rounds * d);
    let cfg = cfg.clone().with_gst(gst);
    let crashed = pick_crashed(&cfg, crash_budget, &mut rng);
    let crashes = crashed
        .iter()
        .map(|&pid| CrashAt {
            time: rng.random_range(0..=gst),
            pid,
        })
        .collect();
    let proposals = match cfg.variant {
        Variant::Task => Proposals::Inputs(cfg.processes().map(|_| Some(random_value(&cfg, &mut rng))).collect()),
        Variant::Object => Proposals::Calls(random_calls(&cfg, &crashed, gst, &mut rng)),
    };
    Ok(Scenario::random(&cfg, rng.random(), crashes, proposals)?)
}

/// Two or three isolated groups run for one to three rounds each; up to
/// `crash_budget` processes crash when the isolation ends.
pub fn splice_scenario(cfg: &Config, seed: u64, crash_budget: usize) -> Result<Scenario, CheckError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED_5EED_5EED);
    let d = cfg.delta;
    let mut order: Vec<ProcessId> = cfg.processes().collect();
    order.shuffle(&mut rng);
    let group_count = if cfg.n >= 5 && rng.random_bool(0.3) { 3 } else { 2 };
    let mut cuts: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.n - 1, group_count - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort();
    let mut groups = Vec::new();
    let mut start = 0;
    for cut in cuts.into_iter().chain(std::iter::once(cfg.n)) {
        let mut g = order[start..cut].to_vec();
        g.sort();
        groups.push(g);
        start = cut;
    }
    let rounds: Vec<u32> = groups.iter().map(|_| rng.random_range(1..=3)).collect();
    let crash_set = pick_crashed(cfg, crash_budget, &mut rng);
    let resume = rounds.iter().copied().max().unwrap_or(0) as u64 * d + 1;
    let gst = resume + rng.random_range(0..=10 * d);
    let cfg = cfg.clone().with_gst(gst);
    let proposals = match cfg.variant {
        Variant::Task => Proposals::Inputs(cfg.processes().map(|_| Some(random_value(&cfg, &mut rng))).collect()),
        Variant::Object => {
            let mut calls: Vec<ProposeCall> = groups
                .iter()
                .map(|g| ProposeCall {
                    time: 0,
                    pid: g[rng.random_range(0..g.len())],
                    value: random_value(&cfg, &mut rng),
                })
                .collect();
            if calls.iter().all(|c| crash_set.contains(&c.pid)) {
                let correct: Vec<ProcessId> = cfg.processes().filter(|p| !crash_set.contains(p)).collect();
                let pid = correct[rng.random_range(0..correct.len())];
                let value = random_value(&cfg, &mut rng);
                calls.retain(|c| c.pid != pid);
                calls.push(ProposeCall { time: 0, pid, value });
            }
            calls.sort_by_key(|c| c.pid);
            Proposals::Calls(calls)
        }
    };
    Ok(Scenario::splice(
        &cfg,
        groups,
        rounds,
        crash_set,
        rng.random(),
        proposals,
    )?)
}

/// Runs every per-trace check; returns merged stats and the first failure.
fn check_trace(trace: &Trace, slack: u64) -> Result<(Stats, Option<Verdict>), CheckError> {
    let bound = trace.scenario.cfg.gst + slack * trace.scenario.cfg.delta;
    let termination = check_termination(trace, bound)?;
    let stats = termination.stats.clone();
    let verdicts = [
        check_agreement(trace),
        check_validity(trace),
        check_slow_path_safety(trace),
        check_handler_faults(trace),
        termination,
    ];
    Ok((stats, verdicts.into_iter().find(|v| !v.passed)))
}

/// Fuzzes `cfg` over `seeds` with the default options.
pub fn fuzz(cfg: &Config, seeds: Range<u64>, crash_budget: usize) -> Result<Verdict, CheckError> {
    fuzz_with(cfg, &FuzzOptions::new(seeds, crash_budget))
}

pub fn fuzz_with(cfg: &Config, opts: &FuzzOptions) -> Result<Verdict, CheckError> {
    cfg.validate()?;
    if opts.crash_budget > cfg.f {
        return Err(CheckError::CrashBudget {
            budget: opts.crash_budget,
            f: cfg.f,
        });
    }
    let seeds: Vec<u64> = opts.seeds.clone().collect();
    let outcomes = opts
        .exec
        .map(seeds, |seed| -> Result<(Stats, Option<(u64, Verdict)>), CheckError> {
            let mut stats = Stats::default();
            let mut failure = None;
            let scenarios = [
                random_scenario(cfg, seed, opts.crash_budget, opts.max_gst_rounds)?,
                splice_scenario(cfg, seed, opts.crash_budget)?,
            ];
            for scenario in scenarios {
                let trace = run(&scenario)?;
                let (s, failed) = check_trace(&trace, opts.termination_slack_rounds)?;
                stats.merge(&s);
                if failure.is_none() {
                    failure = failed.map(|v| (seed, v));
                }
            }
            Ok((stats, failure))
        });
    let mut stats = Stats::default();
    let mut first: Option<(u64, Verdict)> = None;
    for outcome in outcomes {
        let (s, failure) = outcome?;
        stats.merge(&s);
        if let Some(f) = failure {
            stats.counterexamples += 1;
            first.get_or_insert(f);
        }
    }
    stats.cases = opts.seeds.end.saturating_sub(opts.seeds.start);
    Ok(match first {
        Some((seed, v)) => {
            let detail = format!("seed {seed}: {} violated: {}", v.property, v.detail);
            let witness = v
                .witness
                .unwrap_or_else(|| unreachable!("run-based failures carry a scenario"));
            Verdict::fail("fuzz", detail, witness, stats)
        }
        None => Verdict::pass(
            "fuzz",
            format!(
                "{} runs clean; max decision {} ticks after GST",
                stats.runs,
                stats.max_post_gst_latency.map_or_else(|| "-".into(), |t| t.to_string())
            ),
            stats,
        ),
    })
}

/// Replays a failing fuzz witness and reports whether it still fails.
pub fn reproduces(witness: &Witness, slack: u64) -> Result<bool, CheckError> {
    match witness {
        Witness::Run(sc) => {
            let trace = run(sc)?;
            Ok(check_trace(&trace, slack)?.1.is_some())
        }
        Witness::Votes(cx) => Ok(cx.replay() == cx.returned && cx.returned != Some(cx.decided)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mutation;

    #[test]
    fn generated_scenarios_are_valid_and_deterministic() {
        let cfg = Config::new(5, 2, 2, Variant::Object).unwrap();
        for seed in 0..50 {
            let a = random_scenario(&cfg, seed, 2, 20).unwrap();
            assert_eq!(a, random_scenario(&cfg, seed, 2, 20).unwrap());
            assert!(a.cfg.gst <= 200);
            let b = splice_scenario(&cfg, seed, 2).unwrap();
            assert_eq!(b, splice_scenario(&cfg, seed, 2).unwrap());
            assert!(!b.correct().is_empty());
        }
    }

    #[test]
    fn small_fuzz_is_clean() {
        let cfg = Config::new(3, 1, 1, Variant::Task).unwrap();
        let v = fuzz(&cfg, 0..100, 1).unwrap();
        assert!(v.passed, "{}", v.detail);
        assert_eq!(v.stats.runs, 200);
    }

    #[test]
    fn crash_budget_above_f_is_rejected() {
        let cfg = Config::new(3, 1, 1, Variant::Task).unwrap();
        assert!(matches!(fuzz(&cfg, 0..1, 2), Err(CheckError::CrashBudget { .. })));
    }

    #[test]
    fn mutant_witness_reproduces() {
        let cfg = Config::new(3, 1, 1, Variant::Task)
            .unwrap()
            .with_mutation(Some(Mutation::DropFastValGuard));
        let v = fuzz(&cfg, 0..1000, 1).unwrap();
        assert!(!v.passed);
        assert!(reproduces(v.witness.as_ref().unwrap(), TERMINATION_SLACK_ROUNDS).unwrap());
    }
}
