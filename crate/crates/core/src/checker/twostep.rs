//! Constructive two-step checks.
//!
//! For each faulty set `E` and each relevant proposal configuration, the
//! check builds the synchronous `E`-faulty run in which the favored process's
//! messages arrive first everywhere, and looks for a decision at `2Δ`.

use itertools::Itertools;

use super::properties::{check_agreement, check_validity};
use super::{CheckError, Stats, Verdict, Witness};
use crate::exec::Exec;
use crate::model::{Config, ProcessId, Value, Variant};
use crate::simnet::{run, Proposals, ProposeCall, Scenario};

/// Largest number of simulated runs a two-step check may need.
pub const MAX_TWO_STEP_RUNS: u64 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Item {
    /// Some process decides by 2Δ.
    Any,
    /// The favored process decides by 2Δ.
    Favored,
}

struct Case {
    scenario: Scenario,
    favored: ProcessId,
    item: Item,
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn ensure_variant(cfg: &Config, expected: Variant) -> Result<(), CheckError> {
    cfg.validate()?;
    if cfg.variant != expected {
        return Err(CheckError::WrongVariant { expected });
    }
    Ok(())
}

fn guard(runs: u64) -> Result<(), CheckError> {
    if runs > MAX_TWO_STEP_RUNS {
        return Err(CheckError::TooLarge {
            what: "two-step runs",
            size: runs,
            limit: MAX_TWO_STEP_RUNS,
        });
    }
    Ok(())
}

fn evaluate(property: &str, cfg: &Config, cases: Vec<Case>, item1: u64, exec: Exec) -> Result<Verdict, CheckError> {
    let deadline = 2 * cfg.delta;
    let outcomes = exec.map(
        cases,
        |case| -> Result<(Stats, Option<(String, Scenario)>), CheckError> {
            let trace = run(&case.scenario)?;
            let mut stats = Stats {
                runs: 1,
                ..Stats::default()
            };
            let decided_at = match case.item {
                Item::Any => trace.decisions().iter().map(|d| d.2).min(),
                Item::Favored => trace.decision_of(case.favored).map(|d| d.1),
            };
            if let Some(t) = decided_at {
                stats.note_decision(t);
            }
            let mut failure = match decided_at {
                Some(t) if t <= deadline => None,
                other => Some(format!(
                    "{:?} case with favored {}: first relevant decision at {:?}, expected by {deadline}",
                    case.item, case.favored, other
                )),
            };
            for v in [check_agreement(&trace), check_validity(&trace)] {
                if failure.is_none() && !v.passed {
                    failure = Some(v.detail);
                }
            }
            Ok((stats, failure.map(|d| (d, case.scenario))))
        },
    );
    let mut stats = Stats::default();
    let mut first_failure = None;
    for outcome in outcomes {
        let (s, failure) = outcome?;
        stats.merge(&s);
        if let Some(f) = failure {
            stats.counterexamples += 1;
            first_failure.get_or_insert(f);
        }
    }
    stats.cases = item1;
    Ok(match first_failure {
        Some((detail, scenario)) => Verdict::fail(property, detail, Witness::Run(Box::new(scenario)), stats),
        None => Verdict::pass(
            property,
            format!(
                "{item1} item-1 cases and {} item-2 cases decide by {deadline}",
                stats.runs - item1
            ),
            stats,
        ),
    })
}

/// Every `e`-faulty synchronous configuration has a two-step run, and when
/// all correct processes share an input, each of them has one.
pub fn check_two_step_task(cfg: &Config) -> Result<Verdict, CheckError> {
    check_two_step_task_with(cfg, Exec::default())
}

pub fn check_two_step_task_with(cfg: &Config, exec: Exec) -> Result<Verdict, CheckError> {
    ensure_variant(cfg, Variant::Task)?;
    let (n, e) = (cfg.n as u64, cfg.e as u64);
    let d = cfg.value_domain.len() as u64;
    let subsets = binomial(n, e);
    let item1 = (n - e)
        .try_into()
        .ok()
        .and_then(|k: u32| d.checked_pow(k))
        .and_then(|c| c.checked_mul(subsets))
        .unwrap_or(u64::MAX);
    guard(item1.saturating_add(subsets * d * (n - e)))?;
    let mut cases = Vec::new();
    for faulty in cfg.processes().combinations(cfg.e) {
        let correct: Vec<ProcessId> = cfg.processes().filter(|p| !faulty.contains(p)).collect();
        for assignment in std::iter::repeat_n(cfg.value_domain.iter().copied(), correct.len()).multi_cartesian_product()
        {
            let mut inputs: Vec<Option<Value>> = vec![None; cfg.n];
            for (p, v) in correct.iter().zip(&assignment) {
                inputs[p.slot()] = Some(*v);
            }
            let top = assignment.iter().copied().max().expect("at least one correct process");
            let favored = correct[assignment.iter().position(|&v| v == top).expect("max exists")];
            let scenario = Scenario::synchronous(cfg, &faulty, favored, Proposals::Inputs(inputs.clone()))?;
            cases.push(Case {
                scenario,
                favored,
                item: Item::Any,
            });
            if assignment.iter().all(|&v| v == top) {
                for &p in &correct {
                    let scenario = Scenario::synchronous(cfg, &faulty, p, Proposals::Inputs(inputs.clone()))?;
                    cases.push(Case {
                        scenario,
                        favored: p,
                        item: Item::Favored,
                    });
                }
            }
        }
    }
    evaluate("two-step-task", cfg, cases, item1, exec)
}

/// For every `e`-faulty set, value `v` and correct `p`: the run where only
/// `p` proposes `v` is two-step for `p`, and so is the run where every
/// correct process proposes `v` and `p`'s proposal arrives first.
pub fn check_two_step_object(cfg: &Config) -> Result<Verdict, CheckError> {
    check_two_step_object_with(cfg, Exec::default())
}

pub fn check_two_step_object_with(cfg: &Config, exec: Exec) -> Result<Verdict, CheckError> {
    ensure_variant(cfg, Variant::Object)?;
    let (n, e) = (cfg.n as u64, cfg.e as u64);
    let item1 = binomial(n, e) * cfg.value_domain.len() as u64 * (n - e);
    guard(2 * item1)?;
    let mut cases = Vec::new();
    for faulty in cfg.processes().combinations(cfg.e) {
        let correct: Vec<ProcessId> = cfg.processes().filter(|p| !faulty.contains(p)).collect();
        for &value in &cfg.value_domain {
            for &p in &correct {
                let solo = vec![ProposeCall { time: 0, pid: p, value }];
                let scenario = Scenario::synchronous(cfg, &faulty, p, Proposals::Calls(solo))?;
                cases.push(Case {
                    scenario,
                    favored: p,
                    item: Item::Favored,
                });
                let all = correct
                    .iter()
                    .map(|&q| ProposeCall { time: 0, pid: q, value })
                    .collect();
                let scenario = Scenario::synchronous(cfg, &faulty, p, Proposals::Calls(all))?;
                cases.push(Case {
                    scenario,
                    favored: p,
                    item: Item::Favored,
                });
            }
        }
    }
    evaluate("two-step-object", cfg, cases, item1, exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(cfg: Config) -> Config {
        cfg.with_domain(vec![Value::Val(0), Value::Val(1)]).unwrap()
    }

    #[test]
    fn task_n3_counts() {
        let cfg = binary(Config::new(3, 1, 1, Variant::Task).unwrap());
        let v = check_two_step_task(&cfg).unwrap();
        assert!(v.passed, "{v}");
        assert_eq!(v.stats.cases, 3 * 4);
        // Item 2: per faulty set, two uniform configurations with two correct processes each.
        assert_eq!(v.stats.runs, 12 + 3 * 2 * 2);
        assert_eq!(v.stats.max_decision_time, Some(20));
    }

    #[test]
    fn object_n3() {
        let cfg = binary(Config::new(3, 1, 1, Variant::Object).unwrap());
        let v = check_two_step_object(&cfg).unwrap();
        assert!(v.passed, "{v}");
        assert_eq!(v.stats.cases, 3 * 2 * 2);
        assert_eq!(v.stats.min_decision_time, Some(20));
    }

    #[test]
    fn variant_mismatch_is_an_error() {
        let cfg = Config::new(3, 1, 1, Variant::Object).unwrap();
        assert!(matches!(
            check_two_step_task(&cfg),
            Err(CheckError::WrongVariant { .. })
        ));
    }

    #[test]
    fn oversized_enumeration_is_refused() {
        let domain = (0..40).map(Value::Val).collect();
        let cfg = Config::new(7, 1, 3, Variant::Task)
            .unwrap()
            .with_domain(domain)
            .unwrap();
        assert!(matches!(check_two_step_task(&cfg), Err(CheckError::TooLarge { .. })));
    }
}
