//! Checker soundness: witnesses reproduce their failures, and the favored-first
//! construction agrees with a search over every sender order at n <= 4.

use std::collections::BTreeSet;

use itertools::Itertools;
use twostep_core::checker::{
    check_agreement, fuzz, lemma_oracle, reproduces, tightness, Witness, TERMINATION_SLACK_ROUNDS,
};
use twostep_core::model::{Config, Mutation, ProcessId, Value, Variant, DEFAULT_DELTA};
use twostep_core::simnet::{run, Proposals, Scenario};

#[test]
fn fuzz_witness_reproduces() {
    let cfg = Config::new(3, 1, 1, Variant::Task)
        .unwrap()
        .with_mutation(Some(Mutation::DropFastValGuard));
    let v = fuzz(&cfg, 0..500, 1).unwrap();
    assert!(!v.passed);
    let witness = v.witness.as_ref().unwrap();
    assert!(reproduces(witness, TERMINATION_SLACK_ROUNDS).unwrap());
    let scenario = v.witness_scenario().unwrap();
    let again = Scenario::from_toml(&scenario.to_toml()).unwrap();
    assert!(!check_agreement(&run(&again).unwrap()).passed);
}

#[test]
fn oracle_witness_replays_to_wrong_value() {
    let cfg = Config::below_bound(5, 2, 2, Variant::Task)
        .unwrap()
        .with_domain(vec![Value::Val(0), Value::Val(1)])
        .unwrap();
    let v = lemma_oracle(&cfg).unwrap();
    assert!(!v.passed);
    let Some(Witness::Votes(cx)) = &v.witness else {
        panic!("oracle failures carry vote witnesses");
    };
    assert_eq!(cx.replay(), cx.returned);
    assert_ne!(cx.returned, Some(cx.decided));
    assert!(reproduces(v.witness.as_ref().unwrap(), TERMINATION_SLACK_ROUNDS).unwrap());
}

#[test]
fn tightness_brackets_both_variants() {
    for variant in [Variant::Task, Variant::Object] {
        let at = Config::at_bound(2, 2, variant)
            .unwrap()
            .with_domain(vec![Value::Val(0), Value::Val(1)])
            .unwrap();
        let v = tightness(&at).unwrap();
        assert!(v.passed, "{variant}: {v}");
    }
}

/// Processes that decide by 2Δ under some order of senders.
fn two_step_deciders(cfg: &Config, faulty: &[ProcessId], inputs: &[Option<Value>]) -> BTreeSet<ProcessId> {
    let correct: Vec<ProcessId> = cfg.processes().filter(|p| !faulty.contains(p)).collect();
    let mut out = BTreeSet::new();
    for order in cfg.processes().permutations(cfg.n) {
        let favored = *order.iter().find(|p| correct.contains(p)).unwrap();
        let mut sc = Scenario::synchronous(cfg, faulty, favored, Proposals::Inputs(inputs.to_vec())).unwrap();
        sc.priority = order;
        let trace = run(&sc).unwrap();
        out.extend(
            trace
                .decisions()
                .iter()
                .filter(|d| d.2 <= 2 * DEFAULT_DELTA)
                .map(|d| d.0),
        );
    }
    out
}

#[test]
fn construction_matches_exhaustive_order_search() {
    for n in [3, 4] {
        let cfg = Config::new(n, 1, 1, Variant::Task).unwrap();
        for faulty in cfg.processes().combinations(1) {
            let correct: Vec<ProcessId> = cfg.processes().filter(|p| !faulty.contains(p)).collect();
            for assignment in std::iter::repeat_n(cfg.value_domain.clone(), correct.len()).multi_cartesian_product() {
                let mut inputs = vec![None; n];
                for (p, v) in correct.iter().zip(&assignment) {
                    inputs[p.slot()] = Some(*v);
                }
                let found = two_step_deciders(&cfg, &faulty, &inputs);
                assert!(!found.is_empty(), "n={n} E={faulty:?} {assignment:?}");
                let top = *assignment.iter().max().unwrap();
                let favored = correct[assignment.iter().position(|&v| v == top).unwrap()];
                let sc = Scenario::synchronous(&cfg, &faulty, favored, Proposals::Inputs(inputs.clone())).unwrap();
                let built = run(&sc).unwrap();
                assert_eq!(built.decision_of(favored).map(|d| d.1), Some(2 * DEFAULT_DELTA));
                assert!(found.contains(&favored));
                if assignment.iter().all(|&v| v == top) {
                    assert_eq!(found, correct.iter().copied().collect(), "n={n} E={faulty:?}");
                }
            }
        }
    }
}
