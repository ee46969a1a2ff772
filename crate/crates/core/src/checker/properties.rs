use std::collections::{BTreeMap, BTreeSet};

use super::{CheckError, Stats, Verdict, Witness};
use crate::model::{Ballot, Message, ProcessId, Value};
use crate::simnet::{Event, Payload, Trace};

fn witness(trace: &Trace) -> Witness {
    Witness::Run(Box::new(trace.scenario.clone()))
}

fn run_stats(trace: &Trace) -> Stats {
    let mut stats = Stats {
        runs: 1,
        ..Stats::default()
    };
    for (_, _, t) in trace.decisions() {
        stats.note_decision(t);
    }
    stats
}

/// No two processes decide differently, and no process is told to decide a
/// value other than the one it holds.
pub fn check_agreement(trace: &Trace) -> Verdict {
    let stats = run_stats(trace);
    let mut first: Option<(ProcessId, Value)> = None;
    for ev in &trace.events {
        if let Event::Decision { t, pid, value } = ev {
            match first {
                None => first = Some((*pid, *value)),
                Some((p, v)) if v != *value => {
                    let detail = format!("{p} decided {v} but {pid} decided {value} at {t}");
                    return Verdict::fail("agreement", detail, witness(trace), stats);
                }
                _ => {}
            }
        }
    }
    if let Some((t, pid, reason)) = trace.faults().find(|(_, _, r)| r.contains("received Decide")) {
        let detail = format!("{pid} at {t}: {reason}");
        return Verdict::fail("agreement", detail, witness(trace), stats);
    }
    Verdict::pass("agreement", "all decisions equal", stats)
}

/// Every decided value was proposed by some process.
pub fn check_validity(trace: &Trace) -> Verdict {
    let stats = run_stats(trace);
    let proposed = trace.scenario.proposed_values();
    for (pid, value, t) in trace.decisions() {
        if !proposed.contains(&value) {
            let detail = format!("{pid} decided {value} at {t}, which nobody proposed");
            return Verdict::fail("validity", detail, witness(trace), stats);
        }
    }
    Verdict::pass("validity", "every decision was proposed", stats)
}

/// Every process that never crashes decides by `bound`.
pub fn check_termination(trace: &Trace, bound: u64) -> Result<Verdict, CheckError> {
    let sc = &trace.scenario;
    if sc.horizon < bound {
        return Err(CheckError::HorizonTooShort {
            horizon: sc.horizon,
            bound,
        });
    }
    let mut stats = Stats {
        runs: 1,
        ..Stats::default()
    };
    let decisions: BTreeMap<ProcessId, u64> = trace.decisions().into_iter().map(|(p, _, t)| (p, t)).collect();
    for pid in sc.correct() {
        match decisions.get(&pid) {
            Some(&t) if t <= bound => {
                stats.note_decision(t);
                let latency = t.saturating_sub(sc.cfg.gst);
                stats.max_post_gst_latency = stats.max_post_gst_latency.max(Some(latency));
            }
            Some(&t) => {
                let detail = format!("{pid} decided at {t}, after the bound {bound}");
                return Ok(Verdict::fail("termination", detail, witness(trace), stats));
            }
            None => {
                let detail = format!("{pid} never decided (bound {bound})");
                return Ok(Verdict::fail("termination", detail, witness(trace), stats));
            }
        }
    }
    Ok(Verdict::pass(
        "termination",
        format!("all correct processes decided by {bound}"),
        stats,
    ))
}

/// Handlers rejected no input.
pub fn check_handler_faults(trace: &Trace) -> Verdict {
    let stats = run_stats(trace);
    match trace.faults().next() {
        Some((t, pid, reason)) => Verdict::fail(
            "handler-faults",
            format!("{pid} at {t}: {reason}"),
            witness(trace),
            stats,
        ),
        None => Verdict::pass("handler-faults", "no faults", stats),
    }
}

/// Once a value is chosen, every later-ballot 2A carries it.
///
/// A value is chosen at slow ballot `b` when `n - f` processes sent
/// `2B(b, v)`, and at the fast ballot when a process decides right on
/// receiving a `2B(0, v)`. Every `2A(b', v')` with `b' >= b` (any slow `b'`
/// for a fast choice) must have `v' = v`.
pub fn check_slow_path_safety(trace: &Trace) -> Verdict {
    let stats = run_stats(trace);
    let cfg = &trace.scenario.cfg;
    let mut slow: BTreeMap<(Ballot, Value), BTreeSet<ProcessId>> = BTreeMap::new();
    let mut fast: BTreeSet<Value> = BTreeSet::new();
    let mut two_as: Vec<(u64, ProcessId, Ballot, Value)> = Vec::new();
    for (i, ev) in trace.events.iter().enumerate() {
        if let Event::Decision { pid, value, .. } = ev {
            let after_fast_vote = i.checked_sub(1).map(|j| &trace.events[j]).is_some_and(|prev| {
                matches!(prev, Event::Delivered { to, payload: Payload::Protocol(Message::TwoB { ballot, value: v }), .. }
                    if to == pid && ballot.is_fast() && v == value)
            });
            if after_fast_vote {
                fast.insert(*value);
            }
            continue;
        }
        let Event::Sent {
            t,
            from,
            payload: Payload::Protocol(msg),
            ..
        } = ev
        else {
            continue;
        };
        match msg {
            Message::TwoB { ballot, value } if !ballot.is_fast() => {
                slow.entry((*ballot, *value)).or_default().insert(*from);
            }
            Message::TwoA { ballot, value } => two_as.push((*t, *from, *ballot, *value)),
            _ => {}
        }
    }
    let mut chosen: Vec<(Ballot, Value)> = slow
        .iter()
        .filter(|(_, voters)| voters.len() >= cfg.slow_quorum())
        .map(|(k, _)| *k)
        .collect();
    chosen.extend(fast.iter().map(|v| (Ballot::FAST, *v)));
    for (b, v) in &chosen {
        if let Some((t, from, b2, v2)) = two_as.iter().find(|(_, _, b2, v2)| b2 >= b && v2 != v) {
            let detail = format!("{v} chosen at ballot {b}, but {from} sent 2A({b2},{v2}) at {t}");
            return Verdict::fail("slow-path-safety", detail, witness(trace), stats);
        }
    }
    Verdict::pass(
        "slow-path-safety",
        format!("{} chosen ballots respected", chosen.len()),
        stats,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Config, Variant};
    use crate::simnet::{run, Proposals, Scenario};

    fn p(i: usize) -> ProcessId {
        ProcessId::new(i)
    }

    fn base_trace() -> Trace {
        let cfg = Config::new(3, 1, 1, Variant::Task).unwrap();
        let inputs = Proposals::Inputs(vec![Some(Value::Val(1)), Some(Value::Val(2)), None]);
        run(&Scenario::synchronous(&cfg, &[p(3)], p(2), inputs).unwrap()).unwrap()
    }

    fn with_decisions(ds: &[(usize, u32)]) -> Trace {
        let mut trace = base_trace();
        trace.events = ds
            .iter()
            .map(|&(i, v)| Event::Decision {
                t: 20,
                pid: p(i),
                value: Value::Val(v),
            })
            .collect();
        trace
    }

    #[test]
    fn agreement_examples() {
        assert!(check_agreement(&with_decisions(&[(1, 4), (2, 4)])).passed);
        let bad = check_agreement(&with_decisions(&[(1, 4), (2, 5)]));
        assert!(!bad.passed);
        assert!(bad.witness_scenario().is_some());
        assert!(check_agreement(&with_decisions(&[])).passed);
    }

    #[test]
    fn validity_examples() {
        assert!(check_validity(&with_decisions(&[(1, 2)])).passed);
        assert!(!check_validity(&with_decisions(&[(1, 3)])).passed);
        let cfg = Config::new(3, 1, 1, Variant::Object).unwrap();
        let sc = Scenario::random(&cfg, 1, vec![], Proposals::Calls(vec![])).unwrap();
        let trace = run(&sc).unwrap();
        assert!(trace.decisions().is_empty());
        assert!(check_validity(&trace).passed);
    }

    #[test]
    fn termination_examples() {
        let inputs = Proposals::Inputs(vec![Some(Value::Val(1)), Some(Value::Val(2)), Some(Value::Val(0))]);
        let sc = Scenario::synchronous(&Config::new(3, 0, 1, Variant::Task).unwrap(), &[], p(2), inputs).unwrap();
        let trace = run(&sc).unwrap();
        assert!(check_termination(&trace, 30).unwrap().passed);
        assert!(!check_termination(&trace, 20).unwrap().passed);
        assert!(check_termination(&trace, 10_000).is_err());
        // The crashed p3 never decides; that is fine.
        assert!(check_termination(&base_trace(), 30).unwrap().passed);
    }

    #[test]
    fn slow_path_scan_flags_a_conflicting_two_a() {
        let mut trace = base_trace();
        assert!(check_slow_path_safety(&trace).passed);
        trace.events.push(Event::Sent {
            t: 500,
            from: p(1),
            to: p(2),
            payload: Payload::Protocol(Message::TwoA {
                ballot: Ballot(4),
                value: Value::Val(1),
            }),
        });
        assert!(!check_slow_path_safety(&trace).passed);
    }
}
