//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use twostep_core::checker::{
    check_agreement, check_two_step_object, check_two_step_task, fuzz, lemma_oracle, random_scenario, splice_scenario,
    Verdict, TERMINATION_SLACK_ROUNDS,
};
use twostep_core::model::{required_n, Config, Mutation, Value, Variant, DEFAULT_DELTA};
use twostep_core::omega::OmegaMode;
use twostep_core::simnet::{replay, run};

type Outcome = Result<String, String>;

fn binary() -> Vec<Value> {
    vec![Value::Val(0), Value::Val(1)]
}

fn choose(n: u64, k: u64) -> u64 {
    (1..=k).map(|i| (n + 1 - i) as f64 / i as f64).product::<f64>().round() as u64
}

/// Smallest n accepted by the quorum conditions, found by search.
fn smallest_n(e: usize, f: usize, variant: Variant) -> usize {
    let fast_slack = match variant {
        Variant::Task => 0,
        Variant::Object => 1,
    };
    (1..)
        .find(|&n| n + fast_slack >= 2 * e + f && n > 2 * f)
        .expect("some n qualifies")
}

fn bounds_table() -> Outcome {
    let mut rows = 0;
    for e in 1..=4 {
        for f in 1..=4 {
            for variant in [Variant::Task, Variant::Object] {
                let got = required_n(e, f, variant);
                if e > f {
                    if got.is_ok() {
                        return Err(format!("e={e} > f={f} accepted for {variant}"));
                    }
                    continue;
                }
                let want = smallest_n(e, f, variant);
                if got != Ok(want) {
                    return Err(format!("{variant} e={e} f={f}: got {got:?}, want {want}"));
                }
                rows += 1;
            }
        }
    }
    let pinned = (required_n(2, 2, Variant::Task), required_n(2, 2, Variant::Object));
    if pinned != (Ok(6), Ok(5)) {
        return Err(format!("(e,f)=(2,2) gives {pinned:?}"));
    }
    Ok(format!("{rows} grid cells match; (2,2) -> task 6, object 5"))
}

fn two_step(variant: Variant, points: &[(usize, usize, usize)]) -> Outcome {
    let two_delta = 2 * DEFAULT_DELTA;
    let mut summary = Vec::new();
    for &(e, f, n) in points {
        let cfg = Config::new(n, e, f, variant)
            .and_then(|c| c.with_domain(binary()))
            .map_err(|err| err.to_string())?;
        let v = match variant {
            Variant::Task => check_two_step_task(&cfg),
            Variant::Object => check_two_step_object(&cfg),
        }
        .map_err(|err| err.to_string())?;
        if !v.passed {
            return Err(format!("n={n} e={e} f={f}: {}", v.detail));
        }
        let item1 = match variant {
            Variant::Task => 2u64.pow((n - e) as u32) * choose(n as u64, e as u64),
            Variant::Object => choose(n as u64, e as u64) * 2 * (n - e) as u64,
        };
        if v.stats.cases != item1 {
            return Err(format!("n={n}: {} item-1 cases, expected {item1}", v.stats.cases));
        }
        let times = (v.stats.min_decision_time, v.stats.max_decision_time);
        if times != (Some(two_delta), Some(two_delta)) {
            return Err(format!("n={n}: decision times {times:?}, expected exactly {two_delta}"));
        }
        summary.push(format!("n={n}:{}+{}", item1, v.stats.runs - item1));
    }
    Ok(format!(
        "all decide at exactly 2Δ; item-1+item-2 runs {}",
        summary.join(" ")
    ))
}

fn oracle_cfg(n: usize, e: usize, f: usize, variant: Variant) -> Result<Config, String> {
    let cfg = if required_n(e, f, variant).is_ok_and(|r| n >= r) {
        Config::new(n, e, f, variant)
    } else {
        Config::below_bound(n, e, f, variant)
    };
    cfg.and_then(|c| c.with_domain(binary())).map_err(|err| err.to_string())
}

fn oracle_verdict(n: usize, e: usize, f: usize, variant: Variant) -> Result<Verdict, String> {
    lemma_oracle(&oracle_cfg(n, e, f, variant)?).map_err(|err| err.to_string())
}

fn recovery_oracle() -> Outcome {
    let mut cases = 0;
    for (e, f) in [(1, 1), (1, 2), (2, 2), (2, 3)] {
        for variant in [Variant::Task, Variant::Object] {
            let n = match variant {
                Variant::Task => 2 * e + f,
                Variant::Object => 2 * e + f - 1,
            }
            .max(2 * f + 1);
            let v = oracle_verdict(n, e, f, variant)?;
            if !v.passed {
                return Err(format!("{variant} n={n} e={e} f={f}: {}", v.detail));
            }
            cases += v.stats.cases;
        }
    }
    let task_below = oracle_verdict(5, 2, 2, Variant::Task)?;
    let object_below = oracle_verdict(4, 2, 2, Variant::Object)?;
    for (name, v) in [("task n=5", &task_below), ("object n=4", &object_below)] {
        if v.passed || v.stats.counterexamples == 0 {
            return Err(format!("{name}: no counterexample below the bound"));
        }
    }
    Ok(format!(
        "{cases} cases at the bounds, 0 counterexamples; below: task n=5 {} and object n=4 {} counterexamples",
        task_below.stats.counterexamples, object_below.stats.counterexamples
    ))
}

fn safety_and_termination() -> (Outcome, Outcome) {
    let mut latencies = Vec::new();
    let mut runs = 0;
    for (variant, n) in [(Variant::Task, 6), (Variant::Object, 5)] {
        let cfg = Config::new(n, 2, 2, variant).expect("at the bound");
        let v = match fuzz(&cfg, 0..10_000, 2) {
            Ok(v) => v,
            Err(err) => return (Err(err.to_string()), Err("not run".into())),
        };
        if !v.passed {
            let outcome = Err(format!("{variant} n={n}: {}", v.detail));
            let term = if v.detail.contains("termination") {
                outcome.clone()
            } else {
                Err("not run".into())
            };
            return (outcome, term);
        }
        runs += v.stats.runs;
        latencies.push((variant, v.stats.max_post_gst_latency.unwrap_or(0)));
    }
    let safety = Ok(format!("{runs} runs, 0 agreement/validity/chosen-value violations"));
    let bound = TERMINATION_SLACK_ROUNDS * DEFAULT_DELTA;
    let report = latencies
        .iter()
        .map(|(v, l)| format!("{v} max {l} ticks ({:.1}Δ)", *l as f64 / DEFAULT_DELTA as f64))
        .collect::<Vec<_>>()
        .join(", ");
    let termination = if latencies.iter().all(|(_, l)| *l <= bound) {
        Ok(format!("all correct processes decide by GST+{bound}; {report}"))
    } else {
        Err(report)
    };
    (safety, termination)
}

fn mutation() -> Outcome {
    let cfg = Config::new(3, 1, 1, Variant::Task)
        .expect("at the bound")
        .with_mutation(Some(Mutation::DropFastValGuard));
    for seed in 0..1_000 {
        let scenarios = [
            random_scenario(&cfg, seed, 1, 20).map_err(|e| e.to_string())?,
            splice_scenario(&cfg, seed, 1).map_err(|e| e.to_string())?,
        ];
        for sc in scenarios {
            let trace = run(&sc).map_err(|e| e.to_string())?;
            let v = check_agreement(&trace);
            if !v.passed {
                let again = run(v.witness_scenario().expect("witness")).map_err(|e| e.to_string())?;
                if check_agreement(&again).passed {
                    return Err(format!("seed {seed}: witness does not reproduce"));
                }
                return Ok(format!("agreement violated at seed {seed}: {}", v.detail));
            }
        }
    }
    Err("no agreement violation within 1,000 seeds".into())
}

fn determinism() -> Outcome {
    let mut scenarios = Vec::new();
    for (variant, n, e, f) in [
        (Variant::Task, 6, 2, 2),
        (Variant::Object, 5, 2, 2),
        (Variant::Task, 3, 1, 1),
    ] {
        let cfg = Config::new(n, e, f, variant).expect("at the bound");
        for seed in 0..15 {
            scenarios.push(random_scenario(&cfg, seed, f, 20).map_err(|e| e.to_string())?);
            scenarios.push(splice_scenario(&cfg, seed, f).map_err(|e| e.to_string())?);
        }
    }
    let cfg = Config::new(5, 2, 2, Variant::Object).expect("at the bound");
    for seed in 100..110 {
        let mut sc = random_scenario(&cfg, seed, 2, 20).map_err(|e| e.to_string())?;
        sc.omega.mode = OmegaMode::Heartbeat;
        scenarios.push(sc);
    }
    for sc in &scenarios {
        let text = run(sc).map_err(|e| e.to_string())?.render();
        let replayed = replay(&text).map_err(|e| e.to_string())?.render();
        if replayed != text {
            return Err("replayed trace differs".into());
        }
    }
    Ok(format!("{} traces replay byte-identically", scenarios.len()))
}

fn report(id: u32, name: &str, limit: Duration, elapsed: Duration, outcome: &Outcome) -> bool {
    let within = elapsed <= limit;
    let (status, detail) = match outcome {
        Ok(d) if within => ("PASS", d.clone()),
        Ok(d) => ("FAIL", format!("{d}; took {elapsed:.1?}, limit {limit:?}")),
        Err(d) => ("FAIL", d.clone()),
    };
    println!(
        "criterion {id} {name}: {status} [{:.2}s] {detail}",
        elapsed.as_secs_f64()
    );
    status == "PASS"
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let outcome = f();
    (outcome, start.elapsed())
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut ok = true;

    let (o, t) = timed(bounds_table);
    ok &= report(1, "bound-table", secs(1), t, &o);

    let (o, t) = timed(|| two_step(Variant::Task, &[(1, 1, 3), (1, 2, 5), (2, 2, 6), (2, 3, 7)]));
    ok &= report(2, "two-step-task", secs(60), t, &o);

    let (o, t) = timed(|| two_step(Variant::Object, &[(1, 1, 3), (2, 2, 5), (2, 3, 7)]));
    ok &= report(3, "two-step-object", secs(60), t, &o);

    let (o, t) = timed(recovery_oracle);
    ok &= report(4, "recovery-oracle", secs(300), t, &o);

    let start = Instant::now();
    let (safety, termination) = safety_and_termination();
    let t = start.elapsed();
    ok &= report(5, "safety-fuzzing", secs(600), t, &safety);
    ok &= report(6, "termination", secs(600), t, &termination);

    let (o, t) = timed(mutation);
    ok &= report(7, "mutation-sensitivity", secs(60), t, &o);

    let (o, t) = timed(determinism);
    ok &= report(8, "determinism", secs(60), t, &o);

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
