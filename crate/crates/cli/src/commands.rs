//! Subcommand implementations. Each returns whether every property held;
//! errors are usage or configuration problems.

use std::fs;
use std::path::{Path, PathBuf};

use twostep_core::checker::{
    check_agreement, check_handler_faults, check_termination, check_two_step_object, check_two_step_task,
    check_validity, fuzz_with, lemma_oracle, summary_table, tightness, FuzzOptions, Verdict, Witness, MAX_ORACLE_N,
    TERMINATION_SLACK_ROUNDS,
};
use twostep_core::model::{required_n, Config, Mutation, ProcessId, Value, Variant};
use twostep_core::omega::OmegaMode;
use twostep_core::simnet::{replay, run, CrashAt, Proposals, ProposeCall, ReplayError, Scenario, Slot};

use crate::opts::{CheckOpts, CommonOpts, FuzzOpts, RunOpts};

pub type Outcome = Result<bool, String>;

fn pid(s: &str) -> Result<ProcessId, String> {
    let s = s.trim();
    let tagged = if s.starts_with('p') {
        s.to_string()
    } else {
        format!("p{s}")
    };
    tagged.parse().map_err(|e| format!("{e}"))
}

fn value(s: &str) -> Result<Value, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn list<T>(s: &str, item: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| item(x.trim()))
        .collect()
}

fn variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn out_dir(common: &CommonOpts) -> PathBuf {
    common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    }
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Builds a validated configuration; `n` defaults to the bound.
fn config(
    common: &CommonOpts,
    variant: Variant,
    e: usize,
    f: usize,
    domain: Option<Vec<Value>>,
) -> Result<Config, String> {
    let n = match common.n {
        Some(n) => n,
        None => required_n(e, f, variant).map_err(|err| err.to_string())?,
    };
    let mut cfg = if common.allow_below_bound {
        Config::below_bound(n, e, f, variant)
    } else {
        Config::new(n, e, f, variant)
    }
    .map_err(|err| err.to_string())?;
    if let Some(delta) = common.delta {
        cfg = cfg.with_delta(delta).map_err(|err| err.to_string())?;
    }
    if let Some(domain) = common.domain.as_deref().map(|d| list(d, value)).transpose()?.or(domain) {
        cfg = cfg.with_domain(domain).map_err(|err| err.to_string())?;
    }
    let mutation = match common.mutation.as_deref() {
        None => None,
        Some("drop-fast-val-guard") => Some(Mutation::DropFastValGuard),
        Some(other) => return Err(format!("unknown mutation `{other}`")),
    };
    Ok(cfg.with_gst(common.gst.unwrap_or(0)).with_mutation(mutation))
}

fn sized_config(common: &CommonOpts, domain: Option<Vec<Value>>) -> Result<Config, String> {
    let v = variant(common.variant.as_deref().ok_or("--variant is required")?)?;
    let e = common.e.ok_or("--e is required")?;
    let f = common.f.ok_or("--f is required")?;
    config(common, v, e, f, domain)
}

fn binary() -> Vec<Value> {
    vec![Value::Val(0), Value::Val(1)]
}

/// Writes a failing verdict's witness and returns its path.
fn save_witness(dir: &Path, name: &str, v: &Verdict) -> Result<Option<PathBuf>, String> {
    let (file, text) = match &v.witness {
        Some(Witness::Run(sc)) => (format!("{name}.toml"), sc.to_toml()),
        Some(Witness::Votes(cx)) => (format!("{name}.txt"), format!("{cx}\n")),
        None => return Ok(None),
    };
    let path = dir.join(file);
    write_file(&path, &text)?;
    Ok(Some(path))
}

fn report(dir: &Path, name: &str, v: &Verdict) -> Result<(), String> {
    println!("{}", v.record());
    if !v.passed {
        if let Some(path) = save_witness(dir, name, v)? {
            println!("witness: {}", path.display());
        }
    }
    Ok(())
}

fn scenario(common: &CommonOpts, opts: &RunOpts) -> Result<Scenario, String> {
    if let Some(path) = &opts.scenario {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        return Scenario::from_toml(&text).map_err(|e| e.to_string());
    }
    let cfg = sized_config(common, None)?;
    let slots: Option<Vec<Slot>> = opts
        .proposals
        .as_deref()
        .map(|p| list(p, |x| x.parse::<Slot>().map_err(|e| e.to_string())))
        .transpose()?;
    if let Some(slots) = &slots {
        if slots.len() != cfg.n {
            return Err(format!("--proposals has {} entries for n={}", slots.len(), cfg.n));
        }
    }
    let proposals = match cfg.variant {
        Variant::Task => {
            let slots = slots.ok_or("task runs need --proposals")?;
            Proposals::Inputs(slots.into_iter().map(|s| s.0).collect())
        }
        Variant::Object => {
            let mut calls: Vec<ProposeCall> = slots
                .unwrap_or_default()
                .into_iter()
                .zip(cfg.processes())
                .filter_map(|(s, pid)| s.0.map(|value| ProposeCall { time: 0, pid, value }))
                .collect();
            if let Some(timed) = &opts.calls {
                for call in timed.split(',').filter(|c| !c.trim().is_empty()) {
                    let parts: Vec<&str> = call.trim().split(':').collect();
                    let [t, p, v] = parts.as_slice() else {
                        return Err(format!("call `{call}` is not time:pid:value"));
                    };
                    let time = t.parse().map_err(|_| format!("bad time in `{call}`"))?;
                    calls.push(ProposeCall {
                        time,
                        pid: pid(p)?,
                        value: value(v)?,
                    });
                }
            }
            Proposals::Calls(calls)
        }
    };
    let crashes = opts
        .crashes
        .as_deref()
        .map(|c| {
            list(c, |x| {
                let (t, p) = x
                    .split_once(':')
                    .ok_or_else(|| format!("crash `{x}` is not time:pid"))?;
                let time = t.parse().map_err(|_| format!("bad time in `{x}`"))?;
                Ok(CrashAt { time, pid: pid(p)? })
            })
        })
        .transpose()?
        .unwrap_or_default();
    let seed = opts.seed.unwrap_or(0);
    let mut sc = match opts.schedule.as_deref().unwrap_or("sync") {
        "sync" => {
            let faulty = opts
                .faulty
                .as_deref()
                .map(|f| list(f, pid))
                .transpose()?
                .unwrap_or_default();
            let favored = match opts.favored.as_deref() {
                Some(p) => pid(p)?,
                None => default_favored(&cfg, &faulty, &proposals)?,
            };
            Scenario::synchronous(&cfg, &faulty, favored, proposals)
        }
        "random" => Scenario::random(&cfg, seed, crashes, proposals),
        "splice" => {
            let groups = opts
                .groups
                .as_deref()
                .ok_or("splice runs need --groups")?
                .split('|')
                .map(|g| list(g, pid))
                .collect::<Result<Vec<_>, _>>()?;
            let rounds = list(opts.rounds.as_deref().ok_or("splice runs need --rounds")?, |r| {
                r.parse::<u32>().map_err(|_| format!("bad round count `{r}`"))
            })?;
            let crash_set = opts
                .crash_set
                .as_deref()
                .map(|c| list(c, pid))
                .transpose()?
                .unwrap_or_default();
            Scenario::splice(&cfg, groups, rounds, crash_set, seed, proposals)
        }
        other => return Err(format!("unknown schedule `{other}` (sync, random or splice)")),
    }
    .map_err(|e| e.to_string())?;
    match opts.omega.as_deref() {
        None | Some("oracle") => {}
        Some("heartbeat") => sc.omega.mode = OmegaMode::Heartbeat,
        Some(other) => return Err(format!("unknown omega mode `{other}`")),
    }
    if opts.timeout.is_some() {
        sc.omega.timeout = opts.timeout;
    }
    if let Some(h) = opts.horizon {
        sc.horizon = h;
    }
    sc.validate().map_err(|e| e.to_string())?;
    Ok(sc)
}

/// The correct process holding the largest proposal.
fn default_favored(cfg: &Config, faulty: &[ProcessId], proposals: &Proposals) -> Result<ProcessId, String> {
    let correct = cfg.processes().filter(|p| !faulty.contains(p));
    let holding = |p: ProcessId| match proposals {
        Proposals::Inputs(v) => v.get(p.slot()).copied().flatten(),
        Proposals::Calls(c) => c.iter().find(|c| c.pid == p).map(|c| c.value),
    };
    correct
        .map(|p| (holding(p), std::cmp::Reverse(p)))
        .max()
        .map(|(_, p)| p.0)
        .ok_or_else(|| "no correct process to favor".to_string())
}

pub fn run_cmd(common: CommonOpts, opts: RunOpts) -> Outcome {
    let sc = scenario(&common, &opts)?;
    let trace = run(&sc).map_err(|e| e.to_string())?;
    println!(
        "{} n={} e={} f={} gst={} horizon={}",
        sc.cfg.variant, sc.cfg.n, sc.cfg.e, sc.cfg.f, sc.cfg.gst, sc.horizon
    );
    for (p, v, t) in trace.decisions() {
        println!("decide {p} {v} at {t}");
    }
    if let Some(path) = &opts.trace {
        write_file(path, &trace.render())?;
        println!("trace: {}", path.display());
    }
    let bound = (sc.cfg.gst + TERMINATION_SLACK_ROUNDS * sc.cfg.delta).min(sc.horizon);
    let termination = check_termination(&trace, bound).map_err(|e| e.to_string())?;
    let verdicts = [
        check_agreement(&trace),
        check_validity(&trace),
        check_handler_faults(&trace),
        termination,
    ];
    let dir = out_dir(&common);
    for v in &verdicts {
        report(&dir, &format!("witness-run-{}", v.property), v)?;
    }
    Ok(verdicts.iter().all(|v| v.passed))
}

fn two_step(cfg: &Config) -> Result<Verdict, String> {
    match cfg.variant {
        Variant::Task => check_two_step_task(cfg),
        Variant::Object => check_two_step_object(cfg),
    }
    .map_err(|e| e.to_string())
}

pub fn check_cmd(common: CommonOpts, opts: CheckOpts) -> Outcome {
    let variants = match common.variant.as_deref() {
        Some(v) => vec![variant(v)?],
        None => vec![Variant::Task, Variant::Object],
    };
    let cells: Vec<(usize, usize)> = match (common.e, common.f) {
        (Some(e), Some(f)) => vec![(e, f)],
        (None, None) => (1..=3).flat_map(|f| (1..=f).map(move |e| (e, f))).collect(),
        _ => return Err("give both --e and --f, or neither for the full grid".into()),
    };
    if common.n.is_some() && cells.len() > 1 {
        return Err("--n needs --e and --f".into());
    }
    let dir = out_dir(&common);
    let mut verdicts = Vec::new();
    for &(e, f) in &cells {
        for &v in &variants {
            let cfg = config(&common, v, e, f, Some(binary()))?;
            let tag = format!("{v}-n{}-e{e}-f{f}", cfg.n);
            let mut row = vec![two_step(&cfg)?];
            if cfg.n <= MAX_ORACLE_N {
                row.push(lemma_oracle(&cfg).map_err(|e| e.to_string())?);
                let fast_term = match v {
                    Variant::Task => 2 * e + f,
                    Variant::Object => 2 * e + f - 1,
                };
                if opts.tightness {
                    if cfg.n <= 3 {
                        println!("# {tag}: tightness skipped, n-1 is below 3");
                    } else if fast_term < cfg.n {
                        println!("# {tag}: tightness skipped, n-1 still satisfies the fast-path term");
                    } else {
                        row.push(tightness(&cfg).map_err(|e| e.to_string())?);
                    }
                }
            } else {
                println!("# {tag}: oracle skipped, n={} exceeds {MAX_ORACLE_N}", cfg.n);
            }
            for mut verdict in row {
                verdict.property = format!("{}:{tag}", verdict.property);
                report(
                    &dir,
                    &format!("witness-{}", verdict.property.replace(':', "-")),
                    &verdict,
                )?;
                verdicts.push(verdict);
            }
        }
    }
    print!("{}", summary_table(&verdicts));
    Ok(verdicts.iter().all(|v| v.passed))
}

fn seed_range(s: &str) -> Result<std::ops::Range<u64>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("seed range `{s}` is not start..end"))?;
    let parse = |x: &str| x.trim().parse::<u64>().map_err(|_| format!("bad seed range `{s}`"));
    Ok(parse(a)?..parse(b)?)
}

pub fn fuzz_cmd(common: CommonOpts, opts: FuzzOpts) -> Outcome {
    let cfg = sized_config(&common, None)?;
    let seeds = seed_range(opts.seeds.as_deref().unwrap_or("0..1000"))?;
    let mut fo = FuzzOptions::new(seeds, opts.crash_budget.unwrap_or(cfg.f));
    if let Some(slack) = opts.slack {
        fo.termination_slack_rounds = slack;
    }
    let v = fuzz_with(&cfg, &fo).map_err(|e| e.to_string())?;
    let name = format!("witness-fuzz-{}-n{}", cfg.variant, cfg.n);
    report(&out_dir(&common), &name, &v)?;
    Ok(v.passed)
}

pub fn oracle_cmd(common: CommonOpts) -> Outcome {
    let cfg = sized_config(&common, Some(binary()))?;
    let v = lemma_oracle(&cfg).map_err(|e| e.to_string())?;
    if let Some(Witness::Votes(cx)) = &v.witness {
        println!("{cx}");
    }
    let name = format!("witness-oracle-{}-n{}", cfg.variant, cfg.n);
    report(&out_dir(&common), &name, &v)?;
    Ok(v.passed)
}

pub fn replay_cmd(path: &Path) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    match replay(&text) {
        Ok(trace) => {
            println!("replay ok: {} events match", trace.events.len());
            Ok(true)
        }
        Err(err @ ReplayError::Diverged { .. }) => {
            println!("{err}");
            Ok(false)
        }
        Err(err) => Err(err.to_string()),
    }
}
