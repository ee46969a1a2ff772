//! Scenario descriptions and their TOML file format.
//!
//! A scenario file is TOML. Top-level keys:
//!
//! ```toml
//! horizon = 400              # last simulated tick
//! priority = ["p2"]          # senders delivered first within an instant
//! inputs = ["1", "2", "_"]   # task variant: one slot per process, "_" = none
//!
//! [cfg]                      # n, e, f, variant, delta, gst, value_domain, ...
//! [schedule]                 # kind = "synchronous" | "random" | "scripted"
//! [omega]                    # mode = "oracle" | "heartbeat", optional timeout
//! [[calls]]                  # object variant: time, pid, value
//! [[crashes]]                # time, pid
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{Config, ModelError, ProcessId, Value, Variant};
use crate::omega::OmegaSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario file: {0}")]
    Format(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

/// One task-variant input slot; `_` marks a process whose input is irrelevant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot(pub Option<Value>);

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("_"),
        }
    }
}

impl FromStr for Slot {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "_" => Ok(Slot(None)),
            other => other.parse().map(|v| Slot(Some(v))),
        }
    }
}

impl Serialize for Slot {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposeCall {
    pub time: u64,
    pub pid: ProcessId,
    pub value: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashAt {
    pub time: u64,
    pub pid: ProcessId,
}

/// A group-local prefix followed by a seeded random continuation.
///
/// During the first `max(rounds)` rounds, messages travel with synchronous
/// round timing, but only inside a group or from a process that crashes when
/// the prefix ends. Group `g` stops taking steps after `rounds[g]` rounds.
/// Everything withheld is released when the prefix ends.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpliceScript {
    pub groups: Vec<Vec<ProcessId>>,
    pub rounds: Vec<u32>,
    /// Processes that crash when the prefix ends; their prefix messages are
    /// visible to every group.
    pub crash_set: Vec<ProcessId>,
    pub seed: u64,
}

impl SpliceScript {
    /// Time at which the group-local prefix ends.
    pub fn prefix_end(&self, delta: u64) -> u64 {
        self.rounds.iter().copied().max().unwrap_or(0) as u64 * delta
    }

    /// First tick of the continuation.
    pub fn resume(&self, delta: u64) -> u64 {
        self.prefix_end(delta) + 1
    }

    pub fn group_of(&self, pid: ProcessId) -> usize {
        self.groups
            .iter()
            .position(|g| g.contains(&pid))
            .expect("groups partition the processes")
    }

    pub fn visible(&self, from: ProcessId, to: ProcessId) -> bool {
        self.crash_set.contains(&from) || self.group_of(from) == self.group_of(to)
    }

    /// Last tick at which `pid`'s group takes prefix steps.
    pub fn active_until(&self, pid: ProcessId, delta: u64) -> u64 {
        self.rounds[self.group_of(pid)] as u64 * delta
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// Lock-step rounds of length Δ; GST is 0.
    Synchronous,
    /// Delays uniform in `[0, 10Δ]` before GST (never past `GST + Δ`) and in
    /// `[1, Δ]` after.
    Random {
        seed: u64,
    },
    Scripted(SpliceScript),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon: u64,
    #[serde(default)]
    pub priority: Vec<ProcessId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<Slot>,
    pub cfg: Config,
    pub schedule: Schedule,
    #[serde(default)]
    pub omega: OmegaSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<ProposeCall>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crashes: Vec<CrashAt>,
}

/// Initial proposals for a scenario builder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Proposals {
    /// Task variant: one input per process (`None` only for processes that
    /// crash at time 0).
    Inputs(Vec<Option<Value>>),
    /// Object variant: explicit `propose()` invocations.
    Calls(Vec<ProposeCall>),
}

pub fn default_horizon(cfg: &Config) -> u64 {
    cfg.gst + 40 * cfg.delta
}

impl Scenario {
    fn with_proposals(mut self, proposals: Proposals) -> Self {
        match proposals {
            Proposals::Inputs(inputs) => self.inputs = inputs.into_iter().map(Slot).collect(),
            Proposals::Calls(calls) => self.calls = calls,
        }
        self
    }

    /// The `E`-faulty synchronous run in which `favored`'s messages come first
    /// in every receiver's batch.
    pub fn synchronous(
        cfg: &Config,
        faulty: &[ProcessId],
        favored: ProcessId,
        proposals: Proposals,
    ) -> Result<Self, ScenarioError> {
        if faulty.contains(&favored) {
            return invalid(format!("favored process {favored} is in the faulty set"));
        }
        let distinct: BTreeSet<_> = faulty.iter().collect();
        if distinct.len() != faulty.len() || faulty.len() != cfg.e {
            return invalid(format!("faulty set must hold exactly e={} distinct processes", cfg.e));
        }
        let cfg = cfg.clone().with_gst(0);
        let scenario = Scenario {
            horizon: default_horizon(&cfg),
            priority: vec![favored],
            inputs: Vec::new(),
            cfg,
            schedule: Schedule::Synchronous,
            omega: OmegaSpec::default(),
            calls: Vec::new(),
            crashes: faulty.iter().map(|&pid| CrashAt { time: 0, pid }).collect(),
        }
        .with_proposals(proposals);
        scenario.validate()?;
        Ok(scenario)
    }

    /// A group-local prefix, crash of `crash_set`, then a random continuation
    /// seeded with `seed`. GST is moved to the end of the prefix if earlier.
    pub fn splice(
        cfg: &Config,
        groups: Vec<Vec<ProcessId>>,
        rounds: Vec<u32>,
        crash_set: Vec<ProcessId>,
        seed: u64,
        proposals: Proposals,
    ) -> Result<Self, ScenarioError> {
        if crash_set.len() > cfg.f {
            return invalid(format!("crash set of {} exceeds f={}", crash_set.len(), cfg.f));
        }
        let script = SpliceScript {
            groups,
            rounds,
            crash_set,
            seed,
        };
        let resume = script.resume(cfg.delta);
        let cfg = cfg.clone().with_gst(cfg.gst.max(resume));
        let scenario = Scenario {
            horizon: default_horizon(&cfg),
            priority: Vec::new(),
            inputs: Vec::new(),
            crashes: script
                .crash_set
                .iter()
                .map(|&pid| CrashAt { time: resume, pid })
                .collect(),
            cfg,
            schedule: Schedule::Scripted(script),
            omega: OmegaSpec::default(),
            calls: Vec::new(),
        }
        .with_proposals(proposals);
        scenario.validate()?;
        Ok(scenario)
    }

    /// Random schedule with the given crash plan.
    pub fn random(cfg: &Config, seed: u64, crashes: Vec<CrashAt>, proposals: Proposals) -> Result<Self, ScenarioError> {
        let scenario = Scenario {
            horizon: default_horizon(cfg),
            priority: Vec::new(),
            inputs: Vec::new(),
            cfg: cfg.clone(),
            schedule: Schedule::Random { seed },
            omega: OmegaSpec::default(),
            calls: Vec::new(),
            crashes,
        }
        .with_proposals(proposals);
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn crash_time(&self, pid: ProcessId) -> Option<u64> {
        self.crashes.iter().filter(|c| c.pid == pid).map(|c| c.time).min()
    }

    /// Processes that never crash within the horizon.
    pub fn correct(&self) -> Vec<ProcessId> {
        self.cfg
            .processes()
            .filter(|&p| self.crash_time(p).is_none_or(|t| t > self.horizon))
            .collect()
    }

    pub fn input(&self, pid: ProcessId) -> Option<Value> {
        self.inputs.get(pid.slot()).and_then(|s| s.0)
    }

    /// Every value some process proposes in this scenario.
    pub fn proposed_values(&self) -> BTreeSet<Value> {
        match self.cfg.variant {
            Variant::Task => self.inputs.iter().filter_map(|s| s.0).collect(),
            Variant::Object => self.calls.iter().map(|c| c.value).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let cfg = &self.cfg;
        cfg.validate()?;
        let n = cfg.n;
        let in_range = |p: &ProcessId| p.index() <= n;
        if !self.priority.iter().all(in_range) {
            return invalid("priority names an unknown process");
        }
        if !self.crashes.iter().map(|c| &c.pid).all(in_range) {
            return invalid("crash plan names an unknown process");
        }
        let crashed: BTreeSet<_> = self
            .crashes
            .iter()
            .filter(|c| c.time <= self.horizon)
            .map(|c| c.pid)
            .collect();
        if crashed.len() > cfg.f {
            return invalid(format!("{} processes crash but f={}", crashed.len(), cfg.f));
        }
        match cfg.variant {
            Variant::Task => {
                if !self.calls.is_empty() {
                    return invalid("propose() calls only exist in the object variant");
                }
                if self.inputs.len() != n {
                    return invalid(format!("expected {n} inputs, got {}", self.inputs.len()));
                }
                for pid in cfg.processes() {
                    match self.input(pid) {
                        Some(v) if v.is_bottom() => return invalid(format!("{pid} has a bottom input")),
                        None if self.crash_time(pid) != Some(0) => {
                            return invalid(format!("{pid} has no input but does not crash at time 0"))
                        }
                        _ => {}
                    }
                }
            }
            Variant::Object => {
                if !self.inputs.is_empty() {
                    return invalid("object variant uses propose() calls, not inputs");
                }
                let mut callers = BTreeSet::new();
                for c in &self.calls {
                    if !in_range(&c.pid) || c.value.is_bottom() {
                        return invalid(format!("bad propose() call {c:?}"));
                    }
                    if !callers.insert(c.pid) {
                        return invalid(format!("{} calls propose() twice", c.pid));
                    }
                }
            }
        }
        match &self.schedule {
            Schedule::Synchronous => {
                if cfg.gst != 0 {
                    return invalid("synchronous schedules have GST = 0");
                }
                if self.crashes.iter().any(|c| c.time != 0) {
                    return invalid("synchronous schedules crash processes at time 0 only");
                }
            }
            Schedule::Random { .. } => {}
            Schedule::Scripted(script) => {
                let mut seen = BTreeSet::new();
                for pid in script.groups.iter().flatten() {
                    if !in_range(pid) || !seen.insert(*pid) {
                        return invalid("splice groups are not a partition");
                    }
                }
                if seen.len() != n || script.groups.iter().any(Vec::is_empty) {
                    return invalid("splice groups are not a partition");
                }
                if script.rounds.len() != script.groups.len() {
                    return invalid("one round count per splice group");
                }
                if script.crash_set.len() > cfg.f {
                    return invalid("splice crash set exceeds f");
                }
                if cfg.gst < script.resume(cfg.delta) {
                    return invalid("GST must not precede the end of the splice prefix");
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Format(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }
}
