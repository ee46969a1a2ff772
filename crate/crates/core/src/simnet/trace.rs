//! Execution traces and their line-oriented text format.
//!
//! A trace file starts with a version line, followed by the generating
//! scenario as TOML with every line prefixed by `#| `, followed by one event
//! per line:
//!
//! ```text
//! #twostep-trace v1
//! #| horizon = 400
//! #| ...
//! 0 sent p1 p2 propose(1,p1)
//! 10 recv p1 p2 propose(1,p1) @0
//! 10 decide p1 1
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::scenario::{Scenario, ScenarioError, Schedule};
use crate::model::{Message, ModelError, ProcessId, Value};

pub const TRACE_VERSION: u32 = 1;
const VERSION_PREFIX: &str = "#twostep-trace v";
const SCENARIO_PREFIX: &str = "#|";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("empty trace file")]
    Empty,
    #[error("trace version {found} is not supported (expected {TRACE_VERSION})")]
    VersionMismatch { found: String },
    #[error("missing trace header")]
    MissingHeader,
    #[error("embedded scenario: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("line {line}: cannot parse event {text:?}")]
    BadEvent { line: usize, text: String },
}

/// What travels on a simulated link.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Payload {
    Protocol(Message),
    /// Heartbeat Ω beacon.
    Beacon,
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Protocol(m) => m.fmt(f),
            Payload::Beacon => f.write_str("beacon"),
        }
    }
}

impl FromStr for Payload {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "beacon" {
            Ok(Payload::Beacon)
        } else {
            s.parse().map(Payload::Protocol)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Sent {
        t: u64,
        from: ProcessId,
        to: ProcessId,
        payload: Payload,
    },
    Delivered {
        t: u64,
        from: ProcessId,
        to: ProcessId,
        payload: Payload,
        sent_at: u64,
    },
    Crashed {
        t: u64,
        pid: ProcessId,
    },
    Proposed {
        t: u64,
        pid: ProcessId,
        value: Value,
    },
    TimerFired {
        t: u64,
        pid: ProcessId,
    },
    Decision {
        t: u64,
        pid: ProcessId,
        value: Value,
    },
    OmegaChanged {
        t: u64,
        pid: ProcessId,
        leader: ProcessId,
    },
    /// A handler rejected its input; the process state is left unchanged.
    Fault {
        t: u64,
        pid: ProcessId,
        reason: String,
    },
}

impl Event {
    pub fn time(&self) -> u64 {
        match self {
            Event::Sent { t, .. }
            | Event::Delivered { t, .. }
            | Event::Crashed { t, .. }
            | Event::Proposed { t, .. }
            | Event::TimerFired { t, .. }
            | Event::Decision { t, .. }
            | Event::OmegaChanged { t, .. }
            | Event::Fault { t, .. } => *t,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Sent { t, from, to, payload } => write!(f, "{t} sent {from} {to} {payload}"),
            Event::Delivered {
                t,
                from,
                to,
                payload,
                sent_at,
            } => {
                write!(f, "{t} recv {from} {to} {payload} @{sent_at}")
            }
            Event::Crashed { t, pid } => write!(f, "{t} crash {pid}"),
            Event::Proposed { t, pid, value } => write!(f, "{t} call {pid} {value}"),
            Event::TimerFired { t, pid } => write!(f, "{t} timer {pid}"),
            Event::Decision { t, pid, value } => write!(f, "{t} decide {pid} {value}"),
            Event::OmegaChanged { t, pid, leader } => write!(f, "{t} omega {pid} {leader}"),
            Event::Fault { t, pid, reason } => write!(f, "{t} fault {pid} {reason}"),
        }
    }
}

impl FromStr for Event {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ModelError::Parse {
            what: "event",
            input: s.to_string(),
        };
        let mut parts = s.splitn(3, ' ');
        let t: u64 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(err)?;
        let kind = parts.next().ok_or_else(err)?;
        let rest = parts.next().ok_or_else(err)?;
        if kind == "fault" {
            let (pid, reason) = rest.split_once(' ').ok_or_else(err)?;
            return Ok(Event::Fault {
                t,
                pid: pid.parse()?,
                reason: reason.to_string(),
            });
        }
        let args: Vec<&str> = rest.split(' ').collect();
        let at = |a: &str| a.strip_prefix('@').and_then(|x| x.parse::<u64>().ok()).ok_or_else(err);
        let ev = match (kind, args.as_slice()) {
            ("sent", [a, b, m]) => Event::Sent {
                t,
                from: a.parse()?,
                to: b.parse()?,
                payload: m.parse()?,
            },
            ("recv", [a, b, m, s]) => Event::Delivered {
                t,
                from: a.parse()?,
                to: b.parse()?,
                payload: m.parse()?,
                sent_at: at(s)?,
            },
            ("crash", [p]) => Event::Crashed { t, pid: p.parse()? },
            ("call", [p, v]) => Event::Proposed {
                t,
                pid: p.parse()?,
                value: v.parse()?,
            },
            ("timer", [p]) => Event::TimerFired { t, pid: p.parse()? },
            ("decide", [p, v]) => Event::Decision {
                t,
                pid: p.parse()?,
                value: v.parse()?,
            },
            ("omega", [p, l]) => Event::OmegaChanged {
                t,
                pid: p.parse()?,
                leader: l.parse()?,
            },
            _ => return Err(err()),
        };
        Ok(ev)
    }
}

/// A complete run: its scenario and every event in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub scenario: Scenario,
    pub events: Vec<Event>,
}

impl Trace {
    /// First decision of each process, in event order.
    pub fn decisions(&self) -> Vec<(ProcessId, Value, u64)> {
        let mut seen = BTreeSet::new();
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Decision { t, pid, value } if seen.insert(*pid) => Some((*pid, *value, *t)),
                _ => None,
            })
            .collect()
    }

    pub fn decision_of(&self, pid: ProcessId) -> Option<(Value, u64)> {
        self.decisions().into_iter().find(|d| d.0 == pid).map(|d| (d.1, d.2))
    }

    pub fn faults(&self) -> impl Iterator<Item = (u64, ProcessId, &str)> {
        self.events.iter().filter_map(|e| match e {
            Event::Fault { t, pid, reason } => Some((*t, *pid, reason.as_str())),
            _ => None,
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!("{VERSION_PREFIX}{TRACE_VERSION}\n");
        for line in self.scenario.to_toml().lines() {
            if line.is_empty() {
                out.push_str(SCENARIO_PREFIX);
            } else {
                out.push_str(SCENARIO_PREFIX);
                out.push(' ');
                out.push_str(line);
            }
            out.push('\n');
        }
        for ev in &self.events {
            out.push_str(&ev.to_string());
            out.push('\n');
        }
        out
    }

    /// Reads the embedded scenario without parsing events.
    pub fn parse_scenario(text: &str) -> Result<Scenario, TraceError> {
        let mut lines = text.lines();
        let first = lines.next().ok_or(TraceError::Empty)?;
        if first.trim().is_empty() && text.trim().is_empty() {
            return Err(TraceError::Empty);
        }
        let version = first.strip_prefix(VERSION_PREFIX).ok_or(TraceError::MissingHeader)?;
        if version.trim() != TRACE_VERSION.to_string() {
            return Err(TraceError::VersionMismatch {
                found: version.trim().to_string(),
            });
        }
        let mut toml_text = String::new();
        for line in lines.take_while(|l| l.starts_with(SCENARIO_PREFIX)) {
            let body = &line[SCENARIO_PREFIX.len()..];
            toml_text.push_str(body.strip_prefix(' ').unwrap_or(body));
            toml_text.push('\n');
        }
        Ok(Scenario::from_toml(&toml_text)?)
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let scenario = Self::parse_scenario(text)?;
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.starts_with(SCENARIO_PREFIX) || line.trim().is_empty() {
                continue;
            }
            let ev = line.parse().map_err(|_| TraceError::BadEvent {
                line: i + 1,
                text: line.to_string(),
            })?;
            events.push(ev);
        }
        Ok(Trace { scenario, events })
    }

    /// Structural properties every simulator run satisfies. Returns a
    /// description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let sc = &self.scenario;
        let cfg = &sc.cfg;
        let d = cfg.delta;
        let mut in_flight: HashMap<(ProcessId, ProcessId, u64, &Payload), usize> = HashMap::new();
        let mut crashed_at: HashMap<ProcessId, u64> = HashMap::new();
        let mut last_t = 0;
        for ev in &self.events {
            let t = ev.time();
            if t < last_t {
                return Err(format!("time goes backwards at `{ev}`"));
            }
            last_t = t;
            let actor = match ev {
                Event::Sent { from, .. } => Some(*from),
                Event::Delivered { to, .. } => Some(*to),
                Event::Proposed { pid, .. }
                | Event::TimerFired { pid, .. }
                | Event::Decision { pid, .. }
                | Event::OmegaChanged { pid, .. }
                | Event::Fault { pid, .. } => Some(*pid),
                Event::Crashed { .. } => None,
            };
            if let Some(p) = actor {
                if crashed_at.contains_key(&p) {
                    return Err(format!("crashed process acts: `{ev}`"));
                }
            }
            match ev {
                Event::Sent { t, from, to, payload } => {
                    *in_flight.entry((*from, *to, *t, payload)).or_default() += 1;
                }
                Event::Delivered {
                    t,
                    from,
                    to,
                    payload,
                    sent_at,
                } => {
                    match in_flight.get_mut(&(*from, *to, *sent_at, payload)) {
                        Some(c) if *c > 0 => *c -= 1,
                        _ => return Err(format!("`{ev}` has no matching send")),
                    }
                    if *sent_at >= cfg.gst && t - sent_at > d {
                        return Err(format!("`{ev}` exceeds Δ after GST"));
                    }
                    if *t > sent_at.max(&cfg.gst) + d {
                        return Err(format!("`{ev}` arrives after GST + Δ"));
                    }
                    if from != to && sc.schedule == Schedule::Synchronous && *t != (sent_at / d + 1) * d {
                        return Err(format!("`{ev}` off the synchronous round boundary"));
                    }
                }
                Event::Crashed { t, pid } => {
                    crashed_at.insert(*pid, *t);
                }
                _ => {}
            }
        }
        if crashed_at.len() > cfg.f {
            return Err(format!("{} crashes exceed f={}", crashed_at.len(), cfg.f));
        }
        for ((from, to, sent_at, payload), count) in in_flight {
            let correct = !crashed_at.contains_key(&from) && !crashed_at.contains_key(&to);
            if count > 0 && correct && sent_at.max(cfg.gst) + d <= sc.horizon {
                return Err(format!(
                    "{payload} from {from} to {to} sent at {sent_at} never delivered"
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ballot;

    #[test]
    fn event_lines_round_trip() {
        let p1 = ProcessId::new(1);
        let p2 = ProcessId::new(2);
        let events = [
            Event::Sent {
                t: 0,
                from: p1,
                to: p2,
                payload: Payload::Beacon,
            },
            Event::Delivered {
                t: 10,
                from: p1,
                to: p2,
                payload: Payload::Protocol(Message::TwoB {
                    ballot: Ballot(0),
                    value: Value::Val(4),
                }),
                sent_at: 3,
            },
            Event::Crashed { t: 5, pid: p2 },
            Event::Proposed {
                t: 0,
                pid: p1,
                value: Value::Val(3),
            },
            Event::TimerFired { t: 20, pid: p1 },
            Event::Decision {
                t: 20,
                pid: p2,
                value: Value::Val(3),
            },
            Event::OmegaChanged {
                t: 40,
                pid: p2,
                leader: p1,
            },
            Event::Fault {
                t: 41,
                pid: p2,
                reason: "p2 decided 1 but received Decide(2)".into(),
            },
        ];
        for ev in events {
            let line = ev.to_string();
            assert_eq!(line.parse::<Event>().unwrap(), ev, "{line}");
        }
        assert!("x sent p1".parse::<Event>().is_err());
        assert!("3 warp p1".parse::<Event>().is_err());
    }

    #[test]
    fn header_errors() {
        assert_eq!(Trace::parse(""), Err(TraceError::Empty));
        assert!(matches!(
            Trace::parse("#twostep-trace v9\n"),
            Err(TraceError::VersionMismatch { .. })
        ));
        assert_eq!(Trace::parse("0 crash p1\n"), Err(TraceError::MissingHeader));
    }
}
