//! Deterministic discrete-event simulator.
//!
//! Time is an integer tick count. Events scheduled for the same instant run
//! in a fixed order: crashes, process starts, `propose()` calls, message
//! deliveries, heartbeat ticks, then timers. Deliveries at one instant are
//! ordered by the scenario's priority list, then sender id, then send order.
//! Given the same scenario, [`run`] always produces the same trace.

pub mod scenario;
pub mod trace;

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use scenario::{
    default_horizon, CrashAt, Proposals, ProposeCall, Scenario, ScenarioError, Schedule, Slot, SpliceScript,
};
pub use trace::{Event, Payload, Trace, TraceError, TRACE_VERSION};

use crate::model::{Effect, ProcessId, Value};
use crate::omega::{HeartbeatDetector, OmegaMode, OmegaView, OracleOmega};
use crate::protocol::ProcessState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("horizon {horizon} too short: {detail}")]
    HorizonTooShort { horizon: u64, detail: String },
    #[error("simulator invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("replay diverges at line {line}:\n  recorded: {recorded}\n  replayed: {replayed}")]
    Diverged {
        line: usize,
        recorded: String,
        replayed: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Kind {
    Crash(ProcessId),
    Start(ProcessId),
    Call(ProcessId, Value),
    Deliver {
        from: ProcessId,
        to: ProcessId,
        payload: Payload,
        sent_at: u64,
    },
    HeartbeatTick(ProcessId),
    Timer(ProcessId, u64),
}

impl Kind {
    fn class(&self) -> u8 {
        match self {
            Kind::Crash(_) => 0,
            Kind::Start(_) => 1,
            Kind::Call(..) => 2,
            Kind::Deliver { .. } => 3,
            Kind::HeartbeatTick(_) => 4,
            Kind::Timer(..) => 5,
        }
    }

    fn target(&self) -> Option<ProcessId> {
        match self {
            Kind::Crash(_) => None,
            Kind::Start(p) | Kind::Call(p, _) | Kind::HeartbeatTick(p) | Kind::Timer(p, _) => Some(*p),
            Kind::Deliver { to, .. } => Some(*to),
        }
    }
}

#[derive(Debug)]
struct Queued {
    time: u64,
    class: u8,
    rank: usize,
    origin: usize,
    seq: u64,
    kind: Kind,
}

impl Queued {
    fn key(&self) -> (u64, u8, usize, usize, u64) {
        (self.time, self.class, self.rank, self.origin, self.seq)
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    procs: Vec<Option<ProcessState>>,
    crashed: Vec<bool>,
    timer_gen: Vec<u64>,
    omega: OmegaView,
    known_leader: Vec<Option<ProcessId>>,
    rng: ChaCha8Rng,
    events: Vec<Event>,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let cfg = &sc.cfg;
        let n = cfg.n;
        let seed = match &sc.schedule {
            Schedule::Synchronous => 0,
            Schedule::Random { seed } => *seed,
            Schedule::Scripted(s) => s.seed,
        };
        let omega = match sc.omega.mode {
            OmegaMode::Oracle => {
                let pre_gst = (cfg.gst > 0).then_some(seed);
                OmegaView::Oracle(OracleOmega::new(n, cfg.gst, cfg.delta, pre_gst))
            }
            OmegaMode::Heartbeat => {
                let timeout = sc.omega.timeout.unwrap_or(2 * cfg.delta);
                OmegaView::Heartbeat {
                    detectors: cfg
                        .processes()
                        .map(|p| HeartbeatDetector::new(p, n, cfg.delta, timeout, 0))
                        .collect(),
                    crashed: vec![false; n],
                }
            }
        };
        Sim {
            sc,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            procs: vec![None; n],
            crashed: vec![false; n],
            timer_gen: vec![0; n],
            omega,
            known_leader: vec![None; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: Vec::new(),
        }
    }

    fn push(&mut self, time: u64, kind: Kind) {
        let (rank, origin) = match &kind {
            Kind::Deliver { from, .. } => (
                self.sc
                    .priority
                    .iter()
                    .position(|p| p == from)
                    .unwrap_or(self.sc.priority.len()),
                from.index(),
            ),
            other => (0, other.target().map_or(0, ProcessId::index)),
        };
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            time,
            class: kind.class(),
            rank,
            origin,
            seq: self.seq,
            kind,
        }));
    }

    fn delta(&self) -> u64 {
        self.sc.cfg.delta
    }

    fn random_delivery(&mut self, sent_at: u64) -> u64 {
        let d = self.delta();
        let gst = self.sc.cfg.gst;
        if sent_at >= gst {
            sent_at + self.rng.random_range(1..=d)
        } else {
            (sent_at + self.rng.random_range(0..=10 * d)).min(gst + d)
        }
    }

    fn delivery_time(&mut self, from: ProcessId, to: ProcessId) -> u64 {
        let d = self.delta();
        let now = self.now;
        let sc = self.sc;
        match &sc.schedule {
            Schedule::Synchronous => (now / d + 1) * d,
            Schedule::Random { .. } => self.random_delivery(now),
            Schedule::Scripted(s) => {
                if now >= s.prefix_end(d) {
                    self.random_delivery(now)
                } else if s.visible(from, to) {
                    (now / d + 1) * d
                } else {
                    self.random_delivery(s.resume(d))
                }
            }
        }
    }

    /// Whether `kind` must wait for the end of a splice prefix.
    fn frozen(&self, kind: &Kind) -> Option<u64> {
        let Schedule::Scripted(s) = &self.sc.schedule else {
            return None;
        };
        let d = self.delta();
        let resume = s.resume(d);
        let target = kind.target()?;
        (self.now < resume && self.now > s.active_until(target, d)).then_some(resume)
    }

    fn send(&mut self, from: ProcessId, to: ProcessId, payload: Payload) {
        let t = self.now;
        self.events.push(Event::Sent {
            t,
            from,
            to,
            payload: payload.clone(),
        });
        let at = self.delivery_time(from, to);
        self.push(
            at,
            Kind::Deliver {
                from,
                to,
                payload,
                sent_at: t,
            },
        );
    }

    fn note_leader(&mut self, pid: ProcessId, leader: ProcessId) {
        if self.known_leader[pid.slot()] != Some(leader) {
            self.known_leader[pid.slot()] = Some(leader);
            self.events.push(Event::OmegaChanged {
                t: self.now,
                pid,
                leader,
            });
        }
    }

    fn apply(&mut self, pid: ProcessId, step: Result<Vec<Effect>, crate::protocol::ProtocolError>) {
        let effects = match step {
            Ok(effects) => effects,
            Err(e) => {
                self.events.push(Event::Fault {
                    t: self.now,
                    pid,
                    reason: e.to_string(),
                });
                return;
            }
        };
        for effect in effects {
            match effect {
                Effect::Send { to, msg } if to == pid => {
                    let t = self.now;
                    let payload = Payload::Protocol(msg.clone());
                    self.events.push(Event::Sent {
                        t,
                        from: pid,
                        to,
                        payload: payload.clone(),
                    });
                    self.events.push(Event::Delivered {
                        t,
                        from: pid,
                        to,
                        payload,
                        sent_at: t,
                    });
                    let step = self.state(pid).on_message(pid, &msg);
                    self.apply(pid, step);
                }
                Effect::Send { to, msg } => self.send(pid, to, Payload::Protocol(msg)),
                Effect::Broadcast { msg } => {
                    for q in self.sc.cfg.processes().filter(|&q| q != pid) {
                        self.send(pid, q, Payload::Protocol(msg.clone()));
                    }
                }
                Effect::Decided(value) => self.events.push(Event::Decision {
                    t: self.now,
                    pid,
                    value,
                }),
                Effect::SetTimer(after) => {
                    self.timer_gen[pid.slot()] += 1;
                    let gen = self.timer_gen[pid.slot()];
                    self.push(self.now + after, Kind::Timer(pid, gen));
                }
                Effect::StopTimer => self.timer_gen[pid.slot()] += 1,
            }
        }
    }

    fn state(&mut self, pid: ProcessId) -> &mut ProcessState {
        self.procs[pid.slot()].as_mut().expect("process started")
    }

    fn step(&mut self, kind: Kind) {
        if let Some(p) = kind.target() {
            if self.crashed[p.slot()] {
                return;
            }
        }
        let t = self.now;
        match kind {
            Kind::Crash(pid) => {
                if !self.crashed[pid.slot()] {
                    self.crashed[pid.slot()] = true;
                    self.omega.mark_crashed(pid);
                    self.events.push(Event::Crashed { t, pid });
                }
            }
            Kind::Start(pid) => {
                let input = self.sc.input(pid);
                match ProcessState::start(self.sc.cfg.clone(), pid, input) {
                    Ok((state, effects)) => {
                        self.procs[pid.slot()] = Some(state);
                        self.apply(pid, Ok(effects));
                    }
                    Err(e) => self.events.push(Event::Fault {
                        t,
                        pid,
                        reason: e.to_string(),
                    }),
                }
            }
            Kind::Call(pid, value) => {
                self.events.push(Event::Proposed { t, pid, value });
                let step = self.state(pid).propose(value);
                self.apply(pid, step);
            }
            Kind::Deliver {
                from,
                to,
                payload,
                sent_at,
            } => {
                self.events.push(Event::Delivered {
                    t,
                    from,
                    to,
                    payload: payload.clone(),
                    sent_at,
                });
                match payload {
                    Payload::Protocol(msg) => {
                        let step = self.state(to).on_message(from, &msg);
                        self.apply(to, step);
                    }
                    Payload::Beacon => {
                        if let OmegaView::Heartbeat { detectors, .. } = &mut self.omega {
                            if let Some(l) = detectors[to.slot()].on_beacon(from, t) {
                                self.note_leader(to, l);
                            }
                        }
                    }
                }
            }
            Kind::HeartbeatTick(pid) => {
                for q in self.sc.cfg.processes().filter(|&q| q != pid) {
                    self.send(pid, q, Payload::Beacon);
                }
                if let OmegaView::Heartbeat { detectors, .. } = &mut self.omega {
                    if let Some(l) = detectors[pid.slot()].on_tick(t) {
                        self.note_leader(pid, l);
                    }
                }
                self.push(t + self.delta(), Kind::HeartbeatTick(pid));
            }
            Kind::Timer(pid, gen) => {
                if gen != self.timer_gen[pid.slot()] {
                    return;
                }
                self.events.push(Event::TimerFired { t, pid });
                let leader = self.omega.leader(pid, t).expect("live process queries Ω");
                self.note_leader(pid, leader);
                let step = self.state(pid).on_timer(leader);
                self.apply(pid, step);
            }
        }
    }

    fn run(mut self) -> Result<Trace, SimError> {
        let sc = self.sc;
        for c in &sc.crashes {
            self.push(c.time, Kind::Crash(c.pid));
        }
        for pid in sc.cfg.processes() {
            self.push(0, Kind::Start(pid));
            if sc.omega.mode == OmegaMode::Heartbeat {
                self.push(0, Kind::HeartbeatTick(pid));
            }
        }
        for c in &sc.calls {
            self.push(c.time, Kind::Call(c.pid, c.value));
        }
        while let Some(Reverse(q)) = self.queue.pop() {
            if q.time > sc.horizon {
                self.queue.push(Reverse(q));
                break;
            }
            self.now = q.time;
            if let Some(resume) = self.frozen(&q.kind) {
                self.push(resume, q.kind);
                continue;
            }
            self.step(q.kind);
        }
        let mut stranded = self.queue.iter().filter_map(|Reverse(q)| match &q.kind {
            Kind::Deliver {
                from,
                to,
                sent_at,
                payload,
            } if *sent_at < sc.cfg.gst => {
                let correct = |p: &ProcessId| sc.crash_time(*p).is_none();
                (correct(from) && correct(to)).then(|| format!("{payload} from {from} to {to} sent at {sent_at}"))
            }
            _ => None,
        });
        if let Some(detail) = stranded.next() {
            return Err(SimError::HorizonTooShort {
                horizon: sc.horizon,
                detail: format!("pre-GST message still in flight: {detail}"),
            });
        }
        let trace = Trace {
            scenario: sc.clone(),
            events: self.events,
        };
        trace.check_invariants().map_err(SimError::Invariant)?;
        Ok(trace)
    }
}

/// Executes a scenario to its horizon (or until nothing is left to happen).
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    scenario.validate()?;
    Sim::new(scenario).run()
}

/// Re-executes the scenario embedded in a trace file and compares the result
/// line by line.
pub fn replay(text: &str) -> Result<Trace, ReplayError> {
    let scenario = Trace::parse_scenario(text)?;
    let trace = run(&scenario)?;
    let rendered = trace.render();
    let mut recorded = text.lines();
    let mut replayed = rendered.lines();
    for line in 1.. {
        match (recorded.next(), replayed.next()) {
            (None, None) => break,
            (a, b) if a == b => {}
            (a, b) => {
                return Err(ReplayError::Diverged {
                    line,
                    recorded: a.unwrap_or("<end of file>").to_string(),
                    replayed: b.unwrap_or("<end of run>").to_string(),
                })
            }
        }
    }
    Ok(trace)
}

/// Convenience for the common "did everybody decide, and what" question.
pub fn decided_values(trace: &Trace) -> Vec<(ProcessId, Value)> {
    trace.decisions().into_iter().map(|(p, v, _)| (p, v)).collect()
}
