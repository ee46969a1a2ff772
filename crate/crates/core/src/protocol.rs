//! The per-process consensus state machine.
//!
//! Ballot 0 is leaderless: every proposer broadcasts `Propose`, and a process
//! votes (with a `2B(0, v)` back to the proposer) for the first proposal it can
//! accept. A proposer that collects `n - e` votes, itself included, decides
//! after two message delays. When that fails, the process that Ω designates
//! runs a Paxos-style slow ballot (`1A`/`1B`/`2A`/`2B`) with quorums of
//! `n - f`, recovering any value that might have been decided on the fast
//! path via [`compute_proposal`].
//!
//! Handlers never perform I/O. They mutate the state and return a list of
//! [`Effect`]s for the driver to execute. A state must be driven by one caller
//! at a time; distinct states are independent.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{Ballot, Config, Effect, Message, Mutation, OneB, ProcessId, Value, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("task variant processes need a non-bottom initial value")]
    BottomInitial,
    #[error("object variant processes start without a proposal")]
    InitialInObject,
    #[error("propose() exists only in the object variant")]
    ProposeInTask,
    #[error("cannot propose bottom")]
    ProposeBottom,
    #[error("{0} already called propose()")]
    AlreadyProposed(ProcessId),
    #[error("{pid} decided {held} but received Decide({received})")]
    ConflictingDecide {
        pid: ProcessId,
        held: Value,
        received: Value,
    },
    #[error("{pid} received a 1B for ballot {ballot}, which it does not own")]
    ForeignBallot { pid: ProcessId, ballot: Ballot },
    #[error("malformed 1B reply set: {0}")]
    MalformedReplies(String),
}

/// Protocol variables of one process.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessState {
    pid: ProcessId,
    cfg: Config,
    bal: Ballot,
    vbal: Ballot,
    val: Option<Value>,
    val_proposer: Option<ProcessId>,
    initial_val: Value,
    decided: Option<Value>,
    /// An explicit ballot-0 vote (a `2B(0, _)`) has been sent.
    voted_fast: bool,
    proposed: bool,
    fast_votes: BTreeMap<Value, BTreeSet<ProcessId>>,
    slow_votes: BTreeMap<(Ballot, Value), BTreeSet<ProcessId>>,
    oneb_replies: BTreeMap<Ballot, Vec<(ProcessId, OneB)>>,
    /// Slow ballots for which this coordinator already issued its 2A.
    recovered: BTreeSet<Ballot>,
    pending_2a: Option<(Ballot, Value)>,
}

pub type Step = Result<Vec<Effect>, ProtocolError>;

impl ProcessState {
    /// Initializes a process and returns its first effects.
    ///
    /// Task processes pass their input; object processes pass `None` and
    /// later call [`ProcessState::propose`].
    pub fn start(cfg: Config, pid: ProcessId, initial: Option<Value>) -> Result<(Self, Vec<Effect>), ProtocolError> {
        let initial_val = match (cfg.variant, initial) {
            (Variant::Task, Some(v)) if !v.is_bottom() => v,
            (Variant::Task, _) => return Err(ProtocolError::BottomInitial),
            (Variant::Object, None) => Value::Bottom,
            (Variant::Object, Some(_)) => return Err(ProtocolError::InitialInObject),
        };
        let mut state = ProcessState {
            pid,
            cfg,
            bal: Ballot::FAST,
            vbal: Ballot::FAST,
            val: None,
            val_proposer: None,
            initial_val,
            decided: None,
            voted_fast: false,
            proposed: false,
            fast_votes: BTreeMap::new(),
            slow_votes: BTreeMap::new(),
            oneb_replies: BTreeMap::new(),
            recovered: BTreeSet::new(),
            pending_2a: None,
        };
        let mut effects = Vec::new();
        if state.cfg.variant == Variant::Task {
            state.proposed = true;
            state.self_vote(initial_val);
            effects.push(Effect::Broadcast {
                msg: Message::Propose {
                    value: initial_val,
                    proposer: pid,
                },
            });
        }
        effects.push(Effect::SetTimer(2 * state.cfg.delta));
        if state.cfg.variant == Variant::Task {
            state.try_fast_decide(initial_val, &mut effects);
        }
        Ok((state, effects))
    }

    pub fn pid(&self) -> ProcessId {
        self.pid
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn bal(&self) -> Ballot {
        self.bal
    }

    pub fn vbal(&self) -> Ballot {
        self.vbal
    }

    pub fn val(&self) -> Option<Value> {
        self.val
    }

    pub fn val_proposer(&self) -> Option<ProcessId> {
        self.val_proposer
    }

    pub fn initial_val(&self) -> Value {
        self.initial_val
    }

    pub fn decided(&self) -> Option<Value> {
        self.decided
    }

    pub fn has_voted_fast(&self) -> bool {
        self.voted_fast
    }

    pub fn pending_2a(&self) -> Option<(Ballot, Value)> {
        self.pending_2a
    }

    /// Dispatches a delivered message to its handler.
    pub fn on_message(&mut self, from: ProcessId, msg: &Message) -> Step {
        match msg {
            Message::Propose { value, proposer } => {
                debug_assert_eq!(*proposer, from);
                self.on_propose(from, *value)
            }
            Message::OneA { ballot } => self.on_one_a(from, *ballot),
            Message::OneB(payload) => self.on_one_b(from, payload.clone()),
            Message::TwoA { ballot, value } => self.on_two_a(from, *ballot, *value),
            Message::TwoB { ballot, value } => self.on_two_b(from, *ballot, *value),
            Message::Decide { value } => self.on_decide(*value),
        }
    }

    /// Object variant: `propose(v)`. At most one call per process.
    pub fn propose(&mut self, v: Value) -> Step {
        if self.cfg.variant != Variant::Object {
            return Err(ProtocolError::ProposeInTask);
        }
        if v.is_bottom() {
            return Err(ProtocolError::ProposeBottom);
        }
        if self.proposed {
            return Err(ProtocolError::AlreadyProposed(self.pid));
        }
        self.proposed = true;
        self.initial_val = v;
        let mut effects = Vec::new();
        match self.val {
            None => self.self_vote(v),
            Some(voted) if voted == v => {}
            // Already voted for someone else's value: stay silent.
            Some(_) => return Ok(effects),
        }
        effects.push(Effect::Broadcast {
            msg: Message::Propose {
                value: v,
                proposer: self.pid,
            },
        });
        self.try_fast_decide(v, &mut effects);
        Ok(effects)
    }

    pub fn on_propose(&mut self, from: ProcessId, v: Value) -> Step {
        let acceptable = match self.cfg.variant {
            Variant::Task => v >= self.initial_val,
            Variant::Object => self.initial_val.is_bottom() || self.initial_val == v,
        };
        if from == self.pid
            || v.is_bottom()
            || self.decided.is_some()
            || !self.bal.is_fast()
            || self.voted_fast
            || !acceptable
        {
            return Ok(Vec::new());
        }
        self.voted_fast = true;
        self.val = Some(v);
        self.vbal = Ballot::FAST;
        self.val_proposer = Some(from);
        Ok(vec![Effect::Send {
            to: from,
            msg: Message::TwoB {
                ballot: Ballot::FAST,
                value: v,
            },
        }])
    }

    pub fn on_two_b(&mut self, from: ProcessId, b: Ballot, v: Value) -> Step {
        let mut effects = Vec::new();
        if b.is_fast() {
            if from != self.pid {
                self.fast_votes.entry(v).or_default().insert(from);
            }
            self.try_fast_decide(v, &mut effects);
            return Ok(effects);
        }
        let voters = self.slow_votes.entry((b, v)).or_default();
        voters.insert(from);
        let count = voters.len();
        if self.decided.is_none()
            && b.owner(self.cfg.n) == Some(self.pid)
            && self.pending_2a == Some((b, v))
            && count >= self.cfg.slow_quorum()
        {
            self.decide(v, &mut effects);
        }
        Ok(effects)
    }

    /// The new-ballot timer expired; `leader` is the current Ω output.
    pub fn on_timer(&mut self, leader: ProcessId) -> Step {
        let mut effects = vec![Effect::SetTimer(5 * self.cfg.delta)];
        if leader == self.pid && self.decided.is_none() {
            let b = self.bal.next_owned(self.pid, self.cfg.n);
            let msg = Message::OneA { ballot: b };
            effects.push(Effect::Broadcast { msg: msg.clone() });
            effects.push(Effect::Send { to: self.pid, msg });
        }
        Ok(effects)
    }

    pub fn on_one_a(&mut self, from: ProcessId, b: Ballot) -> Step {
        if b <= self.bal {
            return Ok(Vec::new());
        }
        self.bal = b;
        Ok(vec![Effect::Send {
            to: from,
            msg: Message::OneB(OneB {
                ballot: b,
                vbal: self.vbal,
                val: self.val,
                val_proposer: self.val_proposer,
                decided: self.decided,
                initial: self.initial_val,
            }),
        }])
    }

    pub fn on_one_b(&mut self, from: ProcessId, payload: OneB) -> Step {
        let b = payload.ballot;
        if b.owner(self.cfg.n) != Some(self.pid) {
            return Err(ProtocolError::ForeignBallot {
                pid: self.pid,
                ballot: b,
            });
        }
        if self.recovered.contains(&b) {
            return Ok(Vec::new());
        }
        let quorum_size = self.cfg.slow_quorum();
        let replies = self.oneb_replies.entry(b).or_default();
        if replies.iter().any(|(p, _)| *p == from) {
            return Ok(Vec::new());
        }
        replies.push((from, payload));
        if replies.len() < quorum_size {
            return Ok(Vec::new());
        }
        // The first n-f replies form Q. Later replies only matter when that Q
        // held nothing to propose (object variant): each one is then tried in
        // place of the last member.
        let mut chosen: Vec<(ProcessId, OneB)> = replies[..quorum_size - 1].to_vec();
        chosen.push(replies[replies.len() - 1].clone());
        let quorum: BTreeSet<ProcessId> = chosen.iter().map(|(p, _)| *p).collect();
        let Some(v) = compute_proposal(&chosen, &quorum, &self.cfg, self.initial_val)? else {
            return Ok(Vec::new());
        };
        self.recovered.insert(b);
        self.pending_2a = Some((b, v));
        let mut effects = vec![Effect::Broadcast {
            msg: Message::TwoA { ballot: b, value: v },
        }];
        effects.extend(self.on_two_a(self.pid, b, v)?);
        Ok(effects)
    }

    pub fn on_two_a(&mut self, from: ProcessId, b: Ballot, v: Value) -> Step {
        let fresh = self.vbal < b || (self.vbal == b && self.val == Some(v));
        if b.is_fast() || b < self.bal || !fresh {
            return Ok(Vec::new());
        }
        self.bal = b;
        self.vbal = b;
        self.val = Some(v);
        self.val_proposer = Some(from);
        Ok(vec![Effect::Send {
            to: from,
            msg: Message::TwoB { ballot: b, value: v },
        }])
    }

    pub fn on_decide(&mut self, v: Value) -> Step {
        match self.decided {
            None => {
                let mut effects = Vec::new();
                self.decide(v, &mut effects);
                Ok(effects)
            }
            Some(held) if held == v => Ok(Vec::new()),
            Some(held) => Err(ProtocolError::ConflictingDecide {
                pid: self.pid,
                held,
                received: v,
            }),
        }
    }

    fn self_vote(&mut self, v: Value) {
        self.val = Some(v);
        self.vbal = Ballot::FAST;
        self.val_proposer = Some(self.pid);
    }

    fn decide(&mut self, v: Value, effects: &mut Vec<Effect>) {
        debug_assert!(self.decided.is_none());
        self.decided = Some(v);
        effects.push(Effect::Decided(v));
        effects.push(Effect::Broadcast {
            msg: Message::Decide { value: v },
        });
        effects.push(Effect::StopTimer);
    }

    fn try_fast_decide(&mut self, v: Value, effects: &mut Vec<Effect>) {
        if self.decided.is_some() || !self.bal.is_fast() || v.is_bottom() || v != self.initial_val {
            return;
        }
        let guard_dropped = self.cfg.mutation == Some(Mutation::DropFastValGuard);
        if !guard_dropped && self.val != Some(v) {
            return;
        }
        let support = self.fast_votes.get(&v).map_or(0, BTreeSet::len);
        if support + 1 >= self.cfg.fast_quorum() {
            self.decide(v, effects);
        }
    }
}

/// Chooses the value a slow-ballot coordinator sends in its 2A.
///
/// `replies` are the 1B payloads from exactly the processes in `quorum`
/// (`|quorum| = n - f`). Returns `None` only in the object variant when
/// nothing was ever proposed to anyone in the quorum.
pub fn compute_proposal(
    replies: &[(ProcessId, OneB)],
    quorum: &BTreeSet<ProcessId>,
    cfg: &Config,
    own_initial: Value,
) -> Result<Option<Value>, ProtocolError> {
    if replies.len() != cfg.slow_quorum() {
        return Err(ProtocolError::MalformedReplies(format!(
            "{} replies, expected {}",
            replies.len(),
            cfg.slow_quorum()
        )));
    }
    let senders: BTreeSet<ProcessId> = replies.iter().map(|(p, _)| *p).collect();
    if senders.len() != replies.len() {
        return Err(ProtocolError::MalformedReplies("duplicate sender".into()));
    }
    if &senders != quorum {
        return Err(ProtocolError::MalformedReplies("senders differ from Q".into()));
    }

    if let Some(d) = replies.iter().find_map(|(_, r)| r.decided) {
        return Ok(Some(d));
    }

    let voted = || replies.iter().filter_map(|(_, r)| r.val.map(|v| (r, v)));
    let b_max = voted().map(|(r, _)| r.vbal).max();
    if let Some(b_max) = b_max.filter(|b| !b.is_fast()) {
        let (_, v) = voted().find(|(r, _)| r.vbal == b_max).expect("b_max comes from a vote");
        return Ok(Some(v));
    }

    // Only ballot-0 votes remain. Values proposed from inside Q cannot have
    // been decided fast, so only values with an outside proposer compete.
    let candidates: BTreeSet<Value> = voted()
        .filter(|(r, _)| r.val_proposer.is_some_and(|p| !quorum.contains(&p)))
        .map(|(_, v)| v)
        .collect();
    let threshold = cfg.slow_quorum().saturating_sub(cfg.e);
    let counted: Vec<(usize, Value)> = candidates
        .iter()
        .map(|&c| (voted().filter(|(_, v)| *v == c).count(), c))
        .collect();
    if let Some(&(_, v)) = counted.iter().filter(|(k, _)| *k > threshold).max() {
        return Ok(Some(v));
    }
    if let Some(&(_, v)) = counted.iter().filter(|(k, _)| *k == threshold).max_by_key(|(_, v)| *v) {
        return Ok(Some(v));
    }

    if !own_initial.is_bottom() {
        return Ok(Some(own_initial));
    }
    let reported = replies
        .iter()
        .flat_map(|(_, r)| [r.val, Some(r.initial)])
        .flatten()
        .filter(|v| !v.is_bottom())
        .max();
    Ok(reported)
}
