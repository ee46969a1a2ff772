//! Domain types shared by the protocol, the simulator and the checkers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("fast threshold e={e} must satisfy 1 <= e <= f (f={f})")]
    BadThresholds { e: usize, f: usize },
    #[error("n={n} is below the bound {required} for the {variant} variant (e={e}, f={f})")]
    BelowBound {
        n: usize,
        e: usize,
        f: usize,
        variant: Variant,
        required: usize,
    },
    #[error("the system needs at least 3 processes, got n={0}")]
    TooFewProcesses(usize),
    #[error("delta must be positive")]
    ZeroDelta,
    #[error("value domain must be non-empty, strictly increasing and free of bottom")]
    BadDomain,
    #[error("cannot parse {what} from {input:?}")]
    Parse { what: &'static str, input: String },
}

/// A process identifier, 1-based as in `p1..pn`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(u32);

impl ProcessId {
    pub fn new(index: usize) -> Self {
        assert!(index >= 1, "process ids are 1-based");
        ProcessId(index as u32)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Zero-based position, handy for indexing per-process vectors.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    /// All process ids `p1..pn`.
    pub fn all(n: usize) -> impl Iterator<Item = ProcessId> + Clone {
        (1..=n).map(ProcessId::new)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl FromStr for ProcessId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ModelError::Parse {
            what: "process id",
            input: s.to_string(),
        };
        let digits = s.trim().strip_prefix('p').ok_or_else(err)?;
        let index: u32 = digits.parse().map_err(|_| err())?;
        if index == 0 {
            return Err(err());
        }
        Ok(ProcessId(index))
    }
}

/// A proposal value. `Bottom` sorts strictly below every proper value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Bottom,
    Val(u32),
}

impl Value {
    pub fn is_bottom(self) -> bool {
        self == Value::Bottom
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bottom => f.write_str("bot"),
            Value::Val(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Value {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "bot" => Ok(Value::Bottom),
            other => other.parse().map(Value::Val).map_err(|_| ModelError::Parse {
                what: "value",
                input: s.to_string(),
            }),
        }
    }
}

macro_rules! serde_via_display {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

serde_via_display!(ProcessId);
serde_via_display!(Value);

/// Ballot number. Ballot 0 is the fast ballot; all others are slow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ballot(pub u64);

impl Ballot {
    pub const FAST: Ballot = Ballot(0);

    pub fn is_fast(self) -> bool {
        self.0 == 0
    }

    /// The process that coordinates this slow ballot: `p_i` with `i ≡ b (mod n)`.
    pub fn owner(self, n: usize) -> Option<ProcessId> {
        if self.is_fast() {
            return None;
        }
        let rem = (self.0 % n as u64) as usize;
        Some(ProcessId::new(if rem == 0 { n } else { rem }))
    }

    /// Smallest ballot strictly above `self` owned by `pid`.
    pub fn next_owned(self, pid: ProcessId, n: usize) -> Ballot {
        let n = n as u64;
        let residue = pid.index() as u64 % n;
        let mut b = self.0 + 1;
        let off = (residue + n - b % n) % n;
        b += off;
        Ballot(b)
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Every process starts with an input value.
    Task,
    /// Processes call `propose(v)` explicitly, possibly never.
    Object,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Task => "task",
            Variant::Object => "object",
        })
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "task" => Ok(Variant::Task),
            "object" => Ok(Variant::Object),
            other => Err(ModelError::Parse {
                what: "variant",
                input: other.to_string(),
            }),
        }
    }
}

/// Deliberate protocol bugs, used to show that the checkers catch them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Fast decision no longer requires the proposer's own vote to be intact.
    DropFastValGuard,
}

/// Smallest process count for an `f`-resilient `e`-two-step protocol.
pub fn required_n(e: usize, f: usize, variant: Variant) -> Result<usize, ModelError> {
    if e < 1 || e > f {
        return Err(ModelError::BadThresholds { e, f });
    }
    Ok(bound(e, f, variant))
}

/// The bound formula without the `1 <= e` restriction.
fn bound(e: usize, f: usize, variant: Variant) -> usize {
    let fast = match variant {
        Variant::Task => 2 * e + f,
        Variant::Object => (2 * e + f).saturating_sub(1),
    };
    fast.max(2 * f + 1)
}

pub const DEFAULT_DELTA: u64 = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub n: usize,
    pub e: usize,
    pub f: usize,
    pub variant: Variant,
    /// Message delay bound after GST, in ticks.
    pub delta: u64,
    pub gst: u64,
    pub value_domain: Vec<Value>,
    /// Skip the process-count bound check (tightness experiments).
    #[serde(default)]
    pub allow_below_bound: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
}

impl Config {
    /// A validated configuration with the default domain `{0,1,2}` and Δ = 10 ticks.
    pub fn new(n: usize, e: usize, f: usize, variant: Variant) -> Result<Self, ModelError> {
        let cfg = Config {
            n,
            e,
            f,
            variant,
            delta: DEFAULT_DELTA,
            gst: 0,
            value_domain: (0..=2).map(Value::Val).collect(),
            allow_below_bound: false,
            mutation: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same as [`Config::new`] but at the smallest admissible `n`.
    pub fn at_bound(e: usize, f: usize, variant: Variant) -> Result<Self, ModelError> {
        Config::new(required_n(e, f, variant)?, e, f, variant)
    }

    /// A configuration that is allowed to sit below the process-count bound.
    pub fn below_bound(n: usize, e: usize, f: usize, variant: Variant) -> Result<Self, ModelError> {
        let cfg = Config {
            n,
            e,
            f,
            variant,
            delta: DEFAULT_DELTA,
            gst: 0,
            value_domain: (0..=2).map(Value::Val).collect(),
            allow_below_bound: true,
            mutation: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_domain(mut self, domain: Vec<Value>) -> Result<Self, ModelError> {
        self.value_domain = domain;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: u64) -> Result<Self, ModelError> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_gst(mut self, gst: u64) -> Self {
        self.gst = gst;
        self
    }

    pub fn with_mutation(mut self, mutation: Option<Mutation>) -> Self {
        self.mutation = mutation;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.e > self.f {
            return Err(ModelError::BadThresholds { e: self.e, f: self.f });
        }
        if self.n < 3 {
            return Err(ModelError::TooFewProcesses(self.n));
        }
        if self.delta == 0 {
            return Err(ModelError::ZeroDelta);
        }
        let sorted = self.value_domain.windows(2).all(|w| w[0] < w[1]);
        if self.value_domain.is_empty() || !sorted || self.value_domain.iter().any(|v| v.is_bottom()) {
            return Err(ModelError::BadDomain);
        }
        let required = bound(self.e, self.f, self.variant);
        if !self.allow_below_bound && self.n < required {
            return Err(ModelError::BelowBound {
                n: self.n,
                e: self.e,
                f: self.f,
                variant: self.variant,
                required,
            });
        }
        Ok(())
    }

    pub fn fast_quorum(&self) -> usize {
        self.n - self.e
    }

    pub fn slow_quorum(&self) -> usize {
        self.n - self.f
    }

    /// Whether this configuration sits below the process-count bound.
    pub fn is_below_bound(&self) -> bool {
        self.n < bound(self.e, self.f, self.variant)
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + Clone {
        ProcessId::all(self.n)
    }
}

/// Contents of a 1B message.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OneB {
    pub ballot: Ballot,
    pub vbal: Ballot,
    pub val: Option<Value>,
    pub val_proposer: Option<ProcessId>,
    pub decided: Option<Value>,
    /// Sender's initial value; only the object variant reads it.
    pub initial: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Message {
    Propose { value: Value, proposer: ProcessId },
    OneA { ballot: Ballot },
    OneB(OneB),
    TwoA { ballot: Ballot, value: Value },
    TwoB { ballot: Ballot, value: Value },
    Decide { value: Value },
}

fn opt<T: fmt::Display>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Canonical single-token encoding used in trace files.
impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Propose { value, proposer } => write!(f, "propose({value},{proposer})"),
            Message::OneA { ballot } => write!(f, "1a({ballot})"),
            Message::OneB(b) => write!(
                f,
                "1b({},{},{},{},{},{})",
                b.ballot,
                b.vbal,
                opt(&b.val),
                opt(&b.val_proposer),
                opt(&b.decided),
                b.initial
            ),
            Message::TwoA { ballot, value } => write!(f, "2a({ballot},{value})"),
            Message::TwoB { ballot, value } => write!(f, "2b({ballot},{value})"),
            Message::Decide { value } => write!(f, "decide({value})"),
        }
    }
}

impl FromStr for Message {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ModelError::Parse {
            what: "message",
            input: s.to_string(),
        };
        let (kind, rest) = s.split_once('(').ok_or_else(err)?;
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(err)?.split(',').collect();
        let ballot = |a: &str| a.parse::<u64>().map(Ballot).map_err(|_| err());
        let opt_val = |a: &str| -> Result<Option<Value>, ModelError> {
            if a == "-" {
                Ok(None)
            } else {
                a.parse().map(Some)
            }
        };
        let msg = match (kind, args.as_slice()) {
            ("propose", [v, p]) => Message::Propose {
                value: v.parse()?,
                proposer: p.parse()?,
            },
            ("1a", [b]) => Message::OneA { ballot: ballot(b)? },
            ("1b", [b, vb, v, p, d, i]) => Message::OneB(OneB {
                ballot: ballot(b)?,
                vbal: ballot(vb)?,
                val: opt_val(v)?,
                val_proposer: if *p == "-" { None } else { Some(p.parse()?) },
                decided: opt_val(d)?,
                initial: i.parse()?,
            }),
            ("2a", [b, v]) => Message::TwoA {
                ballot: ballot(b)?,
                value: v.parse()?,
            },
            ("2b", [b, v]) => Message::TwoB {
                ballot: ballot(b)?,
                value: v.parse()?,
            },
            ("decide", [v]) => Message::Decide { value: v.parse()? },
            _ => return Err(err()),
        };
        Ok(msg)
    }
}

/// Output of a protocol handler; the simulator turns these into I/O.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    Send {
        to: ProcessId,
        msg: Message,
    },
    /// Send to every process other than the emitter.
    Broadcast {
        msg: Message,
    },
    Decided(Value),
    SetTimer(u64),
    StopTimer,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn required_n_examples() {
        assert_eq!(required_n(2, 2, Variant::Task), Ok(6));
        assert_eq!(required_n(2, 2, Variant::Object), Ok(5));
        assert_eq!(required_n(1, 1, Variant::Task), Ok(3));
        assert_eq!(required_n(1, 3, Variant::Object), Ok(7));
        assert!(required_n(3, 2, Variant::Task).is_err());
        assert!(required_n(0, 2, Variant::Task).is_err());
    }

    #[test]
    fn task_needs_one_more_exactly_when_fast_term_dominates() {
        for e in 1..=4 {
            for f in e..=4 {
                let task = required_n(e, f, Variant::Task).unwrap();
                let object = required_n(e, f, Variant::Object).unwrap();
                if 2 * e + f >= 2 * f + 2 {
                    assert_eq!(task, object + 1, "e={e} f={f}");
                } else {
                    assert_eq!(task, 2 * f + 1);
                    assert_eq!(object, 2 * f + 1);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(Config::new(6, 2, 2, Variant::Task).is_ok());
        assert!(matches!(
            Config::new(5, 2, 2, Variant::Task),
            Err(ModelError::BelowBound { required: 6, .. })
        ));
        assert!(Config::new(5, 2, 2, Variant::Object).is_ok());
        assert!(Config::below_bound(5, 2, 2, Variant::Task).is_ok());
        assert!(Config::below_bound(4, 2, 2, Variant::Object).is_ok());
        assert!(Config::new(5, 3, 2, Variant::Task).is_err());
        let cfg = Config::new(3, 1, 1, Variant::Task).unwrap();
        assert_eq!(
            cfg.clone().with_domain(vec![Value::Bottom, Value::Val(1)]),
            Err(ModelError::BadDomain)
        );
        assert_eq!(
            cfg.clone().with_domain(vec![Value::Val(2), Value::Val(1)]),
            Err(ModelError::BadDomain)
        );
        assert_eq!(cfg.with_delta(0), Err(ModelError::ZeroDelta));
    }

    #[test]
    fn ballot_ownership() {
        assert_eq!(Ballot(0).owner(3), None);
        assert_eq!(Ballot(2).owner(3), Some(ProcessId::new(2)));
        assert_eq!(Ballot(3).owner(3), Some(ProcessId::new(3)));
        assert_eq!(Ballot(0).next_owned(ProcessId::new(2), 3), Ballot(2));
        assert_eq!(Ballot(2).next_owned(ProcessId::new(2), 3), Ballot(5));
        assert_eq!(Ballot(0).next_owned(ProcessId::new(3), 3), Ballot(3));
        assert_eq!(Ballot(4).next_owned(ProcessId::new(1), 3), Ballot(7));
    }

    #[test]
    fn message_text_encoding() {
        let msgs = [
            Message::Propose {
                value: Value::Val(1),
                proposer: ProcessId::new(2),
            },
            Message::OneA { ballot: Ballot(4) },
            Message::OneB(OneB {
                ballot: Ballot(2),
                vbal: Ballot(0),
                val: Some(Value::Val(5)),
                val_proposer: Some(ProcessId::new(3)),
                decided: None,
                initial: Value::Bottom,
            }),
            Message::TwoA {
                ballot: Ballot(1),
                value: Value::Val(6),
            },
            Message::TwoB {
                ballot: Ballot(0),
                value: Value::Val(4),
            },
            Message::Decide { value: Value::Val(4) },
        ];
        let text: Vec<String> = msgs.iter().map(|m| m.to_string()).collect();
        assert_eq!(
            text,
            [
                "propose(1,p2)",
                "1a(4)",
                "1b(2,0,5,p3,-,bot)",
                "2a(1,6)",
                "2b(0,4)",
                "decide(4)"
            ]
        );
        for (m, t) in msgs.iter().zip(&text) {
            assert_eq!(&t.parse::<Message>().unwrap(), m);
        }
        assert!("2b(0)".parse::<Message>().is_err());
        assert!("p0".parse::<ProcessId>().is_err());
    }

    fn value() -> impl Strategy<Value = Value> {
        prop_oneof![Just(Value::Bottom), (0u32..5).prop_map(Value::Val)]
    }

    proptest! {
        #[test]
        fn value_order_is_total_and_bottom_is_least(a in value(), b in value(), c in value()) {
            let relations = [a < b, a == b, a > b].iter().filter(|x| **x).count();
            prop_assert_eq!(relations, 1);
            if a <= b && b <= c {
                prop_assert!(a <= c);
            }
            if !a.is_bottom() {
                prop_assert!(Value::Bottom < a);
            }
        }

        #[test]
        fn next_owned_is_smallest_owned_ballot(bal in 0u64..100, n in 3usize..9, i in 1usize..9) {
            prop_assume!(i <= n);
            let pid = ProcessId::new(i);
            let b = Ballot(bal).next_owned(pid, n);
            prop_assert!(b.0 > bal);
            prop_assert_eq!(b.owner(n), Some(pid));
            for smaller in bal + 1..b.0 {
                prop_assert_ne!(Ballot(smaller).owner(n), Some(pid));
            }
        }
    }
}
