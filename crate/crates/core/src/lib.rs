//! Two-step consensus: a protocol that decides in two message delays when at
//! most `e` processes crash and stays safe with up to `f` crashes, in a task
//! variant (every process starts with an input) and an object variant
//! (processes invoke `propose()`).
//!
//! - [`model`]: identifiers, values, ballots, configurations, messages.
//! - [`protocol`]: the per-process state machine and [`protocol::compute_proposal`].
//! - [`omega`]: eventual leader election.
//! - [`simnet`]: deterministic simulator, scenarios, traces, replay.
//! - [`checker`]: property checks, exhaustive two-step checks, the recovery
//!   oracle, and the fuzzer.

pub mod checker;
pub mod exec;
pub mod model;
pub mod omega;
pub mod protocol;
pub mod simnet;

pub use exec::Exec;
pub use model::{required_n, Ballot, Config, Message, ModelError, Mutation, OneB, ProcessId, Value, Variant};
pub use protocol::{compute_proposal, ProcessState, ProtocolError};
