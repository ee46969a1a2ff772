//! Ω, the eventual leader oracle that gates new slow ballots.
//!
//! Two implementations share one query surface: an omniscient oracle that
//! reads the simulator's crash set, and a heartbeat detector that only sees
//! beacons arriving over the simulated network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ProcessId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OmegaError {
    #[error("{0} has crashed and cannot query Ω")]
    Crashed(ProcessId),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaMode {
    #[default]
    Oracle,
    Heartbeat,
}

/// Ω settings carried by a scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OmegaSpec {
    pub mode: OmegaMode,
    /// Heartbeat suspicion timeout in ticks; defaults to 2Δ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout: Option<u64>,
}

/// Lowest-id process for which `alive` holds.
pub fn lowest_alive(n: usize, alive: impl Fn(ProcessId) -> bool) -> Option<ProcessId> {
    ProcessId::all(n).find(|&p| alive(p))
}

/// Oracle Ω: after GST every query returns the lowest-id live process.
/// Before GST the answer is arbitrary, drawn from `pre_gst_seed` so that the
/// same scenario always sees the same answers.
#[derive(Clone, Debug)]
pub struct OracleOmega {
    n: usize,
    gst: u64,
    delta: u64,
    crashed: Vec<bool>,
    pre_gst_seed: Option<u64>,
}

impl OracleOmega {
    pub fn new(n: usize, gst: u64, delta: u64, pre_gst_seed: Option<u64>) -> Self {
        OracleOmega {
            n,
            gst,
            delta,
            crashed: vec![false; n],
            pre_gst_seed,
        }
    }

    pub fn mark_crashed(&mut self, pid: ProcessId) {
        self.crashed[pid.slot()] = true;
    }

    pub fn leader(&self, pid: ProcessId, now: u64) -> Result<ProcessId, OmegaError> {
        if self.crashed[pid.slot()] {
            return Err(OmegaError::Crashed(pid));
        }
        if let Some(seed) = self.pre_gst_seed.filter(|_| now < self.gst) {
            let epoch = now / self.delta;
            let mix = seed ^ (pid.index() as u64).rotate_left(40) ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(mix);
            return Ok(ProcessId::new(rng.random_range(1..=self.n)));
        }
        Ok(lowest_alive(self.n, |p| !self.crashed[p.slot()]).unwrap_or(pid))
    }
}

/// Heartbeat-based Ω for one process.
///
/// Beacons go out every Δ. A peer is suspected once it has been silent for
/// more than `2Δ + timeout`; the estimate is the lowest unsuspected id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeartbeatDetector {
    pid: ProcessId,
    delta: u64,
    timeout: u64,
    last_heard: Vec<u64>,
    leader: ProcessId,
}

impl HeartbeatDetector {
    pub fn new(pid: ProcessId, n: usize, delta: u64, timeout: u64, now: u64) -> Self {
        HeartbeatDetector {
            pid,
            delta,
            timeout,
            last_heard: vec![now; n],
            leader: ProcessId::new(1),
        }
    }

    pub fn leader(&self) -> ProcessId {
        self.leader
    }

    pub fn suspects(&self, q: ProcessId, now: u64) -> bool {
        q != self.pid && now.saturating_sub(self.last_heard[q.slot()]) > 2 * self.delta + self.timeout
    }

    /// Records a beacon; returns the new estimate if it changed.
    pub fn on_beacon(&mut self, from: ProcessId, now: u64) -> Option<ProcessId> {
        let slot = &mut self.last_heard[from.slot()];
        *slot = (*slot).max(now);
        self.refresh(now)
    }

    /// Periodic tick; the caller broadcasts a beacon alongside. Returns the
    /// new estimate if it changed.
    pub fn on_tick(&mut self, now: u64) -> Option<ProcessId> {
        self.refresh(now)
    }

    fn refresh(&mut self, now: u64) -> Option<ProcessId> {
        let n = self.last_heard.len();
        let next = lowest_alive(n, |q| !self.suspects(q, now)).unwrap_or(self.pid);
        if next != self.leader {
            self.leader = next;
            Some(next)
        } else {
            None
        }
    }
}

/// The Ω instance driving a whole simulated system.
#[derive(Clone, Debug)]
pub enum OmegaView {
    Oracle(OracleOmega),
    Heartbeat {
        detectors: Vec<HeartbeatDetector>,
        crashed: Vec<bool>,
    },
}

impl OmegaView {
    pub fn mode(&self) -> OmegaMode {
        match self {
            OmegaView::Oracle(_) => OmegaMode::Oracle,
            OmegaView::Heartbeat { .. } => OmegaMode::Heartbeat,
        }
    }

    /// `pid`'s current leader estimate.
    pub fn leader(&self, pid: ProcessId, now: u64) -> Result<ProcessId, OmegaError> {
        match self {
            OmegaView::Oracle(o) => o.leader(pid, now),
            OmegaView::Heartbeat { detectors, crashed } => {
                if crashed[pid.slot()] {
                    return Err(OmegaError::Crashed(pid));
                }
                Ok(detectors[pid.slot()].leader())
            }
        }
    }

    pub fn mark_crashed(&mut self, pid: ProcessId) {
        match self {
            OmegaView::Oracle(o) => o.mark_crashed(pid),
            OmegaView::Heartbeat { crashed, .. } => crashed[pid.slot()] = true,
        }
    }
}
