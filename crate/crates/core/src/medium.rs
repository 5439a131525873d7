//! Shared single-channel medium with a binary radio-range model.
//!
//! Propagation delay is zero and out-of-range energy is invisible. Any
//! overlap of two in-range frames at a receiver destroys the payload of
//! the frame being received; a receiver's own transmission never collides
//! with its reception, it only adds residual self-interference.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::frame::{Frame, NodeId};
use crate::phy::{allowed_async, AsyncVerdict, Estimation, LinkModel, RadioAction, RadioState};

pub type TxId = u64;
pub const AP: NodeId = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge {0}-{1} names a node outside 0..{2}")]
    UnknownNode(NodeId, NodeId, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("mobile node {0} is not in range of the AP")]
    DetachedMobile(NodeId),
}

/// Reciprocal in-range relation over nodes `0..n`, node 0 being the AP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    adj: Vec<bool>,
}

impl Topology {
    pub fn new(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::TooFewNodes(n));
        }
        let mut adj = vec![false; n * n];
        for &(a, b) in edges {
            if usize::from(a) >= n || usize::from(b) >= n {
                return Err(TopologyError::UnknownNode(a, b, n));
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            adj[usize::from(a) * n + usize::from(b)] = true;
            adj[usize::from(b) * n + usize::from(a)] = true;
        }
        let t = Topology { n, adj };
        if let Some(m) = (1..n as NodeId).find(|&m| !t.in_range(AP, m)) {
            return Err(TopologyError::DetachedMobile(m));
        }
        Ok(t)
    }

    /// Every pair in range.
    pub fn clique(n: usize) -> Result<Self, TopologyError> {
        let edges: Vec<_> = (0..n as NodeId)
            .flat_map(|a| (a + 1..n as NodeId).map(move |b| (a, b)))
            .collect();
        Self::new(n, &edges)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.adj[usize::from(a) * self.n + usize::from(b)]
    }

    pub fn neighbors(&self, a: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.n as NodeId).filter(move |&b| self.in_range(a, b))
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        (0..self.n as NodeId)
            .flat_map(|a| (a + 1..self.n as NodeId).map(move |b| (a, b)))
            .filter(|&(a, b)| self.in_range(a, b))
            .collect()
    }
}

/// One frame on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub id: TxId,
    pub src: NodeId,
    pub dst: NodeId,
    pub frame: Frame,
    pub start_us: u64,
    pub end_us: u64,
    /// Estimation mode at the intended receiver.
    pub mode: Estimation,
}

impl Transmission {
    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.start_us < other.end_us && other.start_us < self.end_us
    }

    pub fn on_air_at(&self, t: u64) -> bool {
        self.start_us <= t && t < self.end_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reception {
    Decoded,
    Collided,
    NotInRange,
    /// In range and alone, but bit errors corrupted the payload.
    Corrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MediumError {
    #[error("node {node} started a transmission at {at_us} us while {state:?}")]
    PhyConstraintViolation {
        node: NodeId,
        at_us: u64,
        state: RadioState,
    },
}

/// Decide the fate of `t` at `rx`, given every transmission that may have
/// overlapped it. A half-duplex receiver (`full_duplex == false`) loses any
/// frame that overlaps its own transmission. Draws from `rng` only when a
/// decode probability strictly between 0 and 1 has to be sampled.
#[allow(clippy::too_many_arguments)]
pub fn resolve_reception<R: Rng + ?Sized>(
    topo: &Topology,
    link: &LinkModel,
    snr_db: f64,
    rx: NodeId,
    full_duplex: bool,
    t: &Transmission,
    concurrent: &[Transmission],
    rng: &mut R,
) -> Reception {
    if !topo.in_range(rx, t.src) {
        return Reception::NotInRange;
    }
    let mut self_interference = false;
    let mut early_own_tx = false;
    for o in concurrent {
        if o.id == t.id || !o.overlaps(t) {
            continue;
        }
        if o.src == rx {
            if !full_duplex {
                return Reception::Collided;
            }
            self_interference = true;
            early_own_tx |= o.start_us < t.start_us;
        } else if topo.in_range(rx, o.src) {
            return Reception::Collided;
        }
    }
    let est = if early_own_tx {
        Estimation::Dirty
    } else {
        Estimation::Clean
    };
    let p = link.decode_prob(snr_db, self_interference, est, t.frame.payload.len());
    let ok = if p >= 1.0 {
        true
    } else if p <= 0.0 {
        false
    } else {
        rng.gen::<f64>() < p
    };
    if ok {
        Reception::Decoded
    } else {
        Reception::Corrupted
    }
}

/// Live view of what is on the air.
#[derive(Debug, Clone)]
pub struct Medium {
    topo: Topology,
    active: Vec<Transmission>,
    recent: VecDeque<Transmission>,
    next_id: TxId,
}

impl Medium {
    pub fn new(topo: Topology) -> Self {
        Medium {
            topo,
            active: Vec::new(),
            recent: VecDeque::new(),
            next_id: 0,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn active(&self) -> &[Transmission] {
        &self.active
    }

    pub fn is_transmitting(&self, node: NodeId, at_us: u64) -> bool {
        self.active
            .iter()
            .any(|t| t.src == node && t.on_air_at(at_us))
    }

    /// Locked onto an in-range frame addressed to `node` that began before
    /// `at_us`. Overheard frames addressed elsewhere do not count: a
    /// listener drops them once their header is decoded.
    pub fn is_receiving(&self, node: NodeId, at_us: u64) -> bool {
        self.active.iter().any(|t| {
            t.dst == node
                && t.start_us < at_us
                && at_us < t.end_us
                && self.topo.in_range(node, t.src)
        })
    }

    pub fn radio_state(&self, node: NodeId, at_us: u64) -> RadioState {
        if self.is_receiving(node, at_us) {
            RadioState::Receiving
        } else if self.is_transmitting(node, at_us) {
            RadioState::Transmitting
        } else {
            RadioState::Idle
        }
    }

    /// Busy iff a neighbor's frame is on the air at `at_us`.
    pub fn carrier_sense(&self, node: NodeId, at_us: u64) -> bool {
        self.active
            .iter()
            .any(|t| t.src != node && t.on_air_at(at_us) && self.topo.in_range(node, t.src))
    }

    /// Put a frame on the air. Fails if the PHY forbids `src` to start
    /// transmitting now.
    pub fn begin_tx(
        &mut self,
        src: NodeId,
        frame: Frame,
        start_us: u64,
        airtime_us: u64,
    ) -> Result<Transmission, MediumError> {
        let state = self.radio_state(src, start_us);
        if allowed_async(state, RadioAction::StartTx) == AsyncVerdict::Forbidden {
            return Err(MediumError::PhyConstraintViolation {
                node: src,
                at_us: start_us,
                state,
            });
        }
        let dst = frame.mac.da;
        let mode = if self.is_transmitting(dst, start_us)
            && self
                .active
                .iter()
                .any(|t| t.src == dst && t.start_us < start_us)
        {
            Estimation::Dirty
        } else {
            Estimation::Clean
        };
        let tx = Transmission {
            id: self.next_id,
            src,
            dst,
            frame,
            start_us,
            end_us: start_us + airtime_us,
            mode,
        };
        self.next_id += 1;
        self.active.push(tx.clone());
        Ok(tx)
    }

    /// Take a finished frame off the air, returning it with every frame
    /// that overlapped it.
    pub fn end_tx(&mut self, id: TxId) -> Option<(Transmission, Vec<Transmission>)> {
        let idx = self.active.iter().position(|t| t.id == id)?;
        let tx = self.active.swap_remove(idx);
        let concurrent: Vec<Transmission> = self
            .active
            .iter()
            .chain(self.recent.iter())
            .filter(|o| o.overlaps(&tx))
            .cloned()
            .collect();
        self.recent.push_back(tx.clone());
        let horizon = self
            .active
            .iter()
            .map(|t| t.start_us)
            .min()
            .unwrap_or(tx.end_us);
        while self.recent.front().is_some_and(|t| t.end_us <= horizon) {
            self.recent.pop_front();
        }
        Some((tx, concurrent))
    }
}
