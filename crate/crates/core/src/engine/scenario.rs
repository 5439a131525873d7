use std::collections::BTreeMap;

use crate::frame::NodeId;
use crate::mac::MacParams;
use crate::medium::{Topology, AP};
use crate::phy::LinkModel;

/// Where a traffic source sends its packets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dest {
    To(NodeId),
    /// Uniformly over every in-range node (the AP picks among its mobiles).
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub at_us: u64,
    pub dest: NodeId,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Traffic {
    None,
    /// The buffer never runs dry.
    Saturated { dest: Dest, bytes: usize },
    Poisson { rate_pps: f64, dest: Dest, bytes: usize },
    List(Vec<Arrival>),
}

/// A complete, validated simulation input.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub traffic: Vec<Traffic>,
    pub mac: Vec<MacParams>,
    pub link: LinkModel,
    pub snr_db: f64,
    /// Per-link SNR, keyed by `(min, max)` node id.
    pub snr_overrides: BTreeMap<(NodeId, NodeId), f64>,
    pub seed: u64,
    pub duration_us: u64,
    pub repeats: u32,
}

impl Scenario {
    pub fn new(topology: Topology) -> Self {
        let n = topology.len();
        Scenario {
            topology,
            traffic: vec![Traffic::None; n],
            mac: vec![MacParams::default(); n],
            link: LinkModel::default(),
            snr_db: 40.0,
            snr_overrides: BTreeMap::new(),
            seed: 1,
            duration_us: 1_000_000,
            repeats: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.topology.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topology.is_empty()
    }

    pub fn snr(&self, a: NodeId, b: NodeId) -> f64 {
        self.snr_overrides
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(self.snr_db)
    }

    /// Apply `f` to every node's MAC parameters.
    pub fn with_mac(mut self, f: impl Fn(NodeId, &mut MacParams)) -> Self {
        for (i, m) in self.mac.iter_mut().enumerate() {
            f(i as NodeId, m);
        }
        self
    }

    /// Destinations a `Dest::Uniform` source at `node` chooses from.
    pub fn uniform_targets(&self, node: NodeId) -> Vec<NodeId> {
        if node == AP {
            self.topology.neighbors(AP).collect()
        } else {
            vec![AP]
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.len();
        if self.duration_us == 0 {
            return Err("duration_us must be positive".into());
        }
        if self.repeats == 0 {
            return Err("repeats must be positive".into());
        }
        if self.traffic.len() != n || self.mac.len() != n {
            return Err("per-node tables do not match the node count".into());
        }
        for (i, m) in self.mac.iter().enumerate() {
            m.validate().map_err(|e| format!("node {i}: {e}"))?;
        }
        self.link.suppression().map_err(|e| e.to_string())?;
        for (i, t) in self.traffic.iter().enumerate() {
            let me = i as NodeId;
            let check = |dest: &Dest, bytes: usize| -> Result<(), String> {
                if bytes == 0 || bytes > usize::from(u16::MAX) {
                    return Err(format!("node {i}: packet size {bytes} out of range"));
                }
                match dest {
                    Dest::To(d) if *d == me => Err(format!("node {i}: sends to itself")),
                    Dest::To(d) if !self.topology.in_range(me, *d) => {
                        Err(format!("node {i}: destination {d} is out of range"))
                    }
                    Dest::Uniform if self.uniform_targets(me).is_empty() => {
                        Err(format!("node {i}: no destinations in range"))
                    }
                    _ => Ok(()),
                }
            };
            match t {
                Traffic::None => {}
                Traffic::Saturated { dest, bytes } => check(dest, *bytes)?,
                Traffic::Poisson {
                    rate_pps,
                    dest,
                    bytes,
                } => {
                    if !(*rate_pps > 0.0 && rate_pps.is_finite()) {
                        return Err(format!("node {i}: poisson rate must be positive"));
                    }
                    check(dest, *bytes)?;
                }
                Traffic::List(arrivals) => {
                    for a in arrivals {
                        check(&Dest::To(a.dest), a.bytes)?;
                    }
                }
            }
        }
        Ok(())
    }
}
