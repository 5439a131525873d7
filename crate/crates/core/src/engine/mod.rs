//! Discrete-event engine: event queue, traffic sources, per-node random
//! streams and metric collection.
//!
//! Every node gets its own ChaCha8 streams derived from the scenario seed:
//! the generator is seeded with `seed` and moved to stream
//! `((node + 1) << 8) | purpose`, where purpose 0 drives the MAC, 1 the
//! traffic source and 2 the decode draws of frames received by the node.

mod metrics;
mod scenario;

pub use metrics::{
    csv_string, hd_cycle_us, normalized_throughput, write_csv, FlowMetrics, MetricsReport,
    CSV_COLUMNS,
};
pub use scenario::{Arrival, Dest, Scenario, Traffic};

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frame::{DupMode, FrameKind, NodeId};
use crate::mac::{Action, Ctx, NodeMac, Packet, TimerKind};
use crate::medium::{resolve_reception, Medium, Reception, Transmission, TxId, AP};
use crate::phy::Estimation;
use crate::trace::TraceRow;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

const MAC_STREAM: u64 = 0;
const TRAFFIC_STREAM: u64 = 1;
const RX_STREAM: u64 = 2;

pub fn node_stream(seed: u64, node: NodeId, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((u64::from(node) + 1) << 8) | purpose);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    TxEnd(TxId),
    Timer {
        node: NodeId,
        kind: TimerKind,
        gen: u64,
    },
    PacketArrival {
        node: NodeId,
        dest: NodeId,
        bytes: usize,
    },
}

/// Ordered by `(time_us, seq)`; `seq` is unique so no two events tie.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time_us: u64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time_us, self.seq).cmp(&(other.time_us, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time_us: u64, kind: EventKind) {
        self.heap.push(Reverse(Event {
            time_us,
            seq: self.seq,
            kind,
        }));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Option<Vec<TraceRow>>,
}

/// Run one simulation of `scn` with its own seed.
pub fn run(scn: &Scenario) -> Result<MetricsReport, RunError> {
    Ok(run_traced(scn, false)?.report)
}

pub fn run_traced(scn: &Scenario, trace: bool) -> Result<RunOutput, RunError> {
    scn.validate().map_err(RunError::Invalid)?;
    let mut e = Engine::new(scn, trace);
    e.start()?;
    e.drain()?;
    e.finish()
}

/// Run every repeat; repeat `r` uses seed `seed + r`.
pub fn run_repeats(scn: &Scenario) -> Result<Vec<MetricsReport>, RunError> {
    (0..scn.repeats)
        .map(|r| {
            let mut s = scn.clone();
            s.seed = scn.seed.wrapping_add(u64::from(r));
            run(&s)
        })
        .collect()
}

struct Engine<'a> {
    scn: &'a Scenario,
    now: u64,
    queue: EventQueue,
    medium: Medium,
    nodes: Vec<NodeMac>,
    mac_rng: Vec<ChaCha8Rng>,
    traffic_rng: Vec<ChaCha8Rng>,
    rx_rng: Vec<ChaCha8Rng>,
    next_packet: u64,
    generated: BTreeMap<(NodeId, NodeId), u64>,
    queue_drops: BTreeMap<(NodeId, NodeId), u64>,
    last_decoded_end: Vec<u64>,
    collisions: u64,
    injection_collisions: u64,
    dirty_receptions: u64,
    fd_busy_us: u64,
    fd_cover_until: u64,
    trace: Option<Vec<TraceRow>>,
}

fn flow(
    flows: &mut BTreeMap<(NodeId, NodeId), FlowMetrics>,
    src: NodeId,
    dst: NodeId,
) -> &mut FlowMetrics {
    flows.entry((src, dst)).or_insert(FlowMetrics {
        src,
        dst,
        generated: 0,
        delivered_packets: 0,
        delivered_bytes: 0,
        dropped: 0,
        queued: 0,
    })
}

fn kind_name(k: FrameKind) -> &'static str {
    match k {
        FrameKind::Data => "DATA",
        FrameKind::Ack => "ACK",
    }
}

impl<'a> Engine<'a> {
    fn new(scn: &'a Scenario, trace: bool) -> Self {
        let n = scn.len();
        let ids = 0..n as NodeId;
        Engine {
            scn,
            now: 0,
            queue: EventQueue::default(),
            medium: Medium::new(scn.topology.clone()),
            nodes: ids
                .clone()
                .map(|i| NodeMac::new(i, n, scn.mac[usize::from(i)].clone(), trace))
                .collect(),
            mac_rng: ids.clone().map(|i| node_stream(scn.seed, i, MAC_STREAM)).collect(),
            traffic_rng: ids
                .clone()
                .map(|i| node_stream(scn.seed, i, TRAFFIC_STREAM))
                .collect(),
            rx_rng: ids.map(|i| node_stream(scn.seed, i, RX_STREAM)).collect(),
            next_packet: 0,
            generated: BTreeMap::new(),
            queue_drops: BTreeMap::new(),
            last_decoded_end: vec![0; n],
            collisions: 0,
            injection_collisions: 0,
            dirty_receptions: 0,
            fd_busy_us: 0,
            fd_cover_until: 0,
            trace: trace.then(Vec::new),
        }
    }

    fn record(&mut self, node: NodeId, event: &'static str, detail: String) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRow {
                time_us: self.now,
                node,
                event,
                detail,
            });
        }
    }

    fn schedule(&mut self, at: u64, kind: EventKind) -> Result<(), RunError> {
        if at < self.now {
            return Err(RunError::Invariant(format!(
                "event {kind:?} scheduled at {at} before now {}",
                self.now
            )));
        }
        self.queue.push(at, kind);
        Ok(())
    }

    fn pick_dest(&mut self, node: NodeId, dest: &Dest) -> NodeId {
        match dest {
            Dest::To(d) => *d,
            Dest::Uniform => {
                let targets = self.scn.uniform_targets(node);
                let i = self.traffic_rng[usize::from(node)].gen_range(0..targets.len());
                targets[i]
            }
        }
    }

    fn make_packet(&mut self, node: NodeId, dest: NodeId, bytes: usize) -> Packet {
        let id = self.next_packet;
        self.next_packet += 1;
        *self.generated.entry((node, dest)).or_default() += 1;
        Packet::new(id, node, dest, bytes, self.now)
    }

    /// Keep saturated buffers deeper than the virtual-contention lookahead.
    fn refill(&mut self, node: NodeId) {
        let i = usize::from(node);
        if let Traffic::Saturated { dest, bytes } = &self.scn.traffic[i] {
            let target = self.nodes[i].params().bufdepth + 2;
            while self.nodes[i].buffer.len() < target {
                let d = self.pick_dest(node, dest);
                let p = self.make_packet(node, d, *bytes);
                self.nodes[i].buffer.push(p);
            }
        }
    }

    fn next_poisson(&mut self, node: NodeId) -> Result<(), RunError> {
        if let Traffic::Poisson {
            rate_pps,
            dest,
            bytes,
        } = &self.scn.traffic[usize::from(node)]
        {
            let u: f64 = self.traffic_rng[usize::from(node)].gen();
            let gap_us = (-(1.0 - u).ln() / rate_pps * 1e6).ceil().max(1.0) as u64;
            let d = self.pick_dest(node, dest);
            let bytes = *bytes;
            self.schedule(
                self.now + gap_us,
                EventKind::PacketArrival {
                    node,
                    dest: d,
                    bytes,
                },
            )?;
        }
        Ok(())
    }

    fn start(&mut self) -> Result<(), RunError> {
        for node in 0..self.scn.len() as NodeId {
            match &self.scn.traffic[usize::from(node)] {
                Traffic::List(arrivals) => {
                    for a in arrivals.clone() {
                        self.schedule(
                            a.at_us,
                            EventKind::PacketArrival {
                                node,
                                dest: a.dest,
                                bytes: a.bytes,
                            },
                        )?;
                    }
                }
                Traffic::Poisson { .. } => self.next_poisson(node)?,
                Traffic::Saturated { .. } => {
                    self.refill(node);
                    self.call(node, |m, c| m.on_enqueued(c))?;
                }
                Traffic::None => {}
            }
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<(), RunError> {
        while let Some(ev) = self.queue.pop() {
            if ev.time_us > self.scn.duration_us {
                break;
            }
            self.now = ev.time_us;
            match ev.kind {
                EventKind::Timer { node, kind, gen } => {
                    self.call(node, |m, c| m.on_timer(c, kind, gen))?;
                }
                EventKind::PacketArrival { node, dest, bytes } => {
                    let i = usize::from(node);
                    if self.nodes[i].buffer.len() >= self.nodes[i].params().queue_limit {
                        *self.generated.entry((node, dest)).or_default() += 1;
                        *self.queue_drops.entry((node, dest)).or_default() += 1;
                    } else {
                        let p = self.make_packet(node, dest, bytes);
                        self.nodes[i].buffer.push(p);
                        self.call(node, |m, c| m.on_enqueued(c))?;
                    }
                    self.next_poisson(node)?;
                }
                EventKind::TxEnd(id) => self.tx_end(id)?,
            }
        }
        Ok(())
    }

    /// Invoke a node callback, then carry out whatever it asked for.
    fn call(
        &mut self,
        node: NodeId,
        f: impl FnOnce(&mut NodeMac, &mut Ctx),
    ) -> Result<(), RunError> {
        let i = usize::from(node);
        let mut out = Vec::new();
        {
            let mut ctx = Ctx {
                now: self.now,
                radio: self.medium.radio_state(node, self.now),
                rng: &mut self.mac_rng[i],
                out: &mut out,
            };
            f(&mut self.nodes[i], &mut ctx);
        }
        self.refill(node);
        for a in out {
            match a {
                Action::Timer { kind, at_us, gen } => {
                    self.schedule(at_us, EventKind::Timer { node, kind, gen })?
                }
                Action::Trace { event, detail } => self.record(node, event, detail),
                Action::Transmit(frame) => self.tx_start(node, frame)?,
            }
        }
        Ok(())
    }

    fn tx_start(&mut self, src: NodeId, frame: crate::frame::Frame) -> Result<(), RunError> {
        frame
            .validate()
            .map_err(|e| RunError::Invariant(format!("node {src} built a bad frame: {e}")))?;
        let air = frame.airtime_us(&self.scn.mac[usize::from(src)].timing);
        let tx = self
            .medium
            .begin_tx(src, frame, self.now, air)
            .map_err(|e| RunError::Invariant(e.to_string()))?;
        if tx.frame.mac.kind == FrameKind::Data && tx.frame.fd.dupmode == DupMode::Fd {
            let from = self.now.max(self.fd_cover_until);
            if tx.end_us > from {
                self.fd_busy_us += tx.end_us - from;
                self.fd_cover_until = tx.end_us;
            }
        }
        if self.trace.is_some() {
            let f = &tx.frame;
            let detail = format!(
                "id={} kind={} dst={} dup={} hol={} frag={} bytes={} end={}",
                tx.id,
                kind_name(f.mac.kind),
                tx.dst,
                if f.fd.dupmode == DupMode::Fd { "FD" } else { "HD" },
                u8::from(f.fd.hol),
                u8::from(f.mac.frag),
                f.payload.len(),
                tx.end_us
            );
            self.record(src, "tx_start", detail);
            if self.scn.topology.in_range(src, tx.dst) {
                let est = match tx.mode {
                    Estimation::Clean => "clean",
                    Estimation::Dirty => "dirty",
                };
                self.record(tx.dst, "rx_start", format!("id={} src={src} est={est}", tx.id));
            }
        }
        if tx.mode == Estimation::Dirty && self.scn.topology.in_range(src, tx.dst) {
            self.dirty_receptions += 1;
        }
        self.schedule(tx.end_us, EventKind::TxEnd(tx.id))?;
        let neighbors: Vec<NodeId> = self.scn.topology.neighbors(src).collect();
        for n in neighbors {
            self.call(n, |m, c| m.on_frame_start(c, &tx))?;
        }
        Ok(())
    }

    fn tx_end(&mut self, id: TxId) -> Result<(), RunError> {
        let (tx, concurrent) = self
            .medium
            .end_tx(id)
            .ok_or_else(|| RunError::Invariant(format!("tx {id} ended twice")))?;
        self.record(tx.src, "tx_end", format!("id={id}"));
        self.call(tx.src, |m, c| m.on_own_tx_end(c, &tx))?;
        let neighbors: Vec<NodeId> = self.scn.topology.neighbors(tx.src).collect();
        for n in neighbors {
            let rx = if n == tx.dst {
                Some(self.receive(&tx, &concurrent)?)
            } else {
                None
            };
            self.call(n, |m, c| m.on_frame_end(c, &tx, rx))?;
        }
        Ok(())
    }

    fn receive(
        &mut self,
        tx: &Transmission,
        concurrent: &[Transmission],
    ) -> Result<Reception, RunError> {
        let rx = tx.dst;
        let r = resolve_reception(
            &self.scn.topology,
            &self.scn.link,
            self.scn.snr(tx.src, rx),
            rx,
            self.scn.mac[usize::from(rx)].fd_enabled,
            tx,
            concurrent,
            &mut self.rx_rng[usize::from(rx)],
        );
        let injected = rx == AP
            && tx.mode == Estimation::Dirty
            && tx.frame.mac.kind == FrameKind::Data;
        match r {
            Reception::Collided => {
                self.collisions += 1;
                self.injection_collisions += u64::from(injected);
            }
            Reception::Decoded => {
                let i = usize::from(rx);
                if tx.start_us < self.last_decoded_end[i] {
                    return Err(RunError::Invariant(format!(
                        "node {rx} decoded overlapping frames ending at {} and {}",
                        self.last_decoded_end[i], tx.end_us
                    )));
                }
                self.last_decoded_end[i] = tx.end_us;
            }
            _ => {}
        }
        if self.trace.is_some() {
            let name = match r {
                Reception::Decoded => "decoded",
                Reception::Collided => "collided",
                Reception::NotInRange => "not-in-range",
                Reception::Corrupted => "corrupted",
            };
            self.record(rx, "rx_end", format!("id={} result={name}", tx.id));
        }
        Ok(r)
    }

    fn finish(self) -> Result<RunOutput, RunError> {
        let mut flows: BTreeMap<(NodeId, NodeId), FlowMetrics> = BTreeMap::new();
        for (&(s, d), &g) in &self.generated {
            flow(&mut flows, s, d).generated = g;
        }
        for (&(s, d), &q) in &self.queue_drops {
            flow(&mut flows, s, d).dropped += q;
        }
        let mut totals = [0u64; 5];
        for m in &self.nodes {
            let s = m.id();
            for (&d, &(p, b)) in &m.stats.delivered {
                let f = flow(&mut flows, s, d);
                f.delivered_packets = p;
                f.delivered_bytes = b;
            }
            for (&d, &x) in &m.stats.dropped {
                flow(&mut flows, s, d).dropped += x;
            }
            for p in m.buffer.iter() {
                flow(&mut flows, s, p.dest).queued += 1;
            }
            totals[0] += m.stats.inject_opportunities;
            totals[1] += m.stats.injections;
            totals[2] += m.stats.purges;
            totals[3] += m.stats.fd_rounds;
        }
        totals[4] = self.nodes[usize::from(AP)].stats.fd_rounds;
        for f in flows.values() {
            if f.delivered_packets + f.dropped + f.queued != f.generated {
                return Err(RunError::Invariant(format!(
                    "flow {}>{} does not conserve packets: {f:?}",
                    f.src, f.dst
                )));
            }
        }
        let flows: Vec<FlowMetrics> = flows.into_values().collect();
        let dur = self.scn.duration_us;
        let (pk, by) = flows.iter().fold((0, 0), |(p, b), f| {
            (p + f.delivered_packets, b + f.delivered_bytes)
        });
        let ap = &self.nodes[usize::from(AP)].stats;
        let report = MetricsReport {
            seed: self.scn.seed,
            duration_us: dur,
            goodput_bps: by as f64 * 8.0 * 1e6 / dur as f64,
            normalized_throughput: normalized_throughput(pk, by, dur, &self.scn.mac[0]),
            mean_head_delay: if ap.bypass_count == 0 {
                0.0
            } else {
                ap.bypass_sum as f64 / ap.bypass_count as f64
            },
            fd_airtime_fraction: self.fd_busy_us.min(dur) as f64 / dur as f64,
            collisions: self.collisions,
            fd_rounds: totals[4],
            purges: totals[2],
            injection_opportunities: totals[0],
            injections: totals[1],
            injection_collisions: self.injection_collisions,
            dirty_receptions: self.dirty_receptions,
            flows,
        };
        Ok(RunOutput {
            report,
            trace: self.trace,
        })
    }
}
