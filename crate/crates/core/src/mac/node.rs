use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::backoff::{draw_backoff, snoop_tx_probability, srb_resolve, Dcf};
use super::buffer::{reorder_buffer, MacBuffer};
use super::snoop::{plan_injection, Belief, SnoopState};
use super::{MacParams, SnoopPolicy};
use crate::frame::{DupMode, FdHeader, Frame, FrameKind, MacHeader, NodeId};
use crate::medium::{Reception, Transmission, AP};
use crate::phy::{Estimation, RadioState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimerKind {
    Backoff,
    AckTimeout,
    Respond,
    Training,
    Srb,
    Difs,
    FdAck,
    RoundEnd,
    SnoopWindow,
    Inject,
    Nav,
}

const TIMER_KINDS: usize = 11;

/// What the engine must do on behalf of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Put the frame on the air now.
    Transmit(Frame),
    /// Deliver `on_timer(kind, gen)` at `at_us`.
    Timer { kind: TimerKind, at_us: u64, gen: u64 },
    Trace { event: &'static str, detail: String },
}

/// Per-call view handed to the node by the engine.
pub struct Ctx<'a> {
    pub now: u64,
    /// Radio state of this node at `now`.
    pub radio: RadioState,
    pub rng: &'a mut ChaCha8Rng,
    pub out: &'a mut Vec<Action>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PurgeCause {
    /// Another node took the medium during the shared backoff.
    LostMedium,
    /// Our FD DATA went unacknowledged.
    DataFail,
    /// The peer's FD DATA was lost, so it will not acknowledge ours.
    PeerAckFail,
    /// The FD round could not start as agreed.
    Diverged,
}

impl PurgeCause {
    fn name(self) -> &'static str {
        match self {
            PurgeCause::LostMedium => "lost-medium",
            PurgeCause::DataFail => "data-fail",
            PurgeCause::PeerAckFail => "peer-ack-fail",
            PurgeCause::Diverged => "diverged",
        }
    }
}

/// What a node knows about its FD partner between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerKnowledge {
    pub peer: NodeId,
    pub peer_durnxt: u16,
    pub my_durnxt: u16,
    pub srb: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Contend,
    /// Waiting to send a two-way setup ACK.
    Respond,
    TxData { dst: NodeId },
    AwaitAck { dst: NodeId },
    TxInjection { bytes: usize, ap_end: u64 },
    AwaitInjectionAck { bytes: usize },
    /// Sent an ACK with HOL=1, waiting for the initiator's reply ACK.
    AwaitTraining { peer: NodeId },
    SrbWait { peer: NodeId },
    SrbDifs { peer: NodeId },
    FdRound { peer: NodeId },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "Idle",
            Phase::Contend => "Contend",
            Phase::Respond => "Respond",
            Phase::TxData { .. } => "TxData",
            Phase::AwaitAck { .. } => "AwaitAck",
            Phase::TxInjection { .. } => "TxInjection",
            Phase::AwaitInjectionAck { .. } => "AwaitInjectionAck",
            Phase::AwaitTraining { .. } => "AwaitTraining",
            Phase::SrbWait { .. } => "SrbWait",
            Phase::SrbDifs { .. } => "SrbDifs",
            Phase::FdRound { .. } => "FdRound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AfterAck {
    Nothing,
    AwaitTraining(NodeId),
    Srb { peer: NodeId, srb: u16 },
    FinishRound,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingAck {
    frame: Frame,
    after: AfterAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Round {
    peer: NodeId,
    peer_data_ok: bool,
    my_data_acked: bool,
    my_offer: Option<u16>,
    my_srb: u16,
    peer_offer: Option<u16>,
    peer_srb: u16,
}

/// Counters kept by each node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStats {
    /// Per destination: acknowledged packets and bytes.
    pub delivered: BTreeMap<NodeId, (u64, u64)>,
    /// Per destination: packets dropped at the retry limit.
    pub dropped: BTreeMap<NodeId, u64>,
    pub bypass_sum: u64,
    pub bypass_count: u64,
    pub promotions: u64,
    pub fd_rounds: u64,
    pub purges: u64,
    pub abstained: u64,
    pub inject_opportunities: u64,
    pub injections: u64,
    pub injections_acked: u64,
    pub injections_received: u64,
}

/// One node's MAC. Driven entirely by engine callbacks; every callback
/// returns its side effects through `Ctx::out`.
#[derive(Debug, Clone)]
pub struct NodeMac {
    id: NodeId,
    params: MacParams,
    pub buffer: MacBuffer,
    dcf: Dcf,
    phase: Phase,
    peer: Option<PeerKnowledge>,
    round: Option<Round>,
    pending: Option<PendingAck>,
    acking: Option<AfterAck>,
    tx_on_air: bool,
    busy: u32,
    nav_until: u64,
    last_busy_end: u64,
    backoff_expiry: Option<u64>,
    inject_deadline: Option<u64>,
    last_data_end: u64,
    snoop: SnoopState,
    gens: [u64; TIMER_KINDS],
    trace: bool,
    pub stats: NodeStats,
}

impl NodeMac {
    pub fn new(id: NodeId, n_nodes: usize, params: MacParams, trace: bool) -> Self {
        NodeMac {
            id,
            dcf: Dcf::new(params.dcf.cw_min),
            params,
            buffer: MacBuffer::new(),
            phase: Phase::Idle,
            peer: None,
            round: None,
            pending: None,
            acking: None,
            tx_on_air: false,
            busy: 0,
            nav_until: 0,
            last_busy_end: 0,
            backoff_expiry: None,
            inject_deadline: None,
            last_data_end: 0,
            snoop: SnoopState::new(n_nodes),
            gens: [0; TIMER_KINDS],
            trace,
            stats: NodeStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn params(&self) -> &MacParams {
        &self.params
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn peer(&self) -> Option<PeerKnowledge> {
        self.peer
    }

    pub fn dcf(&self) -> &Dcf {
        &self.dcf
    }

    pub fn belief(&self, node: NodeId) -> Belief {
        self.snoop.belief(node)
    }

    pub fn is_ap(&self) -> bool {
        self.id == AP
    }

    // -- engine callbacks ---------------------------------------------------

    /// New packets were appended to the buffer.
    pub fn on_enqueued(&mut self, ctx: &mut Ctx) {
        if self.phase == Phase::Idle && self.params.contend && !self.buffer.is_empty() {
            self.set_phase(ctx, Phase::Contend, "enqueue");
        }
        self.dcf_update(ctx);
    }

    /// An in-range frame from another node started.
    pub fn on_frame_start(&mut self, ctx: &mut Ctx, tx: &Transmission) {
        self.busy += 1;
        let f = &tx.frame;
        if f.mac.da != self.id {
            let mut until = tx.end_us + u64::from(f.mac.dur_us);
            if let (DupMode::Fd, Some(durfd)) = (f.fd.dupmode, f.fd.durfd) {
                let p = &self.params;
                until = until
                    .max(tx.start_us + u64::from(durfd) + 2 * (p.dcf.sifs_us + p.ack_long_us()));
            }
            if until > self.nav_until {
                self.nav_until = until;
                self.set_timer(ctx, TimerKind::Nav, until);
            }
        }
        if tx.src != AP {
            self.snoop.heard_from(tx.src);
        } else if f.mac.kind == FrameKind::Data
            && f.fd.dupmode == DupMode::Hd
            && f.mac.da != self.id
        {
            self.snoop.watch_ack(f.mac.da);
            let close = tx.end_us + self.params.dcf.sifs_us + self.params.ack_long_us();
            self.set_timer(ctx, TimerKind::SnoopWindow, close);
            self.maybe_schedule_injection(ctx, tx);
        }
        let peer_starts_round = matches!(self.phase, Phase::SrbDifs { peer } if peer == tx.src)
            && f.fd.dupmode == DupMode::Fd
            && tx.start_us == ctx.now;
        if matches!(self.phase, Phase::SrbWait { .. } | Phase::SrbDifs { .. }) && !peer_starts_round
        {
            self.purge(ctx, PurgeCause::LostMedium);
        }
        self.dcf_update(ctx);
    }

    /// An in-range frame from another node ended. `rx` is set when the frame
    /// was addressed to this node.
    pub fn on_frame_end(&mut self, ctx: &mut Ctx, tx: &Transmission, rx: Option<Reception>) {
        self.busy = self.busy.saturating_sub(1);
        if self.busy == 0 {
            self.last_busy_end = ctx.now;
        }
        if rx == Some(Reception::Decoded) {
            match tx.frame.mac.kind {
                FrameKind::Ack => self.on_ack(ctx, &tx.frame),
                FrameKind::Data => self.on_data(ctx, tx),
            }
        }
        self.dcf_update(ctx);
    }

    /// This node's own frame left the air.
    pub fn on_own_tx_end(&mut self, ctx: &mut Ctx, tx: &Transmission) {
        self.tx_on_air = false;
        if self.busy == 0 {
            self.last_busy_end = ctx.now;
        }
        match tx.frame.mac.kind {
            FrameKind::Ack => {
                if let Some(after) = self.acking.take() {
                    self.after_ack(ctx, after);
                }
            }
            FrameKind::Data => match self.phase {
                Phase::TxData { dst } => {
                    self.set_phase(ctx, Phase::AwaitAck { dst }, "data-sent");
                    let at = ctx.now + self.params.dcf.ack_timeout_us;
                    self.set_timer(ctx, TimerKind::AckTimeout, at);
                }
                Phase::TxInjection { bytes, ap_end } => {
                    self.set_phase(ctx, Phase::AwaitInjectionAck { bytes }, "injected");
                    let p = &self.params;
                    let at = ap_end + 2 * (p.dcf.sifs_us + p.ack_long_us()) + p.dcf.slot_us;
                    self.set_timer(ctx, TimerKind::AckTimeout, at);
                }
                _ => {}
            },
        }
        self.dcf_update(ctx);
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx, kind: TimerKind, gen: u64) {
        if self.gens[kind as usize] != gen {
            return;
        }
        match kind {
            TimerKind::Backoff => self.backoff_fired(ctx),
            TimerKind::AckTimeout => {
                if matches!(
                    self.phase,
                    Phase::AwaitAck { .. } | Phase::AwaitInjectionAck { .. }
                ) {
                    self.fail_head();
                    self.back_to_contend(ctx, "ack-timeout");
                }
            }
            TimerKind::Respond => self.respond_fired(ctx),
            TimerKind::Training => {
                if matches!(self.phase, Phase::AwaitTraining { .. }) {
                    self.peer = None;
                    self.back_to_contend(ctx, "training-timeout");
                }
            }
            TimerKind::Srb => {
                if let Phase::SrbWait { peer } = self.phase {
                    if self.busy > 0 {
                        self.purge(ctx, PurgeCause::LostMedium);
                    } else {
                        self.set_phase(ctx, Phase::SrbDifs { peer }, "srb-expired");
                        let at = ctx.now + self.params.dcf.difs_us;
                        self.set_timer(ctx, TimerKind::Difs, at);
                    }
                }
            }
            TimerKind::Difs => {
                if let Phase::SrbDifs { peer } = self.phase {
                    self.start_fd_data(ctx, peer);
                }
            }
            TimerKind::FdAck => self.fd_ack_fired(ctx),
            TimerKind::RoundEnd => {
                if matches!(self.phase, Phase::FdRound { .. }) {
                    self.finish_round(ctx);
                }
            }
            TimerKind::SnoopWindow => self.snoop.close_watch(),
            TimerKind::Inject => self.inject_fired(ctx),
            TimerKind::Nav => {
                if self.busy == 0 && ctx.now >= self.nav_until {
                    self.last_busy_end = ctx.now;
                }
            }
        }
        self.dcf_update(ctx);
    }

    // -- plumbing -------------------------------------------------------------

    fn set_timer(&mut self, ctx: &mut Ctx, kind: TimerKind, at_us: u64) {
        let g = &mut self.gens[kind as usize];
        *g += 1;
        ctx.out.push(Action::Timer {
            kind,
            at_us,
            gen: *g,
        });
    }

    fn cancel(&mut self, kind: TimerKind) {
        self.gens[kind as usize] += 1;
    }

    fn set_phase(&mut self, ctx: &mut Ctx, new: Phase, cause: &str) {
        if self.trace && new.name() != self.phase.name() {
            ctx.out.push(Action::Trace {
                event: "state",
                detail: format!("{}->{}:{}", self.phase.name(), new.name(), cause),
            });
        }
        self.phase = new;
    }

    fn trace(&self, ctx: &mut Ctx, event: &'static str, detail: String) {
        if self.trace {
            ctx.out.push(Action::Trace { event, detail });
        }
    }

    fn can_tx(&self, ctx: &Ctx) -> bool {
        ctx.radio == RadioState::Idle && !self.tx_on_air
    }

    fn transmit(&mut self, ctx: &mut Ctx, frame: Frame) {
        if frame.mac.kind == FrameKind::Data {
            self.last_data_end = ctx.now + frame.airtime_us(&self.params.timing);
        }
        self.tx_on_air = true;
        ctx.out.push(Action::Transmit(frame));
    }

    fn fd_air(&self, bytes: usize) -> u16 {
        self.params
            .timing
            .data_airtime_us(DupMode::Fd, bytes)
            .min(u64::from(u16::MAX)) as u16
    }

    /// FD is possible only on AP-mobile links.
    fn partner(&self, other: NodeId) -> bool {
        self.params.fd_enabled && (self.is_ap() != (other == AP))
    }

    /// DURNXT to advertise if the packet at `idx` goes to `peer`.
    fn offer_at(&self, idx: usize, peer: NodeId) -> Option<u16> {
        if !self.partner(peer) {
            return None;
        }
        self.buffer
            .get(idx)
            .filter(|p| p.dest == peer)
            .map(|p| self.fd_air(p.remaining))
    }

    /// At the AP, give `peer` a chance to jump the queue.
    fn prepare_offer(&mut self, ctx: &mut Ctx, peer: NodeId, peer_hol: bool) {
        if self.is_ap() && peer_hol {
            let p = &self.params;
            if reorder_buffer(&mut self.buffer, peer, p.p_pick, p.bufdepth, ctx.rng) {
                self.stats.promotions += 1;
            }
        }
    }

    fn ack_frame(&self, da: NodeId, offer: Option<u16>, srb: u16, dur_us: u64) -> Frame {
        Frame {
            mac: MacHeader {
                kind: FrameKind::Ack,
                dur_us: dur_us.min(u64::from(u16::MAX)) as u16,
                sa: self.id,
                da,
                frag: false,
            },
            fd: FdHeader {
                dupmode: DupMode::Hd,
                hol: offer.is_some(),
                durnxt: offer,
                durfd: None,
                cts: offer.is_some(),
                srb,
            },
            payload: Vec::new(),
        }
    }

    fn complete_head(&mut self) {
        if let Some(p) = self.buffer.pop() {
            let e = self.stats.delivered.entry(p.dest).or_default();
            e.0 += 1;
            e.1 += p.bytes as u64;
            self.stats.bypass_sum += u64::from(p.bypassed);
            self.stats.bypass_count += 1;
        }
        self.dcf.on_success(&self.params.dcf);
    }

    fn fail_head(&mut self) {
        if self.dcf.on_failure(&self.params.dcf) {
            if let Some(p) = self.buffer.pop() {
                *self.stats.dropped.entry(p.dest).or_default() += 1;
            }
        }
    }

    fn back_to_contend(&mut self, ctx: &mut Ctx, cause: &str) {
        let next = if self.params.contend && !self.buffer.is_empty() {
            Phase::Contend
        } else {
            Phase::Idle
        };
        self.set_phase(ctx, next, cause);
    }

    /// Forget the FD partner and contend afresh.
    fn purge(&mut self, ctx: &mut Ctx, cause: PurgeCause) {
        self.peer = None;
        self.round = None;
        self.dcf.backoff = None;
        self.dcf.counting_from = None;
        for k in [
            TimerKind::Srb,
            TimerKind::Difs,
            TimerKind::FdAck,
            TimerKind::RoundEnd,
            TimerKind::Training,
        ] {
            self.cancel(k);
        }
        self.stats.purges += 1;
        self.back_to_contend(ctx, cause.name());
    }

    /// Arm or freeze the DCF countdown to match the medium and phase.
    fn dcf_update(&mut self, ctx: &mut Ctx) {
        let eligible = self.phase == Phase::Contend
            && self.pending.is_none()
            && self.acking.is_none()
            && !self.tx_on_air;
        let want = eligible && self.busy == 0 && ctx.now >= self.nav_until;
        match (want, self.backoff_expiry) {
            (true, None) => {
                let slots = self.dcf.ensure_backoff(ctx.rng);
                let at = self
                    .dcf
                    .resume(&self.params.dcf, self.last_busy_end, ctx.now, slots);
                self.backoff_expiry = Some(at);
                self.set_timer(ctx, TimerKind::Backoff, at);
            }
            // a countdown ending at the instant the medium turns busy
            // still transmits
            (false, Some(at)) if !(eligible && at == ctx.now) => {
                self.dcf.freeze(&self.params.dcf, ctx.now);
                self.backoff_expiry = None;
                self.cancel(TimerKind::Backoff);
            }
            _ => {}
        }
    }

    // -- DCF ------------------------------------------------------------------

    fn backoff_fired(&mut self, ctx: &mut Ctx) {
        self.backoff_expiry = None;
        self.dcf.counting_from = None;
        if self.phase != Phase::Contend {
            return;
        }
        let Some(head) = self.buffer.head() else {
            self.dcf.backoff = None;
            self.back_to_contend(ctx, "empty");
            return;
        };
        if !self.can_tx(ctx) {
            self.stats.abstained += 1;
            self.dcf.backoff = Some(0);
            self.trace(ctx, "abstain", format!("radio={:?}", ctx.radio));
            return;
        }
        self.dcf.backoff = None;
        let dst = head.dest;
        let bytes = head.remaining;
        let fill = head.id as u8;
        let next = self.buffer.get(1).filter(|p| p.dest == dst && self.partner(dst));
        let hol = next.is_some();
        let durnxt = next.map_or(0, |p| self.fd_air(p.remaining));
        let p = &self.params;
        let ack = p.dcf.sifs_us + p.ack_long_us();
        let dur = if hol { 2 * ack } else { ack };
        let frame = Frame {
            mac: MacHeader {
                kind: FrameKind::Data,
                dur_us: dur as u16,
                sa: self.id,
                da: dst,
                frag: false,
            },
            fd: FdHeader {
                dupmode: DupMode::Hd,
                hol,
                durnxt: Some(durnxt),
                durfd: None,
                cts: false,
                srb: 0,
            },
            payload: vec![fill; bytes],
        };
        self.transmit(ctx, frame);
        self.set_phase(ctx, Phase::TxData { dst }, "backoff");
    }

    // -- receptions -----------------------------------------------------------

    fn on_ack(&mut self, ctx: &mut Ctx, f: &Frame) {
        let sa = f.mac.sa;
        match self.phase {
            Phase::AwaitAck { dst } if sa == dst => {
                self.cancel(TimerKind::AckTimeout);
                self.complete_head();
                if f.fd.hol && self.partner(dst) && self.pending.is_none() {
                    // initiator side of the two-way setup
                    self.prepare_offer(ctx, dst, true);
                    let offer = self.offer_at(0, dst);
                    let after = match offer {
                        Some(mine) => {
                            self.peer = Some(PeerKnowledge {
                                peer: dst,
                                peer_durnxt: f.fd.durnxt.unwrap_or(0),
                                my_durnxt: mine,
                                srb: 0,
                            });
                            AfterAck::Srb { peer: dst, srb: 0 }
                        }
                        None => AfterAck::Nothing,
                    };
                    let frame = self.ack_frame(dst, offer, 0, 0);
                    self.pending = Some(PendingAck { frame, after });
                    let at = ctx.now + self.params.dcf.sifs_us;
                    self.set_timer(ctx, TimerKind::Respond, at);
                    self.set_phase(ctx, Phase::Respond, "setup-reply");
                } else {
                    self.back_to_contend(ctx, "acked");
                }
            }
            Phase::AwaitInjectionAck { bytes } if sa == AP => {
                self.cancel(TimerKind::AckTimeout);
                self.stats.injections_acked += 1;
                let done = match self.buffer.head_mut() {
                    Some(h) => {
                        h.remaining = h.remaining.saturating_sub(bytes);
                        h.remaining == 0
                    }
                    None => false,
                };
                if done {
                    self.complete_head();
                } else {
                    self.dcf.on_success(&self.params.dcf);
                }
                self.back_to_contend(ctx, "injection-acked");
            }
            Phase::AwaitTraining { peer } if sa == peer => {
                self.cancel(TimerKind::Training);
                match (f.fd.hol, self.peer.as_mut()) {
                    (true, Some(k)) => {
                        k.peer_durnxt = f.fd.durnxt.unwrap_or(0);
                        self.enter_srb(ctx, peer, f.fd.srb);
                    }
                    _ => {
                        self.peer = None;
                        self.back_to_contend(ctx, "declined");
                    }
                }
            }
            Phase::FdRound { peer } if sa == peer => {
                let Some(r) = self.round.as_mut() else {
                    return;
                };
                r.my_data_acked = true;
                r.peer_offer = f.fd.durnxt.filter(|_| f.fd.hol);
                r.peer_srb = f.fd.srb;
                if !self.is_ap() {
                    self.cancel(TimerKind::RoundEnd);
                    self.complete_head();
                    self.finish_round(ctx);
                }
            }
            _ => {}
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx, tx: &Transmission) {
        let f = &tx.frame;
        let sa = f.mac.sa;
        if f.fd.dupmode == DupMode::Fd {
            if let (Phase::FdRound { peer }, Some(r)) = (self.phase, self.round.as_mut()) {
                if peer == sa {
                    r.peer_data_ok = true;
                }
            }
            return;
        }
        if self.is_ap() && tx.mode == Estimation::Dirty {
            // arrived while our own DATA was on the air: a hidden-node injection
            self.stats.injections_received += 1;
            if self.pending.is_none() {
                let p = &self.params;
                let at = (self.last_data_end + 2 * p.dcf.sifs_us + p.ack_long_us())
                    .max(ctx.now + p.dcf.sifs_us);
                let frame = self.ack_frame(sa, None, 0, 0);
                self.pending = Some(PendingAck {
                    frame,
                    after: AfterAck::Nothing,
                });
                self.set_timer(ctx, TimerKind::Respond, at);
            }
            return;
        }
        if !matches!(self.phase, Phase::Idle | Phase::Contend)
            || self.pending.is_some()
            || self.acking.is_some()
        {
            return;
        }
        let offer = if self.partner(sa) {
            self.prepare_offer(ctx, sa, f.fd.hol);
            self.offer_at(0, sa)
        } else {
            None
        };
        let p = &self.params;
        let (dur, after) = match offer {
            Some(_) => (p.dcf.sifs_us + p.ack_long_us(), AfterAck::AwaitTraining(sa)),
            None => (0, AfterAck::Nothing),
        };
        let frame = self.ack_frame(sa, offer, 0, dur);
        self.pending = Some(PendingAck { frame, after });
        if let Some(mine) = offer {
            self.peer = Some(PeerKnowledge {
                peer: sa,
                peer_durnxt: 0,
                my_durnxt: mine,
                srb: 0,
            });
            self.set_phase(ctx, Phase::Respond, "setup-offer");
        }
        let at = ctx.now + self.params.dcf.sifs_us;
        self.set_timer(ctx, TimerKind::Respond, at);
    }

    fn respond_fired(&mut self, ctx: &mut Ctx) {
        let Some(p) = self.pending.take() else {
            return;
        };
        if !self.can_tx(ctx) {
            self.stats.abstained += 1;
            self.trace(ctx, "abstain", format!("radio={:?}", ctx.radio));
            if self.phase == Phase::Respond {
                self.peer = None;
                self.back_to_contend(ctx, "abstain");
            }
            return;
        }
        self.transmit(ctx, p.frame);
        self.acking = Some(p.after);
    }

    fn after_ack(&mut self, ctx: &mut Ctx, after: AfterAck) {
        match after {
            AfterAck::Nothing => {
                if self.phase == Phase::Respond {
                    self.back_to_contend(ctx, "ack-sent");
                }
            }
            AfterAck::AwaitTraining(peer) => {
                self.set_phase(ctx, Phase::AwaitTraining { peer }, "offer-sent");
                let p = &self.params;
                let at = ctx.now + p.dcf.sifs_us + p.ack_long_us() + p.dcf.slot_us;
                self.set_timer(ctx, TimerKind::Training, at);
            }
            AfterAck::Srb { peer, srb } => self.enter_srb(ctx, peer, srb),
            AfterAck::FinishRound => self.finish_round(ctx),
        }
    }

    // -- full-duplex rounds ---------------------------------------------------

    fn enter_srb(&mut self, ctx: &mut Ctx, peer: NodeId, srb: u16) {
        if let Some(k) = self.peer.as_mut() {
            k.srb = srb;
        }
        self.set_phase(ctx, Phase::SrbWait { peer }, "srb");
        if self.busy > 0 {
            self.purge(ctx, PurgeCause::LostMedium);
            return;
        }
        let at = ctx.now + u64::from(srb) * self.params.dcf.slot_us;
        self.set_timer(ctx, TimerKind::Srb, at);
    }

    fn start_fd_data(&mut self, ctx: &mut Ctx, peer: NodeId) {
        let (Some(k), Some(head)) = (self.peer, self.buffer.head()) else {
            self.purge(ctx, PurgeCause::Diverged);
            return;
        };
        if head.dest != peer || !self.can_tx(ctx) {
            self.purge(ctx, PurgeCause::Diverged);
            return;
        }
        let my_air = u64::from(self.fd_air(head.remaining));
        let durfd = u64::from(k.my_durnxt.max(k.peer_durnxt)).max(my_air);
        let next = self.buffer.get(1).filter(|p| p.dest == peer);
        let hol = next.is_some();
        let durnxt = next.map_or(0, |p| self.fd_air(p.remaining));
        let p = &self.params;
        let ack = p.dcf.sifs_us + p.ack_long_us();
        let frame = Frame {
            mac: MacHeader {
                kind: FrameKind::Data,
                dur_us: (durfd - my_air + 2 * ack).min(u64::from(u16::MAX)) as u16,
                sa: self.id,
                da: peer,
                frag: false,
            },
            fd: FdHeader {
                dupmode: DupMode::Fd,
                hol,
                durnxt: Some(durnxt),
                durfd: Some(durfd.min(u64::from(u16::MAX)) as u16),
                cts: true,
                srb: 0,
            },
            payload: vec![head.id as u8; head.remaining],
        };
        let (sifs, ack_long, slot) = (p.dcf.sifs_us, p.ack_long_us(), p.dcf.slot_us);
        self.transmit(ctx, frame);
        self.round = Some(Round {
            peer,
            peer_data_ok: false,
            my_data_acked: false,
            my_offer: None,
            my_srb: 0,
            peer_offer: None,
            peer_srb: 0,
        });
        self.stats.fd_rounds += 1;
        self.set_phase(ctx, Phase::FdRound { peer }, "fd-data");
        let t0 = ctx.now;
        if self.is_ap() {
            self.set_timer(ctx, TimerKind::FdAck, t0 + durfd + 2 * sifs + ack_long);
        } else {
            self.set_timer(ctx, TimerKind::FdAck, t0 + durfd + sifs);
            let end = t0 + durfd + 2 * (sifs + ack_long) + slot;
            self.set_timer(ctx, TimerKind::RoundEnd, end);
        }
    }

    fn fd_ack_fired(&mut self, ctx: &mut Ctx) {
        let (Phase::FdRound { peer }, Some(r)) = (self.phase, self.round) else {
            return;
        };
        if self.is_ap() {
            if r.my_data_acked {
                self.complete_head();
            } else {
                self.fail_head();
            }
            if !r.peer_data_ok || !self.can_tx(ctx) {
                self.finish_round(ctx);
                return;
            }
            let offer = if r.my_data_acked && r.peer_offer.is_some() {
                self.prepare_offer(ctx, peer, true);
                self.offer_at(0, peer)
            } else {
                None
            };
            let srb = draw_backoff(self.dcf.cw, ctx.rng);
            if let Some(r) = self.round.as_mut() {
                r.my_offer = offer;
                r.my_srb = srb;
            }
            let frame = self.ack_frame(peer, offer, srb, 0);
            self.transmit(ctx, frame);
            self.acking = Some(AfterAck::FinishRound);
        } else if r.peer_data_ok && self.can_tx(ctx) {
            let offer = self.offer_at(1, peer);
            let srb = draw_backoff(self.dcf.cw, ctx.rng);
            if let Some(r) = self.round.as_mut() {
                r.my_offer = offer;
                r.my_srb = srb;
            }
            let p = &self.params;
            let dur = p.dcf.sifs_us + p.ack_long_us();
            let frame = self.ack_frame(peer, offer, srb, dur);
            self.transmit(ctx, frame);
            self.acking = Some(AfterAck::Nothing);
        }
    }

    fn finish_round(&mut self, ctx: &mut Ctx) {
        let Some(r) = self.round.take() else {
            return;
        };
        self.cancel(TimerKind::RoundEnd);
        match (r.peer_data_ok, r.my_data_acked, r.my_offer, r.peer_offer) {
            (true, true, Some(mine), Some(theirs)) => {
                self.peer = Some(PeerKnowledge {
                    peer: r.peer,
                    peer_durnxt: theirs,
                    my_durnxt: mine,
                    srb: 0,
                });
                self.enter_srb(ctx, r.peer, srb_resolve(r.my_srb, r.peer_srb));
            }
            (peer_ok, false, _, _) => {
                if !self.is_ap() {
                    self.fail_head();
                }
                let cause = if peer_ok {
                    PurgeCause::DataFail
                } else {
                    PurgeCause::PeerAckFail
                };
                self.purge(ctx, cause);
            }
            _ => {
                self.peer = None;
                self.back_to_contend(ctx, "round-end");
            }
        }
    }

    // -- snooping -------------------------------------------------------------

    fn maybe_schedule_injection(&mut self, ctx: &mut Ctx, tx: &Transmission) {
        let f = &tx.frame;
        if self.is_ap()
            || !self.params.fd_enabled
            || self.params.snoop == SnoopPolicy::Off
            || !f.fd.hol
            || self.snoop.belief(f.mac.da) != Belief::Hidden
            || self.buffer.head().is_none_or(|h| h.dest != AP)
            || !matches!(self.phase, Phase::Idle | Phase::Contend)
            || self.pending.is_some()
            || self.acking.is_some()
        {
            return;
        }
        self.inject_deadline = Some(tx.end_us);
        let at = tx.start_us + self.params.timing.header_time_us(f);
        self.set_timer(ctx, TimerKind::Inject, at);
    }

    fn inject_fired(&mut self, ctx: &mut Ctx) {
        let Some(ap_end) = self.inject_deadline.take() else {
            return;
        };
        if !matches!(self.phase, Phase::Idle | Phase::Contend)
            || self.pending.is_some()
            || self.acking.is_some()
            || !self.can_tx(ctx)
        {
            return;
        }
        let Some(head) = self.buffer.head() else {
            return;
        };
        let (fill, remaining) = (head.id as u8, head.remaining);
        self.stats.inject_opportunities += 1;
        let p_i = match self.params.snoop {
            SnoopPolicy::Off => 0.0,
            SnoopPolicy::Always => 1.0,
            SnoopPolicy::Beta(beta) => snoop_tx_probability(self.dcf.cw + 1, beta),
        };
        if p_i <= 0.0 || (p_i < 1.0 && !ctx.rng.gen_bool(p_i)) {
            return;
        }
        let Some(plan) = plan_injection(&self.params.timing, ctx.now, ap_end, remaining) else {
            return;
        };
        self.stats.injections += 1;
        let p = &self.params;
        let ack_done = ap_end + 2 * (p.dcf.sifs_us + p.ack_long_us());
        let frame = Frame {
            mac: MacHeader {
                kind: FrameKind::Data,
                dur_us: (ack_done - plan.end_us).min(u64::from(u16::MAX)) as u16,
                sa: self.id,
                da: AP,
                frag: plan.frag,
            },
            fd: FdHeader {
                dupmode: DupMode::Hd,
                hol: false,
                durnxt: Some(0),
                durfd: None,
                cts: false,
                srb: 0,
            },
            payload: vec![fill; plan.bytes],
        };
        self.transmit(ctx, frame);
        self.set_phase(
            ctx,
            Phase::TxInjection {
                bytes: plan.bytes,
                ap_end,
            },
            "inject",
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::buffer::Packet;
    use proptest::prelude::*;
    use rand::SeedableRng;

    /// Drives one node by hand.
    struct Sim {
        node: NodeMac,
        rng: ChaCha8Rng,
        now: u64,
        radio: RadioState,
        timers: Vec<(TimerKind, u64, u64)>,
        sent: Vec<(Frame, u64)>,
        next_tx: u64,
    }

    impl Sim {
        fn new(id: NodeId, cw: u32, packets: &[usize], seed: u64) -> Self {
            let mut node = NodeMac::new(id, 3, MacParams::default(), false);
            node.dcf.cw = cw;
            for (i, &b) in packets.iter().enumerate() {
                node.buffer.push(Packet::new(i as u64, id, AP, b, 0));
            }
            Sim {
                node,
                rng: ChaCha8Rng::seed_from_u64(seed),
                now: 0,
                radio: RadioState::Idle,
                timers: Vec::new(),
                sent: Vec::new(),
                next_tx: 0,
            }
        }

        fn with(&mut self, f: impl FnOnce(&mut NodeMac, &mut Ctx)) -> Vec<Action> {
            let mut out = Vec::new();
            let mut ctx = Ctx {
                now: self.now,
                radio: self.radio,
                rng: &mut self.rng,
                out: &mut out,
            };
            f(&mut self.node, &mut ctx);
            for a in &out {
                match a {
                    Action::Timer { kind, at_us, gen } => self.timers.push((*kind, *at_us, *gen)),
                    Action::Transmit(fr) => self.sent.push((fr.clone(), self.now)),
                    Action::Trace { .. } => {}
                }
            }
            out
        }

        fn latest(&self, kind: TimerKind) -> (u64, u64) {
            let (_, at, gen) = *self.timers.iter().rev().find(|t| t.0 == kind).expect("timer set");
            (at, gen)
        }

        fn fire(&mut self, kind: TimerKind) -> Vec<Action> {
            let (at, gen) = self.latest(kind);
            assert!(at >= self.now);
            self.now = at;
            self.with(|n, c| n.on_timer(c, kind, gen))
        }

        fn tx(&mut self, src: NodeId, dst: NodeId, frame: Frame) -> Transmission {
            self.next_tx += 1;
            let air = frame.airtime_us(&Timing::default());
            Transmission {
                id: self.next_tx,
                src,
                dst,
                frame,
                start_us: self.now,
                end_us: self.now + air,
                mode: Estimation::Clean,
            }
        }

        fn own_tx_end(&mut self) {
            let (fr, start) = self.sent.last().expect("sent").clone();
            let id = self.node.id;
            let now = self.now;
            self.now = start;
            let t = self.tx(id, fr.mac.da, fr);
            self.now = now.max(t.end_us);
            self.with(|n, c| n.on_own_tx_end(c, &t));
        }

        fn hear(&mut self, src: NodeId, frame: Frame, rx: Option<Reception>) {
            let t = self.tx(src, frame.mac.da, frame);
            self.with(|n, c| n.on_frame_start(c, &t));
            self.now = t.end_us;
            self.with(|n, c| n.on_frame_end(c, &t, rx));
        }
    }

    use crate::frame::Timing;

    fn frame(kind: FrameKind, sa: NodeId, da: NodeId, fd: FdHeader, bytes: usize) -> Frame {
        Frame {
            mac: MacHeader {
                kind,
                dur_us: 0,
                sa,
                da,
                frag: false,
            },
            fd,
            payload: vec![7; bytes],
        }
    }

    fn hd(hol: bool, durnxt: Option<u16>, srb: u16) -> FdHeader {
        FdHeader {
            dupmode: DupMode::Hd,
            hol,
            durnxt,
            durfd: None,
            cts: hol,
            srb,
        }
    }

    #[derive(Debug, Clone, Copy)]
    enum Cause {
        LostMedium,
        DataFail,
        PeerAckFail,
        Diverged,
    }

    /// Take mobile 1 through the two-way setup and into the given purge.
    /// Returns the generator state just before the purging callback.
    fn drive_to_purge(sim: &mut Sim, srb: u16, cause: Cause) -> ChaCha8Rng {
        sim.with(|n, c| n.on_enqueued(c));
        assert_eq!(sim.node.phase, Phase::Contend);
        sim.now = 5;
        sim.hear(AP, frame(FrameKind::Data, AP, 1, hd(true, Some(300), 0), 120), Some(Reception::Decoded));
        assert_eq!(sim.node.phase, Phase::Respond);
        sim.fire(TimerKind::Respond);
        sim.own_tx_end();
        assert!(matches!(sim.node.phase, Phase::AwaitTraining { peer: AP }));
        sim.now += 16;
        sim.hear(AP, frame(FrameKind::Ack, AP, 1, hd(true, Some(300), srb), 0), Some(Reception::Decoded));
        assert!(matches!(sim.node.phase, Phase::SrbWait { peer: AP }));
        if let Cause::LostMedium = cause {
            let before = sim.rng.clone();
            let t = sim.tx(2, AP, frame(FrameKind::Data, 2, AP, hd(false, Some(0), 0), 50));
            sim.with(|n, c| n.on_frame_start(c, &t));
            return before;
        }
        sim.fire(TimerKind::Srb);
        if let Cause::Diverged = cause {
            let before = sim.rng.clone();
            sim.radio = RadioState::Receiving;
            sim.fire(TimerKind::Difs);
            sim.radio = RadioState::Idle;
            return before;
        }
        sim.fire(TimerKind::Difs);
        assert!(matches!(sim.node.phase, Phase::FdRound { peer: AP }));
        let fd = FdHeader {
            dupmode: DupMode::Fd,
            hol: true,
            durnxt: Some(300),
            durfd: Some(300),
            cts: true,
            srb: 0,
        };
        let ok = matches!(cause, Cause::DataFail);
        let rx = if ok { Reception::Decoded } else { Reception::Corrupted };
        let peer_data = frame(FrameKind::Data, AP, 1, fd, 100);
        let t = sim.tx(AP, 1, peer_data);
        sim.with(|n, c| n.on_frame_start(c, &t));
        sim.now = t.end_us;
        sim.with(|n, c| n.on_frame_end(c, &t, Some(rx)));
        sim.own_tx_end();
        let sent = sim.sent.len();
        sim.fire(TimerKind::FdAck);
        if ok {
            assert_eq!(sim.sent.len(), sent + 1, "mobile acks the peer's data");
            sim.own_tx_end();
        } else {
            assert_eq!(sim.sent.len(), sent, "no ack for lost data");
        }
        let before = sim.rng.clone();
        sim.fire(TimerKind::RoundEnd);
        before
    }

    /// Protocol state a freshly contending node would have.
    fn view(n: &NodeMac) -> impl PartialEq + std::fmt::Debug {
        (
            n.phase,
            n.peer,
            n.round,
            n.pending.clone(),
            n.acking,
            n.dcf.clone(),
            n.backoff_expiry,
            n.inject_deadline,
            n.tx_on_air,
            n.buffer.iter().map(|p| (p.id, p.remaining)).collect::<Vec<_>>(),
        )
    }

    fn check_purge(cause: Cause, cw: u32, srb: u16, sizes: &[usize], seed: u64) {
        let mut sim = Sim::new(1, cw, sizes, seed);
        let purges = sim.node.stats.purges;
        let rng_before = drive_to_purge(&mut sim, srb, cause);
        assert_eq!(sim.node.stats.purges, purges + 1, "{cause:?}");
        let p = &sim.node;

        let mut fresh = NodeMac::new(1, 3, MacParams::default(), false);
        fresh.buffer = p.buffer.clone();
        fresh.dcf.cw = p.dcf.cw;
        fresh.dcf.retries = p.dcf.retries;
        fresh.busy = p.busy;
        fresh.nav_until = p.nav_until;
        fresh.last_busy_end = p.last_busy_end;
        fresh.last_data_end = p.last_data_end;
        fresh.snoop = p.snoop.clone();
        let mut rng = rng_before;
        let mut out = Vec::new();
        fresh.on_enqueued(&mut Ctx {
            now: sim.now,
            radio: RadioState::Idle,
            rng: &mut rng,
            out: &mut out,
        });
        assert_eq!(format!("{:?}", view(p)), format!("{:?}", view(&fresh)), "{cause:?}");

        // stale FD timers from before the purge change nothing
        let snapshot = format!("{:?}", view(&sim.node));
        let stale: Vec<_> = sim
            .timers
            .iter()
            .filter(|t| {
                matches!(
                    t.0,
                    TimerKind::Srb
                        | TimerKind::Difs
                        | TimerKind::FdAck
                        | TimerKind::RoundEnd
                        | TimerKind::Training
                )
            })
            .copied()
            .collect();
        let sent = sim.sent.len();
        for (kind, _, gen) in stale {
            sim.with(|n, c| n.on_timer(c, kind, gen));
        }
        assert_eq!(sim.sent.len(), sent);
        assert_eq!(snapshot, format!("{:?}", view(&sim.node)));
    }

    #[test]
    fn every_purge_cause_returns_to_fresh_contention() {
        for cause in [Cause::LostMedium, Cause::DataFail, Cause::PeerAckFail, Cause::Diverged] {
            check_purge(cause, 15, 4, &[200, 300, 400], 9);
        }
    }

    #[test]
    fn data_fail_counts_a_retry() {
        let mut sim = Sim::new(1, 15, &[200, 300], 2);
        drive_to_purge(&mut sim, 0, Cause::DataFail);
        assert_eq!(sim.node.dcf.cw, 31);
        assert_eq!(sim.node.dcf.retries, 1);
    }

    fn cause() -> impl Strategy<Value = Cause> {
        prop_oneof![
            Just(Cause::LostMedium),
            Just(Cause::DataFail),
            Just(Cause::PeerAckFail),
            Just(Cause::Diverged),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn purge_completeness(
            c in cause(),
            k in 4u32..=10,
            srb in 0u16..=1023,
            sizes in proptest::collection::vec(20usize..1500, 2..6),
            seed in any::<u64>(),
        ) {
            check_purge(c, (1 << k) - 1, srb, &sizes, seed);
        }
    }
}
