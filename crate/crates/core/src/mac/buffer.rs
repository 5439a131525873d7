use std::collections::VecDeque;

use rand::Rng;

use crate::frame::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub id: u64,
    pub src: NodeId,
    pub dest: NodeId,
    pub bytes: usize,
    /// Bytes not yet delivered; less than `bytes` after a fragment got through.
    pub remaining: usize,
    pub enqueued_us: u64,
    /// Times another packet was promoted past this one while it was head.
    pub bypassed: u32,
}

impl Packet {
    pub fn new(id: u64, src: NodeId, dest: NodeId, bytes: usize, enqueued_us: u64) -> Self {
        Packet {
            id,
            src,
            dest,
            bytes,
            remaining: bytes,
            enqueued_us,
            bypassed: 0,
        }
    }
}

/// FIFO transmit buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacBuffer {
    q: VecDeque<Packet>,
}

impl MacBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn push(&mut self, p: Packet) {
        self.q.push_back(p);
    }

    pub fn head(&self) -> Option<&Packet> {
        self.q.front()
    }

    pub fn head_mut(&mut self) -> Option<&mut Packet> {
        self.q.front_mut()
    }

    pub fn get(&self, i: usize) -> Option<&Packet> {
        self.q.get(i)
    }

    pub fn pop(&mut self) -> Option<Packet> {
        self.q.pop_front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.q.iter()
    }

    /// The packet that would follow the head to `dest` in FIFO order.
    pub fn next_for(&self, dest: NodeId) -> Option<&Packet> {
        self.q.iter().skip(1).find(|p| p.dest == dest)
    }

    /// Whether the packet directly behind the head also goes to `dest`.
    pub fn second_is_for(&self, dest: NodeId) -> bool {
        self.q.get(1).is_some_and(|p| p.dest == dest)
    }
}

/// Virtual contention: with probability `p_pick`, move the first packet for
/// `peer` among positions 2..=`bufdepth` to the head. Nothing happens when
/// the head already goes to `peer` or no candidate exists; the draw is only
/// made when a candidate exists. Returns whether a promotion happened.
pub fn reorder_buffer<R: Rng + ?Sized>(
    buf: &mut MacBuffer,
    peer: NodeId,
    p_pick: f64,
    bufdepth: usize,
    rng: &mut R,
) -> bool {
    match buf.head() {
        None => return false,
        Some(h) if h.dest == peer => return false,
        _ => {}
    }
    let Some(pos) = buf
        .q
        .iter()
        .take(bufdepth)
        .skip(1)
        .position(|p| p.dest == peer)
        .map(|i| i + 1)
    else {
        return false;
    };
    if p_pick <= 0.0 || (p_pick < 1.0 && !rng.gen_bool(p_pick)) {
        return false;
    }
    let pkt = buf.q.remove(pos).expect("position in range");
    if let Some(h) = buf.q.front_mut() {
        h.bypassed += 1;
    }
    buf.q.push_front(pkt);
    true
}
