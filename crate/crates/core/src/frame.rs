//! Bit-level DATA/ACK frame codec with the full-duplex header.
//!
//! On-air layout, every multi-bit field most-significant bit first:
//!
//! ```text
//! PHY   SYNC(8) LENGTH(16)                       LENGTH = payload bytes
//! MAC   KIND(1) FRAG(1) DUR(16) SA(16) DA(16)
//! FD    DUPMODE(1) HOL(1) [DURNXT(16)] [DURFD(16)] CTS(1) SRB(10)
//! BODY  payload (8 * LENGTH)
//! FCS   CRC-32 (32) over LENGTH .. end of payload
//! ```
//!
//! The FD header has no presence flags. Which optional fields are on the
//! air follows from fields already decoded:
//!
//! * DATA frames always carry DURNXT,
//! * FD-mode DATA frames also carry DURFD,
//! * ACK frames carry DURNXT only when HOL = 1 and never carry DURFD.
//!
//! The minimal FD header (an HD ACK with HOL = 0) is therefore 13 bits.
//! See `docs/FRAME_FORMAT.md` for the full reference.

use bitvec::prelude::*;
use thiserror::Error;

/// Station identifier. Node 0 is the access point in every scenario.
pub type NodeId = u16;

/// Bit string type produced by [`encode`].
pub type Bits = BitVec<u8, Msb0>;

pub const PHY_SYNC: u8 = 0b1011_0101;
pub const PHY_HEADER_BITS: usize = 8 + 16;
pub const MAC_HEADER_BITS: usize = 1 + 1 + 16 + 16 + 16;
pub const FD_HEADER_MIN_BITS: usize = 13;
pub const CRC_BITS: usize = 32;
/// Largest SRB value; the field is 10 bits wide.
pub const SRB_MAX: u16 = 1023;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data,
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DupMode {
    Hd,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MacHeader {
    pub kind: FrameKind,
    /// Duration/ID in microseconds.
    pub dur_us: u16,
    pub sa: NodeId,
    pub da: NodeId,
    pub frag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FdHeader {
    pub dupmode: DupMode,
    /// Next buffered packet is for the destination of this one.
    pub hol: bool,
    /// Airtime of the head-of-line packet, microseconds.
    pub durnxt: Option<u16>,
    /// Airtime of the full-duplex round, microseconds.
    pub durfd: Option<u16>,
    /// Destination may send a packet back to the source.
    pub cts: bool,
    pub srb: u16,
}

impl FdHeader {
    /// Header for a plain half-duplex ACK with nothing to advertise.
    pub fn plain_ack() -> Self {
        FdHeader {
            dupmode: DupMode::Hd,
            hol: false,
            durnxt: None,
            durfd: None,
            cts: false,
            srb: 0,
        }
    }

    /// Encoded width in bits.
    pub fn bit_len(&self) -> usize {
        FD_HEADER_MIN_BITS
            + 16 * usize::from(self.durnxt.is_some())
            + 16 * usize::from(self.durfd.is_some())
    }
}

/// Which optional FD fields a frame must carry, as `(durnxt, durfd)`.
pub fn optional_fields(kind: FrameKind, dupmode: DupMode, hol: bool) -> (bool, bool) {
    match kind {
        FrameKind::Data => (true, dupmode == DupMode::Fd),
        FrameKind::Ack => (hol, false),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub mac: MacHeader,
    pub fd: FdHeader,
    pub payload: Vec<u8>,
}

/// PHY timing used for airtime accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub preamble_us: u64,
    /// Rate for ACK frames.
    pub base_rate_bps: u64,
    /// Rate for DATA frames.
    pub data_rate_bps: u64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            preamble_us: 20,
            base_rate_bps: 6_000_000,
            data_rate_bps: 12_000_000,
        }
    }
}

impl Timing {
    pub fn rate_for(&self, kind: FrameKind) -> u64 {
        match kind {
            FrameKind::Data => self.data_rate_bps,
            FrameKind::Ack => self.base_rate_bps,
        }
    }

    /// `preamble + ceil((header + payload + crc) / rate)`.
    pub fn airtime_us(&self, kind: FrameKind, header_bits: usize, payload_bytes: usize) -> u64 {
        let bits = (header_bits + payload_bytes * 8 + CRC_BITS) as u64;
        self.preamble_us + (bits * 1_000_000).div_ceil(self.rate_for(kind))
    }

    /// Airtime of a DATA frame carrying `payload_bytes` in the given mode.
    pub fn data_airtime_us(&self, dupmode: DupMode, payload_bytes: usize) -> u64 {
        let fd_bits = match dupmode {
            DupMode::Hd => FD_HEADER_MIN_BITS + 16,
            DupMode::Fd => FD_HEADER_MIN_BITS + 32,
        };
        self.airtime_us(FrameKind::Data, MAC_HEADER_BITS + fd_bits, payload_bytes)
    }

    /// Airtime of an ACK; `hol` adds the DURNXT field.
    pub fn ack_airtime_us(&self, hol: bool) -> u64 {
        let fd_bits = FD_HEADER_MIN_BITS + if hol { 16 } else { 0 };
        self.airtime_us(FrameKind::Ack, MAC_HEADER_BITS + fd_bits, 0)
    }

    /// Time from the start of a frame until its MAC and FD headers are
    /// decodable by a listener.
    pub fn header_time_us(&self, frame: &Frame) -> u64 {
        let bits = (MAC_HEADER_BITS + frame.fd.bit_len()) as u64;
        self.preamble_us + (bits * 1_000_000).div_ceil(self.rate_for(frame.mac.kind))
    }
}

impl Frame {
    pub fn header_bits(&self) -> usize {
        MAC_HEADER_BITS + self.fd.bit_len()
    }

    /// Total encoded length in bits, including the PHY placeholder and FCS.
    pub fn encoded_bits(&self) -> usize {
        PHY_HEADER_BITS + self.header_bits() + self.payload.len() * 8 + CRC_BITS
    }

    pub fn airtime_us(&self, timing: &Timing) -> u64 {
        timing.airtime_us(self.mac.kind, self.header_bits(), self.payload.len())
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.fd.srb > SRB_MAX {
            return Err(FrameError::SrbOutOfRange(self.fd.srb));
        }
        if self.fd.dupmode == DupMode::Fd && self.fd.durfd.is_none() {
            return Err(FrameError::FdWithoutDurfd);
        }
        if self.mac.sa == self.mac.da {
            return Err(FrameError::SameAddress(self.mac.sa));
        }
        if self.mac.kind == FrameKind::Ack && !self.payload.is_empty() {
            return Err(FrameError::AckWithPayload);
        }
        if self.payload.len() > usize::from(u16::MAX) {
            return Err(FrameError::PayloadTooLong(self.payload.len()));
        }
        let (nxt, fd) = optional_fields(self.mac.kind, self.fd.dupmode, self.fd.hol);
        if nxt != self.fd.durnxt.is_some() {
            return Err(FrameError::OptionalFieldMismatch("DURNXT"));
        }
        if fd != self.fd.durfd.is_some() {
            return Err(FrameError::OptionalFieldMismatch("DURFD"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame truncated: need {needed} bits, have {available}")]
    TruncatedFrame { needed: usize, available: usize },
    #[error("bad CRC: frame carries {carried:#010x}, computed {computed:#010x}")]
    BadCrc { carried: u32, computed: u32 },
    #[error("SRB {0} does not fit in 10 bits")]
    SrbOutOfRange(u16),
    #[error("FD-mode frame without DURFD")]
    FdWithoutDurfd,
    #[error("{0} presence does not match frame kind, DUPMODE and HOL")]
    OptionalFieldMismatch(&'static str),
    #[error("source and destination are both {0}")]
    SameAddress(NodeId),
    #[error("ACK frames carry no payload")]
    AckWithPayload,
    #[error("payload of {0} bytes exceeds the 16-bit LENGTH field")]
    PayloadTooLong(usize),
    #[error("bad PHY sync byte {0:#04x}")]
    BadSync(u8),
    #[error("{0} trailing bits after FCS")]
    TrailingBits(usize),
}

fn push_field(bits: &mut Bits, value: u64, width: usize) {
    for i in (0..width).rev() {
        bits.push((value >> i) & 1 == 1);
    }
}

/// CRC-32 (IEEE 802.3/802.11 polynomial, reflected) over a bit sequence
/// in transmission order. Byte-aligned input fed LSB-first per byte gives
/// the usual FCS value.
pub fn crc32_bits(bits: impl IntoIterator<Item = bool>) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for bit in bits {
        let mix = (crc & 1) ^ u32::from(bit);
        crc >>= 1;
        if mix == 1 {
            crc ^= 0xEDB8_8320;
        }
    }
    !crc
}

pub fn encode(frame: &Frame) -> Result<Bits, FrameError> {
    frame.validate()?;
    let mut bits = Bits::with_capacity(frame.encoded_bits());
    push_field(&mut bits, u64::from(PHY_SYNC), 8);
    push_field(&mut bits, frame.payload.len() as u64, 16);

    let mac = &frame.mac;
    bits.push(mac.kind == FrameKind::Ack);
    bits.push(mac.frag);
    push_field(&mut bits, u64::from(mac.dur_us), 16);
    push_field(&mut bits, u64::from(mac.sa), 16);
    push_field(&mut bits, u64::from(mac.da), 16);

    let fd = &frame.fd;
    bits.push(fd.dupmode == DupMode::Fd);
    bits.push(fd.hol);
    if let Some(v) = fd.durnxt {
        push_field(&mut bits, u64::from(v), 16);
    }
    if let Some(v) = fd.durfd {
        push_field(&mut bits, u64::from(v), 16);
    }
    bits.push(fd.cts);
    push_field(&mut bits, u64::from(fd.srb), 10);

    for byte in &frame.payload {
        push_field(&mut bits, u64::from(*byte), 8);
    }
    let crc = crc32_bits(bits[8..].iter().by_vals());
    push_field(&mut bits, u64::from(crc), 32);
    debug_assert_eq!(bits.len(), frame.encoded_bits());
    Ok(bits)
}

struct Reader<'a> {
    bits: &'a BitSlice<u8, Msb0>,
    pos: usize,
}

impl Reader<'_> {
    fn need(&self, n: usize) -> Result<(), FrameError> {
        if self.pos + n > self.bits.len() {
            Err(FrameError::TruncatedFrame {
                needed: self.pos + n,
                available: self.bits.len(),
            })
        } else {
            Ok(())
        }
    }

    fn take(&mut self, width: usize) -> Result<u64, FrameError> {
        self.need(width)?;
        let v = self.bits[self.pos..self.pos + width]
            .iter()
            .by_vals()
            .fold(0u64, |acc, b| (acc << 1) | u64::from(b));
        self.pos += width;
        Ok(v)
    }

    fn flag(&mut self) -> Result<bool, FrameError> {
        Ok(self.take(1)? == 1)
    }
}

pub fn decode(bits: &BitSlice<u8, Msb0>) -> Result<Frame, FrameError> {
    let mut r = Reader { bits, pos: 0 };
    let sync = r.take(8)? as u8;
    if sync != PHY_SYNC {
        return Err(FrameError::BadSync(sync));
    }
    let len = r.take(16)? as usize;

    let kind = if r.flag()? { FrameKind::Ack } else { FrameKind::Data };
    let frag = r.flag()?;
    let dur_us = r.take(16)? as u16;
    let sa = r.take(16)? as NodeId;
    let da = r.take(16)? as NodeId;

    let dupmode = if r.flag()? { DupMode::Fd } else { DupMode::Hd };
    let hol = r.flag()?;
    let (has_nxt, has_fd) = optional_fields(kind, dupmode, hol);
    let durnxt = if has_nxt { Some(r.take(16)? as u16) } else { None };
    let durfd = if has_fd { Some(r.take(16)? as u16) } else { None };
    let cts = r.flag()?;
    let srb = r.take(10)? as u16;

    r.need(len * 8 + CRC_BITS)?;
    let mut payload = Vec::with_capacity(len);
    for _ in 0..len {
        payload.push(r.take(8)? as u8);
    }
    let body_end = r.pos;
    let carried = r.take(32)? as u32;
    let computed = crc32_bits(bits[8..body_end].iter().by_vals());
    if carried != computed {
        return Err(FrameError::BadCrc { carried, computed });
    }
    if r.pos != bits.len() {
        return Err(FrameError::TrailingBits(bits.len() - r.pos));
    }

    let frame = Frame {
        mac: MacHeader {
            kind,
            dur_us,
            sa,
            da,
            frag,
        },
        fd: FdHeader {
            dupmode,
            hol,
            durnxt,
            durfd,
            cts,
            srb,
        },
        payload,
    };
    frame.validate()?;
    Ok(frame)
}

/// Packs a bit string into bytes (zero padded) for hex fixtures.
pub fn to_hex(bits: &BitSlice<u8, Msb0>) -> String {
    let mut out = String::with_capacity(bits.len().div_ceil(4));
    for chunk in bits.chunks(8) {
        let mut byte = 0u8;
        for (i, b) in chunk.iter().by_vals().enumerate() {
            byte |= u8::from(b) << (7 - i);
        }
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
