#![allow(dead_code)]

use fdmac_core::frame::{optional_fields, DupMode, FdHeader, Frame, FrameKind, MacHeader};
use rand::Rng;

/// Field-by-field bit layout written as text, independent of the codec.
pub fn oracle_bits(f: &Frame) -> String {
    fn field(v: u64, w: usize) -> String {
        format!("{v:0w$b}")
    }
    let b = |x: bool| if x { "1" } else { "0" };
    let mut s = String::new();
    s += &field(f.payload.len() as u64, 16);
    s += b(f.mac.kind == FrameKind::Ack);
    s += b(f.mac.frag);
    s += &field(f.mac.dur_us.into(), 16);
    s += &field(f.mac.sa.into(), 16);
    s += &field(f.mac.da.into(), 16);
    s += b(f.fd.dupmode == DupMode::Fd);
    s += b(f.fd.hol);
    if let Some(v) = f.fd.durnxt {
        s += &field(v.into(), 16);
    }
    if let Some(v) = f.fd.durfd {
        s += &field(v.into(), 16);
    }
    s += b(f.fd.cts);
    s += &field(f.fd.srb.into(), 10);
    for byte in &f.payload {
        s += &field((*byte).into(), 8);
    }
    // Non-reflected shift register over the same bit order; the reflected
    // CRC-32 result is its bit reversal.
    let mut crc = 0xFFFF_FFFFu32;
    for ch in s.chars() {
        let top = (crc >> 31) ^ u32::from(ch == '1');
        crc <<= 1;
        if top == 1 {
            crc ^= 0x04C1_1DB7;
        }
    }
    let fcs = (!crc).reverse_bits();
    format!("10110101{s}{}", field(fcs.into(), 32))
}

pub fn oracle_hex(bits: &str) -> String {
    let mut padded = bits.to_string();
    while !padded.len().is_multiple_of(8) {
        padded.push('0');
    }
    padded
        .as_bytes()
        .chunks(8)
        .map(|c| format!("{:02x}", u8::from_str_radix(std::str::from_utf8(c).unwrap(), 2).unwrap()))
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn frame(
    kind: FrameKind,
    frag: bool,
    dur_us: u16,
    sa: u16,
    da: u16,
    dupmode: DupMode,
    hol: bool,
    durnxt: Option<u16>,
    durfd: Option<u16>,
    cts: bool,
    srb: u16,
    payload: &[u8],
) -> Frame {
    Frame {
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
        payload: payload.to_vec(),
    }
}

pub fn fixture_frames() -> Vec<(&'static str, Frame)> {
    use DupMode::*;
    use FrameKind::*;
    vec![
        ("hd_ack_plain", frame(Ack, false, 0, 1, 0, Hd, false, None, None, false, 0, b"")),
        ("hd_ack_hol", frame(Ack, false, 0, 1, 0, Hd, true, Some(412), None, false, 0, b"")),
        ("ack_srb_cts", frame(Ack, false, 20, 0, 3, Hd, true, Some(97), None, true, 1023, b"")),
        (
            "hd_data",
            frame(Data, false, 55, 0, 1, Hd, false, Some(0), None, false, 0, &[0xde, 0xad, 0xbe, 0xef]),
        ),
        ("fd_data", frame(Data, false, 52, 0, 1, Fd, true, Some(300), Some(500), true, 677, b"FD")),
        (
            "frag_data_edge_ids",
            frame(Data, true, 65535, 65535, 7, Hd, true, Some(65535), None, false, 1, b""),
        ),
    ]
}

/// A uniformly random valid frame.
pub fn random_frame(rng: &mut impl Rng) -> Frame {
    let kind = if rng.gen() { FrameKind::Ack } else { FrameKind::Data };
    let dupmode = if kind == FrameKind::Data && rng.gen() {
        DupMode::Fd
    } else {
        DupMode::Hd
    };
    let hol = rng.gen();
    let (has_nxt, has_fd) = optional_fields(kind, dupmode, hol);
    let sa: u16 = rng.gen();
    let mut da: u16 = rng.gen();
    if da == sa {
        da = sa.wrapping_add(1);
    }
    let len = if kind == FrameKind::Data { rng.gen_range(0..200) } else { 0 };
    frame(
        kind,
        rng.gen(),
        rng.gen(),
        sa,
        da,
        dupmode,
        hol,
        has_nxt.then(|| rng.gen()),
        has_fd.then(|| rng.gen()),
        rng.gen(),
        rng.gen_range(0..=1023),
        &(0..len).map(|_| rng.gen()).collect::<Vec<u8>>(),
    )
}
