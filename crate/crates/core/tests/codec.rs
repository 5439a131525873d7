mod common;

use common::{fixture_frames, frame, oracle_bits, oracle_hex};
use fdmac_core::frame::{
    decode, encode, optional_fields, to_hex, DupMode, Frame, FrameError, FrameKind,
};
use proptest::prelude::*;

#[test]
fn oracle_crc_check_value() {
    // "123456789" fed LSB-first per byte must give the standard 0xCBF43926.
    let bits: String = b"123456789"
        .iter()
        .map(|b| format!("{:08b}", b.reverse_bits()))
        .collect();
    let mut crc = 0xFFFF_FFFFu32;
    for ch in bits.chars() {
        let top = (crc >> 31) ^ u32::from(ch == '1');
        crc <<= 1;
        if top == 1 {
            crc ^= 0x04C1_1DB7;
        }
    }
    assert_eq!((!crc).reverse_bits(), 0xCBF4_3926);
}

#[test]
fn golden_fixtures_match_codec_and_oracle() {
    let text = include_str!("fixtures/frames.hex");
    let golden: Vec<(&str, usize, &str)> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace();
            (
                it.next().unwrap(),
                it.next().unwrap().parse().unwrap(),
                it.next().unwrap(),
            )
        })
        .collect();
    let frames = fixture_frames();
    assert_eq!(golden.len(), frames.len());
    for ((name, f), (gname, gbits, ghex)) in frames.iter().zip(&golden) {
        assert_eq!(name, gname);
        let bits = encode(f).unwrap();
        let oracle = oracle_bits(f);
        assert_eq!(bits.len(), *gbits, "{name}");
        assert_eq!(oracle.len(), *gbits, "{name}");
        assert_eq!(to_hex(&bits), *ghex, "{name}: codec");
        assert_eq!(oracle_hex(&oracle), *ghex, "{name}: oracle");
        assert_eq!(&decode(&bits).unwrap(), f, "{name}");
    }
}

pub fn arb_frame() -> impl Strategy<Value = Frame> {
    (
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        any::<(u16, u16, u16, u16, u16)>(),
        any::<bool>(),
        0u16..=1023,
        proptest::collection::vec(any::<u8>(), 0..64),
    )
        .prop_filter_map("distinct addresses", |(ack, fd, hol, frag, (dur, sa, da, nxt, dfd), cts, srb, payload)| {
            if sa == da {
                return None;
            }
            let kind = if ack { FrameKind::Ack } else { FrameKind::Data };
            let dupmode = if fd && !ack { DupMode::Fd } else { DupMode::Hd };
            let (has_nxt, has_fd) = optional_fields(kind, dupmode, hol);
            Some(frame(
                kind,
                frag,
                dur,
                sa,
                da,
                dupmode,
                hol,
                has_nxt.then_some(nxt),
                has_fd.then_some(dfd),
                cts,
                srb,
                if ack { &[] } else { &payload },
            ))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn round_trip(f in arb_frame()) {
        let bits = encode(&f).unwrap();
        prop_assert_eq!(bits.len(), f.encoded_bits());
        prop_assert_eq!(decode(&bits).unwrap(), f);
    }

    #[test]
    fn encoder_matches_oracle(f in arb_frame()) {
        let bits = encode(&f).unwrap();
        let text: String = bits.iter().by_vals().map(|b| if b { '1' } else { '0' }).collect();
        prop_assert_eq!(text, oracle_bits(&f));
    }

    #[test]
    fn single_bit_flip_never_decodes_to_same_frame(f in arb_frame(), pos in any::<prop::sample::Index>()) {
        let mut bits = encode(&f).unwrap();
        let i = pos.index(bits.len());
        let flipped = !bits[i];
        bits.set(i, flipped);
        if let Ok(g) = decode(&bits) {
            prop_assert_ne!(g, f);
        }
    }

    #[test]
    fn truncation_is_an_error(f in arb_frame(), cut in 1usize..64) {
        let bits = encode(&f).unwrap();
        let keep = bits.len().saturating_sub(cut);
        prop_assert!(decode(&bits[..keep]).is_err());
    }
}

#[test]
fn length_is_affine_in_payload_and_optional_fields() {
    for kind in [FrameKind::Data, FrameKind::Ack] {
        for dupmode in [DupMode::Hd, DupMode::Fd] {
            for hol in [false, true] {
                let (nxt, fd) = optional_fields(kind, dupmode, hol);
                if dupmode == DupMode::Fd && !fd {
                    continue;
                }
                let sizes: &[usize] = if kind == FrameKind::Ack { &[0] } else { &[0, 1, 77, 1500] };
                for &n in sizes {
                    let payload = vec![0xA5; n];
                    let f = frame(
                        kind,
                        false,
                        1,
                        2,
                        3,
                        dupmode,
                        hol,
                        nxt.then_some(9),
                        fd.then_some(9),
                        false,
                        0,
                        &payload,
                    );
                    let want = 24 + 50 + 13 + 16 * usize::from(nxt) + 16 * usize::from(fd) + 8 * n + 32;
                    assert_eq!(encode(&f).unwrap().len(), want, "{kind:?} {dupmode:?} hol={hol} n={n}");
                }
            }
        }
    }
    // the minimal FD header: HD ACK without HOL
    let ack = frame(FrameKind::Ack, false, 0, 1, 0, DupMode::Hd, false, None, None, false, 0, b"");
    assert_eq!(ack.fd.bit_len(), 13);
}

#[test]
fn srb_wider_than_ten_bits_is_rejected() {
    let f = frame(FrameKind::Ack, false, 0, 1, 0, DupMode::Hd, false, None, None, false, 1024, b"");
    assert_eq!(encode(&f), Err(FrameError::SrbOutOfRange(1024)));
}
