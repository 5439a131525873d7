use fdmac_core::frame::{DupMode, NodeId, Timing};
use fdmac_core::mac::{
    draw_backoff, plan_injection, reorder_buffer, snoop_tx_probability, srb_resolve, Dcf,
    DcfParams, MacBuffer, MacParams, Packet,
};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backoff_draws_frozen_for_seed_42() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let got: Vec<u16> = (0..12).map(|_| draw_backoff(15, &mut rng)).collect();
    assert_eq!(got, [1, 5, 8, 6, 12, 8, 2, 9, 0, 8, 14, 11]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let got: Vec<u16> = (0..6).map(|_| draw_backoff(1023, &mut rng)).collect();
    assert_eq!(got, [929, 949, 392, 966, 908, 776]);
}

/// Rejection sampling written out from the documented reference stream.
fn reference_draw(cw: u32, rng: &mut impl RngCore) -> u16 {
    let n = u64::from(cw.min(1023)) + 1;
    let limit = (u64::from(u32::MAX) + 1) - (u64::from(u32::MAX) + 1) % n;
    loop {
        let x = u64::from(rng.next_u32());
        if x < limit {
            return (x % n) as u16;
        }
    }
}

#[test]
fn backoff_matches_reference_stream() {
    for cw in [0, 1, 15, 31, 63, 99, 511, 999, 1023, 5000] {
        let mut a = ChaCha8Rng::seed_from_u64(u64::from(cw));
        let mut b = a.clone();
        for _ in 0..2000 {
            assert_eq!(draw_backoff(cw, &mut a), reference_draw(cw, &mut b), "cw={cw}");
        }
    }
}

#[test]
fn backoff_is_uniform_chi_square() {
    // 32 bins, 31 degrees of freedom, critical value at alpha = 0.01
    const CRIT: f64 = 52.19;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 64_000;
    let mut bins = [0u32; 32];
    for _ in 0..n {
        bins[usize::from(draw_backoff(31, &mut rng))] += 1;
    }
    let expected = f64::from(n) / 32.0;
    let chi2: f64 = bins
        .iter()
        .map(|&o| (f64::from(o) - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < CRIT, "chi2 = {chi2}");
}

#[test]
fn backoff_range_clamped_to_srb_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!((0..10_000).all(|_| draw_backoff(u32::MAX, &mut rng) <= 1023));
}

#[test]
fn srb_and_snoop_probability() {
    assert_eq!(srb_resolve(3, 9), 9);
    assert_eq!(srb_resolve(9, 3), 9);
    assert_eq!(snoop_tx_probability(1024, 16.0), 16.0 / 1024.0);
    assert_eq!(snoop_tx_probability(16, 16.0), 1.0);
}

#[test]
fn binary_exponential_backoff() {
    let p = DcfParams::default();
    let mut d = Dcf::new(p.cw_min);
    let mut seen = vec![d.cw];
    for _ in 0..p.retry_limit {
        assert!(!d.on_failure(&p));
        seen.push(d.cw);
    }
    assert_eq!(seen, [15, 31, 63, 127, 255, 511, 1023, 1023]);
    assert!(d.on_failure(&p), "drop after the retry limit");
    assert_eq!(d.cw, p.cw_min);
}

#[test]
fn countdown_freezes_and_resumes() {
    let p = DcfParams::default();
    let mut d = Dcf::new(p.cw_min);
    d.backoff = Some(10);
    // idle since 100: counting starts at 134
    assert_eq!(d.resume(&p, 100, 100, 10), 134 + 90);
    // busy at 134 + 3 slots + 4 us: three slots elapsed
    d.freeze(&p, 134 + 27 + 4);
    assert_eq!(d.backoff, Some(7));
}

fn buffer(dests: &[NodeId]) -> MacBuffer {
    let mut b = MacBuffer::new();
    for (i, &d) in dests.iter().enumerate() {
        b.push(Packet::new(i as u64, 0, d, 100, 0));
    }
    b
}

proptest! {
    #[test]
    fn reorder_locality(
        dests in proptest::collection::vec(1u16..=5, 1..12),
        peer in 1u16..=5,
        p_pick in 0.0f64..=1.0,
        bufdepth in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut b = buffer(&dests);
        let before: Vec<(u64, NodeId)> = b.iter().map(|p| (p.id, p.dest)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let moved = reorder_buffer(&mut b, peer, p_pick, bufdepth, &mut rng);
        let after: Vec<(u64, NodeId)> = b.iter().map(|p| (p.id, p.dest)).collect();
        prop_assert_eq!(before.len(), after.len());
        if !moved {
            prop_assert_eq!(&before, &after);
            return Ok(());
        }
        // exactly one packet moved to the front: the first for peer within bufdepth
        let pos = before.iter().position(|p| p.1 == peer).unwrap();
        prop_assert!(pos >= 1 && pos < bufdepth);
        prop_assert!(before[0].1 != peer);
        prop_assert_eq!(after[0], before[pos]);
        let mut rest = before.clone();
        rest.remove(pos);
        prop_assert_eq!(&after[1..], &rest[..]);
        prop_assert_eq!(b.get(1).unwrap().bypassed, 1);
    }

    #[test]
    fn injection_fits_before_deadline(
        now in 0u64..1_000_000,
        budget in 0u64..3000,
        remaining in 0usize..2000,
    ) {
        let t = Timing::default();
        let deadline = now + budget;
        match plan_injection(&t, now, deadline, remaining) {
            None => prop_assert!(remaining == 0 || t.data_airtime_us(DupMode::Hd, 1) > budget),
            Some(plan) => {
                prop_assert!(plan.end_us <= deadline);
                prop_assert!(plan.bytes >= 1 && plan.bytes <= remaining);
                prop_assert_eq!(plan.frag, plan.bytes < remaining);
                prop_assert_eq!(plan.end_us, now + t.data_airtime_us(DupMode::Hd, plan.bytes));
                if plan.bytes < remaining {
                    prop_assert!(now + t.data_airtime_us(DupMode::Hd, plan.bytes + 1) > deadline);
                }
            }
        }
    }
}

/// An AP head for mobile 1 competes with packets for mobiles 2..=5. Each
/// exchange is with the mobile owning the packet behind the head, so a
/// candidate always exists; P(head bypassed >= k times) = p_pick^k.
#[test]
fn consecutive_bypass_decays_geometrically() {
    let p_pick = 0.6;
    let bufdepth = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let chains = 40_000;
    let mut at_least = [0u32; 6];
    for c in 0..chains {
        let mut b = MacBuffer::new();
        b.push(Packet::new(0, 0, 1, 100, 0));
        let mut id = 1;
        let bypassed = loop {
            while b.len() < bufdepth + 2 {
                b.push(Packet::new(id, 0, rng.gen_range(2..=5), 100, 0));
                id += 1;
            }
            let peer = b.get(1).unwrap().dest;
            if !reorder_buffer(&mut b, peer, p_pick, bufdepth, &mut rng) {
                let head = b.pop().unwrap();
                assert_eq!(head.id, 0, "chain {c}");
                break head.bypassed;
            }
            b.pop();
        };
        for (k, slot) in at_least.iter_mut().enumerate() {
            if bypassed >= k as u32 {
                *slot += 1;
            }
        }
    }
    assert_eq!(at_least[0], chains);
    for (k, &hits) in at_least.iter().enumerate().skip(1) {
        let frac = f64::from(hits) / f64::from(chains);
        let want = p_pick.powi(k as i32);
        let sd = (want * (1.0 - want) / f64::from(chains)).sqrt();
        assert!((frac - want).abs() < 4.0 * sd, "k={k}: {frac:.4} vs {want:.4}");
    }
}

#[test]
fn default_parameters() {
    let m = MacParams::default();
    assert_eq!(
        (m.dcf.slot_us, m.dcf.sifs_us, m.dcf.difs_us),
        (9, 16, 34)
    );
    assert_eq!((m.dcf.cw_min, m.dcf.cw_max_limit, m.dcf.retry_limit), (15, 1023, 7));
    assert_eq!(m.dcf.ack_timeout_us, 16 + m.ack_long_us() + 9);
    m.validate().unwrap();
}
