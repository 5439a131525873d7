use rand::RngCore;

use super::DcfParams;
use crate::frame::SRB_MAX;

/// Uniform integer in `[0, min(cw_max, 1023)]`.
///
/// Reference stream: draw `next_u32` values and reject any at or above the
/// largest multiple of the range size that fits in 2^32; the accepted
/// value modulo the range size is the result.
pub fn draw_backoff<R: RngCore + ?Sized>(cw_max: u32, rng: &mut R) -> u16 {
    let range = u64::from(cw_max.min(u32::from(SRB_MAX))) + 1;
    let zone = (1u64 << 32) / range * range;
    loop {
        let x = u64::from(rng.next_u32());
        if x < zone {
            return (x % range) as u16;
        }
    }
}

pub fn srb_resolve(srb_data: u16, srb_ack: u16) -> u16 {
    srb_data.max(srb_ack)
}

/// `min(1, beta / cw_max)`.
pub fn snoop_tx_probability(cw_max: u32, beta: f64) -> f64 {
    (beta / f64::from(cw_max.max(1))).min(1.0)
}

/// Binary-exponential-backoff state of one contender.
///
/// The counter freezes while the medium is busy and resumes after the
/// medium has been idle for DIFS. Time is kept in whole microseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dcf {
    pub cw: u32,
    pub retries: u32,
    /// Remaining slots; `None` until a fresh value is drawn.
    pub backoff: Option<u16>,
    /// Time counting resumed from (after DIFS), while the counter runs.
    pub counting_from: Option<u64>,
}

impl Dcf {
    pub fn new(cw_min: u32) -> Self {
        Dcf {
            cw: cw_min,
            retries: 0,
            backoff: None,
            counting_from: None,
        }
    }

    pub fn ensure_backoff<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> u16 {
        *self
            .backoff
            .get_or_insert_with(|| draw_backoff(self.cw, rng))
    }

    /// Start counting down on a medium idle since `idle_since`; returns the
    /// transmit time.
    pub fn resume(&mut self, p: &DcfParams, idle_since: u64, now: u64, slots: u16) -> u64 {
        let from = idle_since.max(now) + p.difs_us;
        self.counting_from = Some(from);
        from + u64::from(slots) * p.slot_us
    }

    /// Medium went busy at `now`: keep the slots not yet elapsed.
    pub fn freeze(&mut self, p: &DcfParams, now: u64) {
        if let (Some(from), Some(b)) = (self.counting_from.take(), self.backoff) {
            let elapsed = if now > from {
                (now - from) / p.slot_us
            } else {
                0
            };
            self.backoff = Some(b - elapsed.min(u64::from(b)) as u16);
        }
    }

    pub fn on_success(&mut self, p: &DcfParams) {
        self.cw = p.cw_min;
        self.retries = 0;
        self.backoff = None;
        self.counting_from = None;
    }

    /// Returns true if the retry limit is exceeded and the packet must be
    /// dropped.
    pub fn on_failure(&mut self, p: &DcfParams) -> bool {
        self.backoff = None;
        self.counting_from = None;
        self.retries += 1;
        if self.retries > p.retry_limit {
            self.cw = p.cw_min;
            self.retries = 0;
            true
        } else {
            self.cw = (2 * self.cw + 1).min(p.cw_max_limit);
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_window_draws_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!((0..100).all(|_| draw_backoff(0, &mut rng) == 0));
    }

    #[test]
    fn draws_clamped_to_srb_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!((0..10_000).all(|_| draw_backoff(u32::MAX, &mut rng) <= 1023));
    }

    #[test]
    fn srb_takes_max() {
        assert_eq!(srb_resolve(0, 0), 0);
        assert_eq!(srb_resolve(7, 3), 7);
        assert_eq!(srb_resolve(1023, 1023), 1023);
    }

    #[test]
    fn snoop_probability_clamps() {
        assert_eq!(snoop_tx_probability(16, 16.0), 1.0);
        assert_eq!(snoop_tx_probability(1024, 16.0), 0.015625);
        assert_eq!(snoop_tx_probability(16, 32.0), 1.0);
    }

    #[test]
    fn freeze_keeps_unelapsed_slots() {
        let p = DcfParams::default();
        let mut d = Dcf::new(p.cw_min);
        d.backoff = Some(5);
        let tx_at = d.resume(&p, 100, 100, 5);
        assert_eq!(tx_at, 100 + 34 + 45);
        // busy 2.5 slots into the countdown: two whole slots consumed
        d.freeze(&p, 100 + 34 + 22);
        assert_eq!(d.backoff, Some(3));
        // busy during DIFS consumes nothing
        d.resume(&p, 500, 500, 3);
        d.freeze(&p, 520);
        assert_eq!(d.backoff, Some(3));
    }

    #[test]
    fn window_doubles_then_resets() {
        let p = DcfParams::default();
        let mut d = Dcf::new(p.cw_min);
        assert!(!d.on_failure(&p));
        assert_eq!(d.cw, 31);
        for _ in 0..5 {
            d.on_failure(&p);
        }
        assert_eq!(d.cw, 1023);
        assert!(!d.on_failure(&p));
        assert_eq!(d.cw, 1023);
        assert!(d.on_failure(&p), "eighth failure exceeds retry limit 7");
        assert_eq!(d.cw, p.cw_min);
        d.cw = 255;
        d.on_success(&p);
        assert_eq!(d.cw, 15);
    }
}
