use crate::frame::{DupMode, NodeId, Timing};

/// What a node has learned about whether another mobile can hear it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Belief {
    #[default]
    Unknown,
    Clique,
    Hidden,
}

/// An AP DATA to `target` whose ACK we are listening for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AckWatch {
    target: NodeId,
    heard_ack: bool,
}

/// Topology beliefs built from overheard frames.
///
/// Hearing anything from a node marks it `Clique` for good. An AP DATA to a
/// node whose ACK is not heard within SIFS + ACK marks it `Hidden`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnoopState {
    beliefs: Vec<Belief>,
    watch: Option<AckWatch>,
}

impl SnoopState {
    pub fn new(n: usize) -> Self {
        SnoopState {
            beliefs: vec![Belief::Unknown; n],
            watch: None,
        }
    }

    pub fn belief(&self, node: NodeId) -> Belief {
        self.beliefs
            .get(usize::from(node))
            .copied()
            .unwrap_or_default()
    }

    /// A frame from `src` started in range.
    pub fn heard_from(&mut self, src: NodeId) {
        if let Some(b) = self.beliefs.get_mut(usize::from(src)) {
            *b = Belief::Clique;
        }
        if let Some(w) = &mut self.watch {
            if w.target == src {
                w.heard_ack = true;
            }
        }
    }

    /// Start listening for the ACK of an overheard AP DATA to `target`.
    pub fn watch_ack(&mut self, target: NodeId) {
        self.watch = Some(AckWatch {
            target,
            heard_ack: false,
        });
    }

    /// The ACK window for the watched DATA closed.
    pub fn close_watch(&mut self) {
        if let Some(w) = self.watch.take() {
            if let Some(b) = self.beliefs.get_mut(usize::from(w.target)) {
                if !w.heard_ack && *b != Belief::Clique {
                    *b = Belief::Hidden;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectionPlan {
    pub bytes: usize,
    /// More of the packet remains after this fragment.
    pub frag: bool,
    pub end_us: u64,
}

/// Size the injected frame so it ends no later than `deadline_us`.
pub fn plan_injection(
    timing: &Timing,
    now_us: u64,
    deadline_us: u64,
    remaining: usize,
) -> Option<InjectionPlan> {
    let budget = deadline_us.checked_sub(now_us)?;
    let fits = |b: usize| timing.data_airtime_us(DupMode::Hd, b) <= budget;
    if remaining == 0 || !fits(1) {
        return None;
    }
    let bytes = if fits(remaining) {
        remaining
    } else {
        // largest fitting size by bisection; airtime is monotone in size
        let (mut lo, mut hi) = (1usize, remaining);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    Some(InjectionPlan {
        bytes,
        frag: bytes < remaining,
        end_us: now_us + timing.data_airtime_us(DupMode::Hd, bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_ack_means_hidden() {
        let mut s = SnoopState::new(4);
        s.watch_ack(1);
        s.close_watch();
        assert_eq!(s.belief(1), Belief::Hidden);
        s.heard_from(1);
        assert_eq!(s.belief(1), Belief::Clique);
    }

    #[test]
    fn heard_ack_means_clique_and_sticks() {
        let mut s = SnoopState::new(4);
        s.watch_ack(2);
        s.heard_from(2);
        s.close_watch();
        assert_eq!(s.belief(2), Belief::Clique);
        s.watch_ack(2);
        s.close_watch();
        assert_eq!(s.belief(2), Belief::Clique);
    }

    #[test]
    fn injection_fits_deadline() {
        let t = Timing::default();
        let whole = plan_injection(&t, 0, 10_000, 200).unwrap();
        assert_eq!(whole.bytes, 200);
        assert!(!whole.frag);
        let air = t.data_airtime_us(DupMode::Hd, 100);
        let part = plan_injection(&t, 50, 50 + air, 200).unwrap();
        assert!((100..200).contains(&part.bytes));
        assert!(part.frag);
        assert!(part.end_us <= 50 + air);
        assert!(plan_injection(&t, 0, 10, 200).is_none());
    }
}
