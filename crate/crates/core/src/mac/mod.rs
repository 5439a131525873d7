//! Per-node FD-MAC: DCF contention, the two-way full-duplex handshake with
//! shared random backoff, snooping-driven injection at hidden nodes, and
//! virtual contention over the AP buffer.

mod backoff;
mod buffer;
mod node;
mod snoop;

pub use backoff::{draw_backoff, snoop_tx_probability, srb_resolve, Dcf};
pub use buffer::{reorder_buffer, MacBuffer, Packet};
pub use node::{
    Action, Ctx, NodeMac, NodeStats, PeerKnowledge, Phase, PurgeCause, TimerKind,
};
pub use snoop::{plan_injection, Belief, InjectionPlan, SnoopState};

use thiserror::Error;

use crate::frame::Timing;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("difs_us ({difs}) must equal sifs_us + 2 * slot_us ({expected})")]
    Difs { difs: u64, expected: u64 },
    #[error("{name} = {value} is not of the form 2^k - 1")]
    NotPowerOfTwoMinusOne { name: &'static str, value: u32 },
    #[error("cw_min ({0}) exceeds cw_max_limit ({1})")]
    CwOrder(u32, u32),
    #[error("bufdepth must be at least 1")]
    Bufdepth,
    #[error("{name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("beta must be positive, got {0}")]
    Beta(f64),
}

/// 802.11 DCF timing and contention window limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DcfParams {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub cw_min: u32,
    pub cw_max_limit: u32,
    /// Wait after the end of a DATA frame before declaring its ACK lost.
    pub ack_timeout_us: u64,
    pub retry_limit: u32,
}

impl DcfParams {
    /// OFDM-PHY style defaults; the ACK timeout is SIFS + the longest ACK
    /// airtime + one slot.
    pub fn with_timing(timing: &Timing) -> Self {
        let (slot, sifs) = (9, 16);
        DcfParams {
            slot_us: slot,
            sifs_us: sifs,
            difs_us: sifs + 2 * slot,
            cw_min: 15,
            cw_max_limit: 1023,
            ack_timeout_us: sifs + timing.ack_airtime_us(true) + slot,
            retry_limit: 7,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let expected = self.sifs_us + 2 * self.slot_us;
        if self.difs_us != expected {
            return Err(ParamError::Difs {
                difs: self.difs_us,
                expected,
            });
        }
        for (name, value) in [("cw_min", self.cw_min), ("cw_max_limit", self.cw_max_limit)] {
            if !(value + 1).is_power_of_two() {
                return Err(ParamError::NotPowerOfTwoMinusOne { name, value });
            }
        }
        if self.cw_min > self.cw_max_limit {
            return Err(ParamError::CwOrder(self.cw_min, self.cw_max_limit));
        }
        Ok(())
    }
}

impl Default for DcfParams {
    fn default() -> Self {
        Self::with_timing(&Timing::default())
    }
}

/// How a snooping node decides to inject into a hidden-node opportunity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnoopPolicy {
    Off,
    /// Inject at every opportunity.
    Always,
    /// Inject with probability `beta / CW_max`.
    Beta(f64),
}

/// Everything a node MAC needs to know about the protocol configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MacParams {
    pub dcf: DcfParams,
    pub timing: Timing,
    /// Off: plain 802.11 DCF, HOL always 0, no injection.
    pub fd_enabled: bool,
    /// Off: the node never initiates contention and only responds.
    pub contend: bool,
    pub bufdepth: usize,
    pub p_pick: f64,
    pub snoop: SnoopPolicy,
    pub queue_limit: usize,
}

impl Default for MacParams {
    fn default() -> Self {
        let timing = Timing::default();
        MacParams {
            dcf: DcfParams::with_timing(&timing),
            timing,
            fd_enabled: true,
            contend: true,
            bufdepth: 1,
            p_pick: 0.0,
            snoop: SnoopPolicy::Beta(16.0),
            queue_limit: 1000,
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        self.dcf.validate()?;
        if self.bufdepth == 0 {
            return Err(ParamError::Bufdepth);
        }
        if !(0.0..=1.0).contains(&self.p_pick) {
            return Err(ParamError::Probability {
                name: "p_pick",
                value: self.p_pick,
            });
        }
        if let SnoopPolicy::Beta(b) = self.snoop {
            if b.is_nan() || b <= 0.0 {
                return Err(ParamError::Beta(b));
            }
        }
        Ok(())
    }

    /// Airtime of the longest ACK (one carrying DURNXT).
    pub fn ack_long_us(&self) -> u64 {
        self.timing.ack_airtime_us(true)
    }
}
