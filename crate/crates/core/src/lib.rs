//! Discrete-event simulator for a full-duplex 802.11-style MAC: frame codec,
//! PHY link model, shared medium, per-node MAC state machines and the event
//! engine that ties them together.

pub mod frame;
pub mod mac;
pub mod medium;
pub mod phy;
pub mod config;
pub mod engine;
pub mod experiments;
pub mod trace;
