//! Abstracted full-duplex PHY.
//!
//! No waveforms are simulated. The PHY reduces to per-subcarrier
//! cancellation arithmetic, measured suppression presets, a SINR to BER
//! lookup, and the rules for when a full-duplex node may start a
//! transmission or a reception.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

/// Default tables, identical to `data/phy_tables.toml`.
pub const DEFAULT_TABLES_TOML: &str = include_str!("../data/phy_tables.toml");
pub const TABLES_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PhyError {
    #[error("cancellation-path estimate is zero on subcarrier {0}")]
    ZeroEstimate(usize),
    #[error("subcarrier arrays differ in length: {0}")]
    LengthMismatch(String),
    #[error("phy tables: {0}")]
    Tables(String),
    #[error("phy tables: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Per-subcarrier cancellation
// ---------------------------------------------------------------------------

/// Self-interference and cancellation-path channels with their estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierChannels {
    h: Vec<Complex64>,
    h_c: Vec<Complex64>,
    h_hat: Vec<Complex64>,
    h_hat_c: Vec<Complex64>,
}

impl SubcarrierChannels {
    pub const DEFAULT_SUBCARRIERS: usize = 64;

    pub fn new(
        h: Vec<Complex64>,
        h_c: Vec<Complex64>,
        h_hat: Vec<Complex64>,
        h_hat_c: Vec<Complex64>,
    ) -> Result<Self, PhyError> {
        let k = h.len();
        if h_c.len() != k || h_hat.len() != k || h_hat_c.len() != k {
            return Err(PhyError::LengthMismatch(format!(
                "h={} h_c={} h_hat={} h_hat_c={}",
                k,
                h_c.len(),
                h_hat.len(),
                h_hat_c.len()
            )));
        }
        if let Some(i) = h_hat_c.iter().position(|c| *c == Complex64::new(0.0, 0.0)) {
            return Err(PhyError::ZeroEstimate(i));
        }
        Ok(SubcarrierChannels {
            h,
            h_c,
            h_hat,
            h_hat_c,
        })
    }

    /// Channels with exact estimates.
    pub fn perfect(h: Vec<Complex64>, h_c: Vec<Complex64>) -> Result<Self, PhyError> {
        let (h_hat, h_hat_c) = (h.clone(), h_c.clone());
        Self::new(h, h_c, h_hat, h_hat_c)
    }

    pub fn subcarriers(&self) -> usize {
        self.h.len()
    }

    pub fn h(&self) -> &[Complex64] {
        &self.h
    }

    pub fn h_c(&self) -> &[Complex64] {
        &self.h_c
    }
}

/// Canceling signal `x_c[k] = -(h_hat[k] / h_hat_c[k]) * x[k]`.
pub fn canceling_signal(
    ch: &SubcarrierChannels,
    x: &[Complex64],
) -> Result<Vec<Complex64>, PhyError> {
    if x.len() != ch.subcarriers() {
        return Err(PhyError::LengthMismatch(format!(
            "x={} K={}",
            x.len(),
            ch.subcarriers()
        )));
    }
    Ok(ch
        .h_hat
        .iter()
        .zip(&ch.h_hat_c)
        .zip(x)
        .map(|((hh, hc), xk)| -(hh / hc) * xk)
        .collect())
}

/// Self-interference left after analog cancellation:
/// `z[k] = h[k] * x[k] + h_c[k] * x_c[k]`.
pub fn residual_self_interference(
    ch: &SubcarrierChannels,
    x: &[Complex64],
) -> Result<Vec<Complex64>, PhyError> {
    let xc = canceling_signal(ch, x)?;
    Ok(ch
        .h
        .iter()
        .zip(&ch.h_c)
        .zip(x.iter().zip(&xc))
        .map(|((h, hc), (xk, xck))| h * xk + hc * xck)
        .collect())
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
pub enum PresetName {
    A,
    B,
    C,
}

impl FromStr for PresetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(PresetName::A),
            "B" | "b" => Ok(PresetName::B),
            "C" | "c" => Ok(PresetName::C),
            other => Err(format!("unknown suppression preset {other:?} (expected A, B or C)")),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PresetName::A => "A",
            PresetName::B => "B",
            PresetName::C => "C",
        };
        f.write_str(s)
    }
}

/// One antenna configuration row.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct SuppressionPreset {
    pub name: PresetName,
    pub device_present: bool,
    pub interference_dbm: f64,
    pub after_analog_dbm: f64,
    pub total_suppression_db: f64,
}

/// One SINR anchor with its measured bit error rates.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct BerRow {
    pub sinr_db: f64,
    pub dirty: f64,
    pub clean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimation {
    Clean,
    Dirty,
}

impl Estimation {
    fn pick(self, row: &BerRow) -> f64 {
        match self {
            Estimation::Clean => row.clean,
            Estimation::Dirty => row.dirty,
        }
    }
}

impl fmt::Display for Estimation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimation::Clean => "clean",
            Estimation::Dirty => "dirty",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PhyTables {
    pub version: u32,
    pub tx_power_dbm: f64,
    #[serde(rename = "preset")]
    pub presets: Vec<SuppressionPreset>,
    #[serde(rename = "ber")]
    pub ber_rows: Vec<BerRow>,
}

impl Default for PhyTables {
    fn default() -> Self {
        PhyTables::parse(DEFAULT_TABLES_TOML).expect("shipped phy tables are valid")
    }
}

impl PhyTables {
    pub fn parse(text: &str) -> Result<Self, PhyError> {
        let tables: PhyTables =
            toml::from_str(text).map_err(|e| PhyError::Tables(e.to_string()))?;
        tables.check()?;
        Ok(tables)
    }

    pub fn load(path: &Path) -> Result<Self, PhyError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<(), PhyError> {
        if self.version != TABLES_VERSION {
            return Err(PhyError::Tables(format!(
                "unsupported version {} (expected {TABLES_VERSION})",
                self.version
            )));
        }
        for p in &self.presets {
            let derived = self.tx_power_dbm - p.after_analog_dbm;
            if (derived - p.total_suppression_db).abs() > 1e-9 {
                return Err(PhyError::Tables(format!(
                    "preset {}/{}: total suppression {} != tx power - after-analog {}",
                    p.name, p.device_present, p.total_suppression_db, derived
                )));
            }
        }
        if self.ber_rows.is_empty() {
            return Err(PhyError::Tables("no BER rows".into()));
        }
        for r in &self.ber_rows {
            for v in [r.dirty, r.clean] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(PhyError::Tables(format!(
                        "BER {v} at {} dB outside [0, 1]",
                        r.sinr_db
                    )));
                }
            }
        }
        if self
            .ber_rows
            .windows(2)
            .any(|w| w[0].sinr_db <= w[1].sinr_db)
        {
            return Err(PhyError::Tables(
                "BER rows must be sorted by strictly decreasing SINR".into(),
            ));
        }
        Ok(())
    }

    pub fn preset(&self, name: PresetName, device_present: bool) -> Option<SuppressionPreset> {
        self.presets
            .iter()
            .copied()
            .find(|p| p.name == name && p.device_present == device_present)
    }

    /// BER at `sinr_db` with the chosen channel estimation.
    ///
    /// Anchors are returned exactly. Between anchors log10(BER) is
    /// interpolated linearly. Outside the table the nearest anchor applies,
    /// so clean BER above the top anchor is exactly zero. A clean segment
    /// ending in a zero anchor cannot be interpolated in log space; there
    /// clean BER is the dirty BER scaled by a clean/dirty ratio that falls
    /// linearly to zero, which keeps clean <= dirty and monotonicity.
    pub fn sinr_to_ber(&self, sinr_db: f64, est: Estimation) -> f64 {
        let rows = &self.ber_rows;
        let top = &rows[0];
        let bottom = &rows[rows.len() - 1];
        if sinr_db >= top.sinr_db {
            return est.pick(top);
        }
        if sinr_db <= bottom.sinr_db {
            return est.pick(bottom);
        }
        let i = rows
            .iter()
            .position(|r| r.sinr_db <= sinr_db)
            .expect("bounded by the bottom anchor");
        let lo = &rows[i];
        if lo.sinr_db == sinr_db {
            return est.pick(lo);
        }
        let hi = &rows[i - 1];
        let t = (sinr_db - lo.sinr_db) / (hi.sinr_db - lo.sinr_db);
        let (v_lo, v_hi) = (est.pick(lo), est.pick(hi));
        if v_lo > 0.0 && v_hi > 0.0 {
            return log_lerp(v_lo, v_hi, t);
        }
        match est {
            Estimation::Clean if lo.dirty > 0.0 && hi.dirty > 0.0 => {
                let ratio = lerp(lo.clean / lo.dirty, hi.clean / hi.dirty, t);
                log_lerp(lo.dirty, hi.dirty, t) * ratio
            }
            _ => lerp(v_lo, v_hi, t),
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn log_lerp(a: f64, b: f64, t: f64) -> f64 {
    10f64.powf(lerp(a.log10(), b.log10(), t))
}

/// Row of the shipped preset table.
pub fn preset_lookup(name: PresetName, device_present: bool) -> SuppressionPreset {
    PhyTables::default()
        .preset(name, device_present)
        .expect("shipped table has every preset/device combination")
}

/// BER from the shipped tables.
pub fn sinr_to_ber(sinr_db: f64, est: Estimation) -> f64 {
    thread_local! {
        static TABLES: PhyTables = PhyTables::default();
    }
    TABLES.with(|t| t.sinr_to_ber(sinr_db, est))
}

/// Probability that every payload bit survives i.i.d. errors at `ber`.
/// Headers go at base rate and are treated as error-free.
pub fn frame_success_prob(ber: f64, payload_bytes: usize) -> f64 {
    if payload_bytes == 0 || ber <= 0.0 {
        return 1.0;
    }
    if ber >= 1.0 {
        return 0.0;
    }
    let bits = 8.0 * payload_bytes as f64;
    (bits * (-ber).ln_1p()).exp()
}

// ---------------------------------------------------------------------------
// Asynchronous full-duplex rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RadioState {
    Idle,
    Transmitting,
    Receiving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RadioAction {
    StartTx,
    StartRx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AsyncVerdict {
    Allowed(Estimation),
    Forbidden,
}

/// A node may begin receiving while it transmits (with dirty channel
/// estimation) but may never begin transmitting while it receives.
pub fn allowed_async(state: RadioState, action: RadioAction) -> AsyncVerdict {
    use RadioAction::*;
    use RadioState::*;
    match (state, action) {
        (Idle, _) => AsyncVerdict::Allowed(Estimation::Clean),
        (Transmitting, StartRx) => AsyncVerdict::Allowed(Estimation::Dirty),
        (Transmitting, StartTx) => AsyncVerdict::Forbidden,
        (Receiving, StartTx) => AsyncVerdict::Forbidden,
        // one reception at a time
        (Receiving, StartRx) => AsyncVerdict::Forbidden,
    }
}

// ---------------------------------------------------------------------------
// Link budget
// ---------------------------------------------------------------------------

/// How dirty estimation degrades a reception.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirtyModel {
    /// Look up the measured dirty-estimation column.
    Table,
    /// Look up the clean column at SINR reduced by `dirty_penalty_db`.
    Penalty,
}

/// Scenario-wide radio parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub tables: PhyTables,
    pub preset: PresetName,
    pub device_present: bool,
    pub noise_floor_dbm: f64,
    pub dirty_penalty_db: f64,
    pub dirty_model: DirtyModel,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            tables: PhyTables::default(),
            preset: PresetName::B,
            device_present: true,
            noise_floor_dbm: -95.0,
            dirty_penalty_db: 3.0,
            dirty_model: DirtyModel::Table,
        }
    }
}

fn dbm_sum(a: f64, b: f64) -> f64 {
    10.0 * (10f64.powf(a / 10.0) + 10f64.powf(b / 10.0)).log10()
}

impl LinkModel {
    pub fn suppression(&self) -> Result<SuppressionPreset, PhyError> {
        self.tables
            .preset(self.preset, self.device_present)
            .ok_or_else(|| {
                PhyError::Tables(format!(
                    "no preset {} with device_present={}",
                    self.preset, self.device_present
                ))
            })
    }

    /// Residual self-interference power at a transmitting receiver.
    pub fn residual_si_dbm(&self) -> f64 {
        let total = self
            .suppression()
            .map(|p| p.total_suppression_db)
            .unwrap_or(f64::INFINITY);
        self.tables.tx_power_dbm - total
    }

    /// SINR of a reception whose link SNR is `snr_db`; `self_interference`
    /// adds the residual of the receiver's own transmission to the noise.
    pub fn effective_sinr_db(&self, snr_db: f64, self_interference: bool) -> f64 {
        if !self_interference {
            return snr_db;
        }
        let signal = self.noise_floor_dbm + snr_db;
        signal - dbm_sum(self.noise_floor_dbm, self.residual_si_dbm())
    }

    pub fn ber(&self, sinr_db: f64, est: Estimation) -> f64 {
        match (est, self.dirty_model) {
            (Estimation::Dirty, DirtyModel::Penalty) => self
                .tables
                .sinr_to_ber(sinr_db - self.dirty_penalty_db, Estimation::Clean),
            _ => self.tables.sinr_to_ber(sinr_db, est),
        }
    }

    /// Probability a payload of `payload_bytes` decodes.
    pub fn decode_prob(
        &self,
        snr_db: f64,
        self_interference: bool,
        est: Estimation,
        payload_bytes: usize,
    ) -> f64 {
        let sinr = self.effective_sinr_db(snr_db, self_interference);
        frame_success_prob(self.ber(sinr, est), payload_bytes)
    }
}
