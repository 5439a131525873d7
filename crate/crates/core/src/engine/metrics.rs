use std::io;

use serde::Serialize;

use crate::frame::{DupMode, NodeId};
use crate::mac::MacParams;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowMetrics {
    pub src: NodeId,
    pub dst: NodeId,
    pub generated: u64,
    pub delivered_packets: u64,
    pub delivered_bytes: u64,
    pub dropped: u64,
    /// Still buffered when the run ended.
    pub queued: u64,
}

/// Results of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub duration_us: u64,
    pub flows: Vec<FlowMetrics>,
    pub goodput_bps: f64,
    /// Delivered packets relative to a saturated half-duplex single link.
    pub normalized_throughput: f64,
    /// Mean times a served AP packet was bypassed while at the head.
    pub mean_head_delay: f64,
    pub fd_airtime_fraction: f64,
    /// Frames lost at their destination to an overlapping in-range frame.
    pub collisions: u64,
    pub fd_rounds: u64,
    pub purges: u64,
    pub injection_opportunities: u64,
    pub injections: u64,
    /// Injected frames that collided at the AP.
    pub injection_collisions: u64,
    /// Receptions that started while the receiver was transmitting.
    pub dirty_receptions: u64,
}

impl MetricsReport {
    pub fn delivered_packets(&self) -> u64 {
        self.flows.iter().map(|f| f.delivered_packets).sum()
    }

    pub fn delivered_bytes(&self) -> u64 {
        self.flows.iter().map(|f| f.delivered_bytes).sum()
    }

    pub fn flow(&self, src: NodeId, dst: NodeId) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.src == src && f.dst == dst)
    }
}

/// Cycle time of one saturated half-duplex exchange with mean backoff.
pub fn hd_cycle_us(p: &MacParams, payload_bytes: usize) -> f64 {
    let d = &p.dcf;
    d.difs_us as f64
        + f64::from(d.cw_min) / 2.0 * d.slot_us as f64
        + p.timing.data_airtime_us(DupMode::Hd, payload_bytes) as f64
        + d.sifs_us as f64
        + p.timing.ack_airtime_us(false) as f64
}

/// Delivered packets per second over the rate of a lone saturated
/// half-duplex link carrying packets of the mean delivered size.
pub fn normalized_throughput(
    delivered_packets: u64,
    delivered_bytes: u64,
    duration_us: u64,
    p: &MacParams,
) -> f64 {
    if delivered_packets == 0 || duration_us == 0 {
        return 0.0;
    }
    let mean = (delivered_bytes as f64 / delivered_packets as f64).round() as usize;
    delivered_packets as f64 * hd_cycle_us(p, mean.max(1)) / duration_us as f64
}

/// CSV columns, in order.
pub const CSV_COLUMNS: &[&str] = &[
    "seed",
    "duration_us",
    "generated",
    "delivered_packets",
    "delivered_bytes",
    "dropped",
    "queued",
    "goodput_bps",
    "normalized_throughput",
    "mean_head_delay",
    "fd_airtime_fraction",
    "collisions",
    "fd_rounds",
    "purges",
    "injection_opportunities",
    "injections",
    "injection_collisions",
    "dirty_receptions",
    "flows",
];

#[derive(Serialize)]
struct CsvRow<'a> {
    seed: u64,
    duration_us: u64,
    generated: u64,
    delivered_packets: u64,
    delivered_bytes: u64,
    dropped: u64,
    queued: u64,
    goodput_bps: &'a str,
    normalized_throughput: &'a str,
    mean_head_delay: &'a str,
    fd_airtime_fraction: &'a str,
    collisions: u64,
    fd_rounds: u64,
    purges: u64,
    injection_opportunities: u64,
    injections: u64,
    injection_collisions: u64,
    dirty_receptions: u64,
    /// `src>dst:generated:delivered:bytes:dropped:queued` joined by `;`.
    flows: &'a str,
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

/// One CSV row per report, with a header. Floats are printed with six
/// decimals so output is byte-stable.
pub fn write_csv<W: io::Write>(w: W, reports: &[MetricsReport]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if reports.is_empty() {
        wr.write_record(CSV_COLUMNS)?;
    }
    for r in reports {
        let flows = r
            .flows
            .iter()
            .map(|f| {
                format!(
                    "{}>{}:{}:{}:{}:{}:{}",
                    f.src,
                    f.dst,
                    f.generated,
                    f.delivered_packets,
                    f.delivered_bytes,
                    f.dropped,
                    f.queued
                )
            })
            .collect::<Vec<_>>()
            .join(";");
        let (g, n, d, a) = (
            fixed(r.goodput_bps),
            fixed(r.normalized_throughput),
            fixed(r.mean_head_delay),
            fixed(r.fd_airtime_fraction),
        );
        wr.serialize(CsvRow {
            seed: r.seed,
            duration_us: r.duration_us,
            generated: r.flows.iter().map(|f| f.generated).sum(),
            delivered_packets: r.delivered_packets(),
            delivered_bytes: r.delivered_bytes(),
            dropped: r.flows.iter().map(|f| f.dropped).sum(),
            queued: r.flows.iter().map(|f| f.queued).sum(),
            goodput_bps: &g,
            normalized_throughput: &n,
            mean_head_delay: &d,
            fd_airtime_fraction: &a,
            collisions: r.collisions,
            fd_rounds: r.fd_rounds,
            purges: r.purges,
            injection_opportunities: r.injection_opportunities,
            injections: r.injections,
            injection_collisions: r.injection_collisions,
            dirty_receptions: r.dirty_receptions,
            flows: &flows,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn csv_string(reports: &[MetricsReport]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, reports).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}
