//! Event trace rows and a post-hoc auditor for the asynchronous FD rules.
//!
//! File format: the header line `time_us,node,event,detail`, then one row
//! per event. `detail` is a space-separated list of `key=value` pairs,
//! except for `state` rows whose detail is `from->to:cause`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use crate::frame::NodeId;
use crate::medium::Topology;

pub const TRACE_HEADER: &str = "time_us,node,event,detail";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRow {
    pub time_us: u64,
    pub node: NodeId,
    pub event: &'static str,
    pub detail: String,
}

pub fn write_trace<W: Write>(mut w: W, rows: &[TraceRow]) -> io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.time_us, r.node, r.event, r.detail)?;
    }
    Ok(())
}

pub fn trace_to_string(rows: &[TraceRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 48);
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.time_us, r.node, r.event, r.detail);
    }
    s
}

/// A row read back from a trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRow {
    pub time_us: u64,
    pub node: NodeId,
    pub event: String,
    pub detail: String,
}

pub fn parse_trace(text: &str) -> Result<Vec<ParsedRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(TRACE_HEADER) => {}
        other => return Err(format!("bad trace header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let mut it = line.splitn(4, ',');
            let mut field = |name: &str| {
                it.next()
                    .ok_or_else(|| format!("row {}: missing {name}", i + 2))
            };
            let time_us = field("time_us")?
                .parse()
                .map_err(|e| format!("row {}: {e}", i + 2))?;
            let node = field("node")?
                .parse()
                .map_err(|e| format!("row {}: {e}", i + 2))?;
            let event = field("event")?.to_string();
            let detail = field("detail")?.to_string();
            Ok(ParsedRow {
                time_us,
                node,
                event,
                detail,
            })
        })
        .collect()
}

fn kv<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail
        .split(' ')
        .find_map(|p| p.strip_prefix(key)?.strip_prefix('='))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub transmissions: usize,
    /// A node began transmitting while locked onto a frame addressed to it.
    pub tx_while_receiving: usize,
    /// A frame began arriving at its destination while the destination was
    /// already transmitting.
    pub rx_while_transmitting: usize,
}

/// Rebuild every on-air interval from the `tx_start` rows alone and check
/// the rule that a receiving node never starts a transmission.
pub fn audit(rows: &[ParsedRow], topo: &Topology) -> Result<AuditReport, String> {
    struct Tx {
        src: NodeId,
        dst: NodeId,
        start: u64,
        end: u64,
    }
    let mut txs = Vec::new();
    for r in rows.iter().filter(|r| r.event == "tx_start") {
        let num = |k: &str| -> Result<u64, String> {
            kv(&r.detail, k)
                .ok_or_else(|| format!("tx_start at {} lacks {k}", r.time_us))?
                .parse::<u64>()
                .map_err(|e| e.to_string())
        };
        txs.push(Tx {
            src: r.node,
            dst: num("dst")? as NodeId,
            start: r.time_us,
            end: num("end")?,
        });
    }
    // per-node lists in start order; an overlap search only needs starts
    // within the longest airtime of the list
    txs.sort_by_key(|t| t.start);
    let mut by_src: HashMap<NodeId, Vec<usize>> = HashMap::new();
    let mut by_dst: HashMap<NodeId, Vec<usize>> = HashMap::new();
    for (i, t) in txs.iter().enumerate() {
        by_src.entry(t.src).or_default().push(i);
        by_dst.entry(t.dst).or_default().push(i);
    }
    let longest = txs.iter().map(|t| t.end.saturating_sub(t.start)).max().unwrap_or(0);
    let overlapping = |list: &[usize], t: &Tx, pred: &dyn Fn(&Tx) -> bool| -> bool {
        let hi = list.partition_point(|&j| txs[j].start < t.start);
        list[..hi]
            .iter()
            .rev()
            .take_while(|&&j| txs[j].start + longest >= t.start)
            .any(|&j| t.start < txs[j].end && pred(&txs[j]))
    };
    let mut rep = AuditReport {
        transmissions: txs.len(),
        ..AuditReport::default()
    };
    for t in &txs {
        let receiving = by_dst
            .get(&t.src)
            .is_some_and(|v| overlapping(v, t, &|o| topo.in_range(o.src, t.src)));
        rep.tx_while_receiving += usize::from(receiving);
        if topo.in_range(t.src, t.dst) {
            let transmitting = by_src.get(&t.dst).is_some_and(|v| overlapping(v, t, &|_| true));
            rep.rx_while_transmitting += usize::from(transmitting);
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: u64, node: NodeId, dst: NodeId, end: u64) -> ParsedRow {
        ParsedRow {
            time_us: t,
            node,
            event: "tx_start".into(),
            detail: format!("id=0 kind=DATA dst={dst} end={end}"),
        }
    }

    #[test]
    fn flags_tx_while_receiving() {
        let topo = Topology::clique(3).unwrap();
        let rows = vec![row(0, 1, 0, 100), row(50, 0, 2, 80)];
        let rep = audit(&rows, &topo).unwrap();
        assert_eq!(rep.tx_while_receiving, 1);
        assert_eq!(rep.rx_while_transmitting, 0);
    }

    #[test]
    fn counts_dirty_reception() {
        let topo = Topology::new(3, &[(0, 1), (0, 2)]).unwrap();
        let rows = vec![row(0, 0, 1, 100), row(30, 2, 0, 90)];
        let rep = audit(&rows, &topo).unwrap();
        assert_eq!(rep.tx_while_receiving, 0);
        assert_eq!(rep.rx_while_transmitting, 1);
    }

    #[test]
    fn simultaneous_start_is_not_receiving() {
        let topo = Topology::clique(2).unwrap();
        let rows = vec![row(0, 0, 1, 100), row(0, 1, 0, 100)];
        assert_eq!(audit(&rows, &topo).unwrap().tx_while_receiving, 0);
    }

    #[test]
    fn round_trips_text() {
        let rows = vec![TraceRow {
            time_us: 5,
            node: 1,
            event: "state",
            detail: "Idle->Contend:enqueue".into(),
        }];
        let parsed = parse_trace(&trace_to_string(&rows)).unwrap();
        assert_eq!(parsed[0].detail, "Idle->Contend:enqueue");
        assert_eq!(parsed[0].node, 1);
    }

    /// Pairwise scan over every transmission.
    fn brute(rows: &[ParsedRow], topo: &Topology) -> (usize, usize) {
        let txs: Vec<(NodeId, NodeId, u64, u64)> = rows
            .iter()
            .map(|r| {
                let n = |k| kv(&r.detail, k).unwrap().parse::<u64>().unwrap();
                (r.node, n("dst") as NodeId, r.time_us, n("end"))
            })
            .collect();
        let mut twr = 0;
        let mut rwt = 0;
        for &(src, dst, start, _) in &txs {
            let over = |&&(_, _, s, e): &&(NodeId, NodeId, u64, u64)| s < start && start < e;
            twr += usize::from(
                txs.iter()
                    .filter(over)
                    .any(|o| o.1 == src && topo.in_range(o.0, src)),
            );
            if topo.in_range(src, dst) {
                rwt += usize::from(txs.iter().filter(over).any(|o| o.0 == dst));
            }
        }
        (twr, rwt)
    }

    proptest::proptest! {
        #[test]
        fn windowed_audit_matches_pairwise_scan(
            raw in proptest::collection::vec((0u16..4, 1u16..4, 0u64..2000, 1u64..400), 0..60),
            edges in proptest::collection::vec(proptest::bool::ANY, 3),
        ) {
            let mut list = vec![(0, 1), (0, 2), (0, 3)];
            for (e, pair) in edges.iter().zip([(1, 2), (1, 3), (2, 3)]) {
                if *e {
                    list.push(pair);
                }
            }
            let topo = Topology::new(4, &list).unwrap();
            let mut rows: Vec<ParsedRow> = raw
                .iter()
                .filter(|(src, off, _, _)| (src + off) % 4 != *src)
                .map(|&(src, off, t, len)| row(t, src, (src + off) % 4, t + len))
                .collect();
            rows.sort_by_key(|r| r.time_us);
            let rep = audit(&rows, &topo).unwrap();
            proptest::prop_assert_eq!(
                (rep.tx_while_receiving, rep.rx_while_transmitting),
                brute(&rows, &topo)
            );
        }
    }
}
