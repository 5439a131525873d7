//! Scenario files: sectioned `key = value` text.
//!
//! ```text
//! # comment
//! [run]
//! seed = 7
//! duration_us = 2000000
//! repeats = 1
//! mode = fdmac            # fdmac | hd
//! contention = full       # full | virtual_only (mobiles never initiate)
//!
//! [topology]
//! nodes = 3               # node 0 is the AP
//! edges = 0-1, 0-2        # or: clique
//!
//! [traffic]
//! 0 = saturated dest=1 bytes=1000
//! 1 = poisson rate=200 dest=ap bytes=500
//! 2 = list 1000:0:200 5000:0:200     # at_us:dest:bytes
//!
//! [mac]                   # every node
//! cw_min = 15
//! [mac.2]                 # node 2 only, applied after [mac]
//! cw_min = 1023
//!
//! [phy]
//! snr_db = 40
//! snr.0-1 = 25
//! preset = B
//! device = yes
//! ```
//!
//! `dest` is a node id, `ap`, or `uniform`. Unknown sections and keys are
//! errors. `difs_us` and `ack_timeout_us` are derived from the other timing
//! values unless given explicitly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use crate::engine::{Arrival, Dest, Scenario, Traffic};
use crate::frame::NodeId;
use crate::mac::{MacParams, SnoopPolicy};
use crate::medium::{Topology, AP};
use crate::phy::{DirtyModel, PhyTables};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column {}: {}",
            self.line, self.column, self.message
        )
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        column,
        message: message.into(),
    })
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    key_col: usize,
    val_col: usize,
}

impl Entry {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ConfigError> {
        err(self.line, self.val_col, message)
    }

    fn parse<T: std::str::FromStr>(&self) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.value
            .parse()
            .or_else(|e| self.fail(format!("bad value for `{}`: {e}", self.key)))
    }

    fn flag(&self) -> Result<bool, ConfigError> {
        match self.value.to_ascii_lowercase().as_str() {
            "yes" | "true" | "on" | "1" => Ok(true),
            "no" | "false" | "off" | "0" => Ok(false),
            _ => self.fail(format!("`{}` expects yes or no", self.key)),
        }
    }

    /// Whitespace-separated tokens with their 1-based columns.
    fn tokens(&self) -> Vec<(usize, &str)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, ch) in self.value.char_indices() {
            match (ch.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    out.push((self.val_col + s, &self.value[s..i]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((self.val_col + s, &self.value[s..]));
        }
        out
    }
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: Vec<Entry>,
}

fn split_sections(text: &str) -> Result<Vec<(String, Section)>, ConfigError> {
    let mut sections: Vec<(String, Section)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return err(line, indent + 1, "section header is missing `]`");
            };
            let name = name.trim().to_string();
            if let Some(prev) = seen.insert(name.clone(), line) {
                return err(
                    line,
                    indent + 1,
                    format!("section [{name}] repeats line {prev}"),
                );
            }
            sections.push((
                name,
                Section {
                    line,
                    entries: Vec::new(),
                },
            ));
            continue;
        }
        let Some(eq) = body.find('=') else {
            return err(line, indent + 1, format!("expected `key = value`, got `{trimmed}`"));
        };
        let key = body[..eq].trim();
        if key.is_empty() {
            return err(line, indent + 1, "missing key before `=`");
        }
        let after = &body[eq + 1..];
        let value = after.trim();
        let val_col = eq + 2 + (after.len() - after.trim_start().len());
        let Some((_, sec)) = sections.last_mut() else {
            return err(line, indent + 1, format!("key `{key}` appears before any section"));
        };
        if let Some(prev) = sec.entries.iter().find(|e| e.key == key) {
            return err(
                line,
                indent + 1,
                format!("key `{key}` repeats line {}", prev.line),
            );
        }
        sec.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
            key_col: indent + 1,
            val_col,
        });
    }
    Ok(sections)
}

fn unknown_key(e: &Entry, section: &str) -> ConfigError {
    ConfigError {
        line: e.line,
        column: e.key_col,
        message: format!("unknown key `{}` in [{section}]", e.key),
    }
}

fn parse_node(e: &Entry, s: &str, col: usize, n: usize) -> Result<NodeId, ConfigError> {
    let id: NodeId = match s {
        "ap" | "AP" => AP,
        _ => s
            .parse()
            .or_else(|_| err(e.line, col, format!("`{s}` is not a node id")))?,
    };
    if usize::from(id) >= n {
        return err(e.line, col, format!("node {id} does not exist (nodes = {n})"));
    }
    Ok(id)
}

fn parse_pair(e: &Entry, s: &str, col: usize, n: usize) -> Result<(NodeId, NodeId), ConfigError> {
    let Some((a, b)) = s.split_once('-') else {
        return err(e.line, col, format!("expected `a-b`, got `{s}`"));
    };
    Ok((
        parse_node(e, a.trim(), col, n)?,
        parse_node(e, b.trim(), col, n)?,
    ))
}

#[derive(Default)]
struct MacOverrides {
    entries: Vec<Entry>,
}

fn apply_mac(p: &mut MacParams, over: &MacOverrides, section: &str) -> Result<(), ConfigError> {
    let mut difs_set = false;
    let mut timeout_set = false;
    let mut beta = None;
    let mut policy = None;
    for e in &over.entries {
        match e.key.as_str() {
            "slot_us" => p.dcf.slot_us = e.parse()?,
            "sifs_us" => p.dcf.sifs_us = e.parse()?,
            "difs_us" => {
                p.dcf.difs_us = e.parse()?;
                difs_set = true;
            }
            "cw_min" => p.dcf.cw_min = e.parse()?,
            "cw_max_limit" => p.dcf.cw_max_limit = e.parse()?,
            "ack_timeout_us" => {
                p.dcf.ack_timeout_us = e.parse()?;
                timeout_set = true;
            }
            "retry_limit" => p.dcf.retry_limit = e.parse()?,
            "bufdepth" => p.bufdepth = e.parse()?,
            "p_pick" => p.p_pick = e.parse()?,
            "queue_limit" => p.queue_limit = e.parse()?,
            "beta" => beta = Some((e.parse::<f64>()?, e)),
            "snoop" => {
                policy = Some(match e.value.as_str() {
                    "off" => SnoopPolicy::Off,
                    "always" => SnoopPolicy::Always,
                    "beta" => SnoopPolicy::Beta(16.0),
                    _ => return e.fail("`snoop` expects off, always or beta"),
                })
            }
            _ => return Err(unknown_key(e, section)),
        }
    }
    if !difs_set {
        p.dcf.difs_us = p.dcf.sifs_us + 2 * p.dcf.slot_us;
    }
    if !timeout_set {
        p.dcf.ack_timeout_us = p.dcf.sifs_us + p.ack_long_us() + p.dcf.slot_us;
    }
    if let Some(pol) = policy {
        p.snoop = pol;
    }
    if let Some((b, e)) = beta {
        if b.is_nan() || b <= 0.0 {
            return e.fail("`beta` must be positive");
        }
        match p.snoop {
            SnoopPolicy::Beta(_) => p.snoop = SnoopPolicy::Beta(b),
            _ => return e.fail("`beta` only applies with snoop = beta"),
        }
    }
    Ok(())
}

/// Parse a scenario. Relative `tables` paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: Option<&Path>) -> Result<Scenario, ConfigError> {
    let sections = split_sections(text)?;
    let find = |name: &str| sections.iter().find(|(n, _)| n == name).map(|(_, s)| s);
    for (name, sec) in &sections {
        let known = matches!(name.as_str(), "run" | "topology" | "traffic" | "mac" | "phy")
            || name.strip_prefix("mac.").is_some();
        if !known {
            return err(sec.line, 1, format!("unknown section [{name}]"));
        }
    }

    // topology
    let Some(topo_sec) = find("topology") else {
        return err(1, 1, "missing [topology] section");
    };
    let mut nodes = None;
    let mut edges_entry = None;
    for e in &topo_sec.entries {
        match e.key.as_str() {
            "nodes" => nodes = Some((e.parse::<usize>()?, e)),
            "edges" => edges_entry = Some(e),
            _ => return Err(unknown_key(e, "topology")),
        }
    }
    let Some((n, n_entry)) = nodes else {
        return err(topo_sec.line, 1, "[topology] needs `nodes`");
    };
    if n < 2 || n > usize::from(NodeId::MAX) {
        return n_entry.fail("`nodes` must be at least 2");
    }
    let topology = match edges_entry {
        None => return err(topo_sec.line, 1, "[topology] needs `edges`"),
        Some(e) if e.value == "clique" => Topology::clique(n).or_else(|x| e.fail(x.to_string()))?,
        Some(e) => {
            let mut edges = Vec::new();
            let mut offset = 0;
            for part in e.value.split(',') {
                let col = e.val_col + offset + (part.len() - part.trim_start().len());
                offset += part.len() + 1;
                if part.trim().is_empty() {
                    continue;
                }
                edges.push(parse_pair(e, part.trim(), col, n)?);
            }
            Topology::new(n, &edges).or_else(|x| e.fail(x.to_string()))?
        }
    };
    let mut scn = Scenario::new(topology);

    // run
    let mut hd = false;
    let mut virtual_only = false;
    if let Some(sec) = find("run") {
        for e in &sec.entries {
            match e.key.as_str() {
                "seed" => scn.seed = e.parse()?,
                "duration_us" => {
                    scn.duration_us = e.parse()?;
                    if scn.duration_us == 0 {
                        return e.fail("`duration_us` must be positive");
                    }
                }
                "repeats" => {
                    scn.repeats = e.parse()?;
                    if scn.repeats == 0 {
                        return e.fail("`repeats` must be positive");
                    }
                }
                "mode" => {
                    hd = match e.value.as_str() {
                        "fdmac" => false,
                        "hd" => true,
                        _ => return e.fail("`mode` expects fdmac or hd"),
                    }
                }
                "contention" => {
                    virtual_only = match e.value.as_str() {
                        "full" => false,
                        "virtual_only" => true,
                        _ => return e.fail("`contention` expects full or virtual_only"),
                    }
                }
                _ => return Err(unknown_key(e, "run")),
            }
        }
    }

    // phy (before mac: the timing feeds derived MAC defaults)
    if let Some(sec) = find("phy") {
        let mut timing = scn.mac[0].timing;
        for e in &sec.entries {
            if let Some(pair) = e.key.strip_prefix("snr.") {
                let (a, b) = parse_pair(e, pair, e.key_col + 4, n)?;
                if !scn.topology.in_range(a, b) {
                    return err(e.line, e.key_col, format!("no edge {a}-{b} in the topology"));
                }
                scn.snr_overrides.insert((a.min(b), a.max(b)), e.parse()?);
                continue;
            }
            match e.key.as_str() {
                "snr_db" => scn.snr_db = e.parse()?,
                "preset" => scn.link.preset = e.parse()?,
                "device" => scn.link.device_present = e.flag()?,
                "noise_floor_dbm" => scn.link.noise_floor_dbm = e.parse()?,
                "dirty_penalty_db" => scn.link.dirty_penalty_db = e.parse()?,
                "dirty_model" => {
                    scn.link.dirty_model = match e.value.as_str() {
                        "table" => DirtyModel::Table,
                        "penalty" => DirtyModel::Penalty,
                        _ => return e.fail("`dirty_model` expects table or penalty"),
                    }
                }
                "tables" => {
                    let path = match base_dir {
                        Some(d) => d.join(&e.value),
                        None => e.value.clone().into(),
                    };
                    scn.link.tables = PhyTables::load(&path).or_else(|x| e.fail(x.to_string()))?;
                }
                "preamble_us" => timing.preamble_us = e.parse()?,
                "base_rate_bps" => timing.base_rate_bps = e.parse()?,
                "data_rate_bps" => timing.data_rate_bps = e.parse()?,
                _ => return Err(unknown_key(e, "phy")),
            }
        }
        if timing.base_rate_bps == 0 || timing.data_rate_bps == 0 {
            return err(sec.line, 1, "rates must be positive");
        }
        for m in &mut scn.mac {
            m.timing = timing;
        }
        scn.link
            .suppression()
            .or_else(|x| err(sec.line, 1, x.to_string()))?;
    }

    // mac
    let common = MacOverrides {
        entries: find("mac").map(|s| s.entries.clone()).unwrap_or_default(),
    };
    let mut per_node: BTreeMap<NodeId, (&Section, MacOverrides)> = BTreeMap::new();
    for (name, sec) in &sections {
        if let Some(id) = name.strip_prefix("mac.") {
            let fake = Entry {
                key: name.clone(),
                value: id.to_string(),
                line: sec.line,
                key_col: 1,
                val_col: 6,
            };
            let node = parse_node(&fake, id, 6, n)?;
            per_node.insert(
                node,
                (
                    sec,
                    MacOverrides {
                        entries: sec.entries.clone(),
                    },
                ),
            );
        }
    }
    for (i, m) in scn.mac.iter_mut().enumerate() {
        let id = i as NodeId;
        apply_mac(m, &common, "mac")?;
        let line = if let Some((sec, over)) = per_node.get(&id) {
            apply_mac(m, over, &format!("mac.{id}"))?;
            sec.line
        } else {
            find("mac").map_or(1, |s| s.line)
        };
        m.fd_enabled = !hd;
        m.contend = !virtual_only || id == AP;
        m.validate()
            .or_else(|x| err(line, 1, format!("node {id}: {x}")))?;
    }

    // traffic
    if let Some(sec) = find("traffic") {
        let mut seen = vec![false; n];
        for e in &sec.entries {
            let node = parse_node(e, &e.key, e.key_col, n)?;
            if std::mem::replace(&mut seen[usize::from(node)], true) {
                return err(e.line, e.key_col, format!("traffic for node {node} given twice"));
            }
            scn.traffic[usize::from(node)] = parse_traffic(e, node, n)?;
        }
    }
    scn.validate().or_else(|x| err(1, 1, x))?;
    Ok(scn)
}

fn parse_traffic(e: &Entry, node: NodeId, n: usize) -> Result<Traffic, ConfigError> {
    let toks = e.tokens();
    let Some(&(kcol, kind)) = toks.first() else {
        return e.fail("empty traffic spec");
    };
    let default_dest = if node == AP { Dest::Uniform } else { Dest::To(AP) };
    match kind {
        "none" => {
            if let Some(&(c, t)) = toks.get(1) {
                return err(e.line, c, format!("unexpected `{t}` after none"));
            }
            Ok(Traffic::None)
        }
        "list" => {
            let mut arrivals = Vec::new();
            for &(c, t) in &toks[1..] {
                let parts: Vec<&str> = t.split(':').collect();
                let [at, dest, bytes] = parts[..] else {
                    return err(e.line, c, format!("expected at_us:dest:bytes, got `{t}`"));
                };
                let at_us: u64 = at
                    .parse()
                    .or_else(|_| err(e.line, c, format!("bad time in `{t}`")))?;
                let bytes: usize = bytes
                    .parse()
                    .or_else(|_| err(e.line, c, format!("bad size in `{t}`")))?;
                arrivals.push(Arrival {
                    at_us,
                    dest: parse_node(e, dest, c, n)?,
                    bytes,
                });
            }
            arrivals.sort_by_key(|a| a.at_us);
            Ok(Traffic::List(arrivals))
        }
        "saturated" | "poisson" => {
            let mut dest = default_dest;
            let mut bytes = 1000usize;
            let mut rate = None;
            for &(c, t) in &toks[1..] {
                let Some((k, v)) = t.split_once('=') else {
                    return err(e.line, c, format!("expected key=value, got `{t}`"));
                };
                let vcol = c + k.len() + 1;
                match k {
                    "dest" => {
                        dest = if v == "uniform" {
                            Dest::Uniform
                        } else {
                            Dest::To(parse_node(e, v, vcol, n)?)
                        }
                    }
                    "bytes" => {
                        bytes = v
                            .parse()
                            .or_else(|_| err(e.line, vcol, format!("bad size `{v}`")))?
                    }
                    "rate" if kind == "poisson" => {
                        let r: f64 = v
                            .parse()
                            .or_else(|_| err(e.line, vcol, format!("bad rate `{v}`")))?;
                        if !(r > 0.0 && r.is_finite()) {
                            return err(e.line, vcol, "rate must be positive");
                        }
                        rate = Some(r);
                    }
                    _ => {
                        return err(e.line, c, format!("unknown traffic key `{k}`"));
                    }
                }
            }
            if bytes == 0 || bytes > usize::from(u16::MAX) {
                return e.fail(format!("packet size {bytes} out of range"));
            }
            if let Dest::To(d) = dest {
                if d == node {
                    return e.fail(format!("node {node} cannot send to itself"));
                }
            }
            if kind == "saturated" {
                Ok(Traffic::Saturated { dest, bytes })
            } else {
                let Some(rate_pps) = rate else {
                    return err(e.line, kcol, "poisson traffic needs rate=");
                };
                Ok(Traffic::Poisson {
                    rate_pps,
                    dest,
                    bytes,
                })
            }
        }
        other => err(
            e.line,
            kcol,
            format!("unknown traffic kind `{other}` (saturated, poisson, list, none)"),
        ),
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).or_else(|e| err(0, 0, format!("{}: {e}", path.display())))?;
    parse_scenario(&text, path.parent())
}
