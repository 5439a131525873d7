//! The four canned experiments and their pass/fail bands.
//!
//! | experiment           | seed | setup                                                        |
//! |----------------------|------|--------------------------------------------------------------|
//! | `fd-vs-hd`           | 1    | two nodes, saturated both ways, 10 s, payloads 324/800/1500 B |
//! | `bufdepth-sweep`     | 11   | AP + 5 mobiles in a clique, 5 s, bufdepth 1..=4 x p_pick 0..=1 |
//! | `hidden-injection`   | 1    | AP-M1, AP-M2 (then with M1-M2), 2 s                           |
//! | `snooper-collisions` | 1    | AP-M1, AP-M2, AP-M3, M2-M3, snoopers at cw 1023, 10 s         |
//!
//! Runs within an experiment execute in parallel; rows are emitted in a
//! fixed order regardless of scheduling.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::engine::{run_traced, Dest, MetricsReport, RunError, Scenario, Traffic};
use crate::mac::SnoopPolicy;
use crate::medium::{Topology, AP};
use crate::trace::{audit, parse_trace, trace_to_string, AuditReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    FdVsHd,
    BufdepthSweep,
    HiddenInjection,
    SnooperCollisions,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::FdVsHd,
        Experiment::BufdepthSweep,
        Experiment::HiddenInjection,
        Experiment::SnooperCollisions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FdVsHd => "fd-vs-hd",
            Experiment::BufdepthSweep => "bufdepth-sweep",
            Experiment::HiddenInjection => "hidden-injection",
            Experiment::SnooperCollisions => "snooper-collisions",
        }
    }

    pub fn seed(self) -> u64 {
        match self {
            Experiment::BufdepthSweep => 11,
            _ => 1,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
                format!("unknown experiment `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub experiment: Experiment,
    /// Per-run results.
    pub csv: String,
    pub checks: Vec<Check>,
    /// Trace audits, one per run, when requested.
    pub audits: Vec<(String, AuditReport)>,
}

impl ExperimentOutput {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Run {
    label: String,
    report: MetricsReport,
    audit: Option<AuditReport>,
    /// Frames addressed to mobile 1 that were lost to collision.
    collided_at_m1: usize,
}

fn execute(label: String, scn: &Scenario, want_audit: bool, need_trace: bool) -> Result<Run, RunError> {
    let out = run_traced(scn, want_audit || need_trace)?;
    let (audit, collided_at_m1) = match out.trace {
        Some(rows) => {
            let collided = rows
                .iter()
                .filter(|r| r.node == 1 && r.event == "rx_end" && r.detail.ends_with("result=collided"))
                .count();
            let audit = if want_audit {
                let parsed = parse_trace(&trace_to_string(&rows)).map_err(RunError::Invariant)?;
                Some(audit(&parsed, &scn.topology).map_err(RunError::Invariant)?)
            } else {
                None
            };
            (audit, collided)
        }
        None => (None, 0),
    };
    Ok(Run {
        label,
        report: out.report,
        audit,
        collided_at_m1,
    })
}

fn run_all(jobs: Vec<(String, Scenario)>, audit: bool, trace: bool) -> Result<Vec<Run>, RunError> {
    jobs.into_par_iter()
        .map(|(label, scn)| execute(label, &scn, audit, trace))
        .collect()
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

fn audits(runs: &[Run]) -> Vec<(String, AuditReport)> {
    runs.iter()
        .filter_map(|r| r.audit.map(|a| (r.label.clone(), a)))
        .collect()
}

/// Run one experiment; `audit` also audits every run's trace.
pub fn run_experiment(e: Experiment, audit: bool) -> Result<ExperimentOutput, RunError> {
    match e {
        Experiment::FdVsHd => fd_vs_hd(audit),
        Experiment::BufdepthSweep => bufdepth_sweep(audit),
        Experiment::HiddenInjection => hidden_injection(audit),
        Experiment::SnooperCollisions => snooper_collisions(audit),
    }
}

pub const FD_VS_HD_PAYLOADS: [usize; 3] = [324, 800, 1500];

pub fn fd_vs_hd_scenario(bytes: usize, fd: bool) -> Scenario {
    let mut s = Scenario::new(Topology::clique(2).expect("two nodes"));
    s.traffic[0] = Traffic::Saturated {
        dest: Dest::To(1),
        bytes,
    };
    s.traffic[1] = Traffic::Saturated {
        dest: Dest::To(0),
        bytes,
    };
    s.seed = Experiment::FdVsHd.seed();
    s.duration_us = 10_000_000;
    s.with_mac(|_, m| m.fd_enabled = fd)
}

fn fd_vs_hd(audit: bool) -> Result<ExperimentOutput, RunError> {
    let mut jobs = Vec::new();
    for bytes in FD_VS_HD_PAYLOADS {
        for fd in [true, false] {
            let mode = if fd { "fd" } else { "hd" };
            jobs.push((format!("{bytes}B-{mode}"), fd_vs_hd_scenario(bytes, fd)));
        }
    }
    let runs = run_all(jobs, audit, false)?;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for (i, bytes) in FD_VS_HD_PAYLOADS.into_iter().enumerate() {
        let (fd, hd) = (&runs[2 * i].report, &runs[2 * i + 1].report);
        let ratio = fd.goodput_bps / hd.goodput_bps;
        ratios.push(ratio);
        rows.push(vec![
            bytes.to_string(),
            fd.delivered_packets().to_string(),
            hd.delivered_packets().to_string(),
            format!("{:.6}", fd.goodput_bps),
            format!("{:.6}", hd.goodput_bps),
            format!("{ratio:.6}"),
            format!("{:.2}", (ratio - 1.0) * 100.0),
        ]);
    }
    let mut checks: Vec<Check> = FD_VS_HD_PAYLOADS
        .iter()
        .zip(&ratios)
        .map(|(b, r)| {
            check(
                format!("ratio-in-band-{b}B"),
                (1.5..=2.0).contains(r),
                format!("ratio={r:.4} gain={:.1}% band=[1.5,2.0]", (r - 1.0) * 100.0),
            )
        })
        .collect();
    checks.push(check(
        "ratio-increases-with-payload",
        ratios.windows(2).all(|w| w[1] > w[0]),
        format!("ratios={ratios:.4?}"),
    ));
    Ok(ExperimentOutput {
        experiment: Experiment::FdVsHd,
        csv: to_csv(
            &[
                "payload_bytes",
                "fd_packets",
                "hd_packets",
                "fd_goodput_bps",
                "hd_goodput_bps",
                "ratio",
                "gain_percent",
            ],
            &rows,
        ),
        checks,
        audits: audits(&runs),
    })
}

pub const BUFDEPTHS: [usize; 4] = [1, 2, 3, 4];

pub fn p_pick_grid() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// AP plus five mobiles in a clique; only the AP contends.
pub fn bufdepth_scenario(bufdepth: usize, p_pick: f64) -> Scenario {
    let n = 6;
    let mut s = Scenario::new(Topology::clique(n).expect("six nodes"));
    s.traffic[0] = Traffic::Saturated {
        dest: Dest::Uniform,
        bytes: 1000,
    };
    for t in &mut s.traffic[1..] {
        *t = Traffic::Saturated {
            dest: Dest::To(AP),
            bytes: 1000,
        };
    }
    s.seed = Experiment::BufdepthSweep.seed();
    s.duration_us = 5_000_000;
    s.with_mac(|id, m| {
        m.contend = id == AP;
        m.bufdepth = bufdepth;
        m.p_pick = p_pick;
    })
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

fn bufdepth_sweep(audit: bool) -> Result<ExperimentOutput, RunError> {
    let grid = p_pick_grid();
    let mut jobs = Vec::new();
    for b in BUFDEPTHS {
        for &p in &grid {
            jobs.push((format!("b{b}-p{p:.1}"), bufdepth_scenario(b, p)));
        }
    }
    let runs = run_all(jobs, audit, false)?;
    let at = |b: usize, i: usize| &runs[(b - 1) * grid.len() + i].report;
    let mut rows = Vec::new();
    for b in BUFDEPTHS {
        for (i, p) in grid.iter().enumerate() {
            let r = at(b, i);
            rows.push(vec![
                b.to_string(),
                format!("{p:.1}"),
                format!("{:.6}", r.normalized_throughput),
                format!("{:.6}", r.mean_head_delay),
            ]);
        }
    }
    let mut checks = Vec::new();
    for b in [2, 3, 4] {
        let thr: Vec<f64> = (0..grid.len()).map(|i| at(b, i).normalized_throughput).collect();
        let delay: Vec<f64> = (0..grid.len()).map(|i| at(b, i).mean_head_delay).collect();
        let r = pearson(&thr, &delay);
        checks.push(check(
            format!("linear-b{b}"),
            r >= 0.95,
            format!("pearson={r:.4} min=0.95"),
        ));
    }
    let all: Vec<f64> = runs.iter().map(|r| r.report.normalized_throughput).collect();
    let (lo, hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    checks.push(check(
        "throughput-in-band",
        lo >= 1.0 && hi <= 2.0,
        format!("min={lo:.4} max={hi:.4} band=[1,2]"),
    ));
    let max_d1 = (0..grid.len())
        .map(|i| at(1, i).mean_head_delay)
        .fold(0.0, f64::max);
    checks.push(check(
        "bufdepth1-zero-delay",
        max_d1 == 0.0,
        format!("max_delay={max_d1}"),
    ));
    let half = grid.iter().position(|&p| p == 0.5).expect("0.5 on grid");
    let at_half: Vec<f64> = BUFDEPTHS.iter().map(|&b| at(b, half).normalized_throughput).collect();
    checks.push(check(
        "throughput-nondecreasing-at-p0.5",
        at_half.windows(2).all(|w| w[1] >= w[0]),
        format!("throughput={at_half:.4?}"),
    ));
    Ok(ExperimentOutput {
        experiment: Experiment::BufdepthSweep,
        csv: to_csv(
            &["bufdepth", "p_pick", "normalized_throughput", "mean_head_delay"],
            &rows,
        ),
        checks,
        audits: audits(&runs),
    })
}

/// AP saturated toward M1, M2 saturated toward the AP; `linked` adds M1-M2.
pub fn hidden_scenario(linked: bool) -> Scenario {
    let mut edges = vec![(0, 1), (0, 2)];
    if linked {
        edges.push((1, 2));
    }
    let mut s = Scenario::new(Topology::new(3, &edges).expect("valid edges"));
    s.traffic[0] = Traffic::Saturated {
        dest: Dest::To(1),
        bytes: 1000,
    };
    s.traffic[2] = Traffic::Saturated {
        dest: Dest::To(AP),
        bytes: 200,
    };
    s.seed = Experiment::HiddenInjection.seed();
    s.duration_us = 2_000_000;
    s
}

fn hidden_injection(audit: bool) -> Result<ExperimentOutput, RunError> {
    let jobs = vec![
        ("hidden".to_string(), hidden_scenario(false)),
        ("linked".to_string(), hidden_scenario(true)),
    ];
    let runs = run_all(jobs, audit, true)?;
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let m = &r.report;
            vec![
                r.label.clone(),
                m.injection_opportunities.to_string(),
                m.injections.to_string(),
                m.dirty_receptions.to_string(),
                r.collided_at_m1.to_string(),
                m.flow(0, 1).map_or(0, |f| f.delivered_packets).to_string(),
                m.flow(2, 0).map_or(0, |f| f.delivered_packets).to_string(),
            ]
        })
        .collect();
    let (h, l) = (&runs[0], &runs[1]);
    let checks = vec![
        check(
            "hidden-concurrent-rounds",
            h.report.injections > 0 && h.report.dirty_receptions > 0,
            format!(
                "injections={} dirty_receptions={}",
                h.report.injections, h.report.dirty_receptions
            ),
        ),
        check(
            "hidden-no-collisions-at-m1",
            h.collided_at_m1 == 0,
            format!("collided={}", h.collided_at_m1),
        ),
        check(
            "linked-never-injects",
            l.report.injections == 0,
            format!("injections={}", l.report.injections),
        ),
    ];
    Ok(ExperimentOutput {
        experiment: Experiment::HiddenInjection,
        csv: to_csv(
            &[
                "topology",
                "opportunities",
                "injections",
                "dirty_receptions",
                "collided_at_m1",
                "ap_to_m1_packets",
                "m2_to_ap_packets",
            ],
            &rows,
        ),
        checks,
        audits: audits(&runs),
    })
}

/// Two snoopers (M2, M3) hidden from M1, both saturated toward the AP.
pub fn snooper_scenario(policy: SnoopPolicy) -> Scenario {
    let topo = Topology::new(4, &[(0, 1), (0, 2), (0, 3), (2, 3)]).expect("valid edges");
    let mut s = Scenario::new(topo);
    s.traffic[0] = Traffic::Saturated {
        dest: Dest::To(1),
        bytes: 500,
    };
    for i in [2, 3] {
        s.traffic[i] = Traffic::Saturated {
            dest: Dest::To(AP),
            bytes: 200,
        };
    }
    s.seed = Experiment::SnooperCollisions.seed();
    s.duration_us = 10_000_000;
    s.with_mac(|id, m| {
        m.snoop = policy;
        if id >= 2 {
            m.dcf.cw_min = 1023;
        }
    })
}

/// One-sided z statistic for `c1/n1 > c2/n2` with a pooled proportion.
pub fn two_proportion_z(c1: u64, n1: u64, c2: u64, n2: u64) -> f64 {
    let (c1, n1, c2, n2) = (c1 as f64, n1 as f64, c2 as f64, n2 as f64);
    let p = (c1 + c2) / (n1 + n2);
    let se = (p * (1.0 - p) * (1.0 / n1 + 1.0 / n2)).sqrt();
    (c1 / n1 - c2 / n2) / se
}

/// Critical value of the standard normal at one-sided alpha = 0.01.
pub const Z_CRIT_001: f64 = 2.326;

fn snooper_collisions(audit: bool) -> Result<ExperimentOutput, RunError> {
    let jobs = vec![
        ("always".to_string(), snooper_scenario(SnoopPolicy::Always)),
        ("beta16".to_string(), snooper_scenario(SnoopPolicy::Beta(16.0))),
    ];
    let runs = run_all(jobs, audit, false)?;
    let rate = |m: &MetricsReport| m.injection_collisions as f64 / m.injection_opportunities.max(1) as f64;
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let m = &r.report;
            vec![
                r.label.clone(),
                m.injection_opportunities.to_string(),
                m.injections.to_string(),
                m.injection_collisions.to_string(),
                format!("{:.6}", rate(m)),
            ]
        })
        .collect();
    let (a, b) = (&runs[0].report, &runs[1].report);
    let z = two_proportion_z(
        a.injection_collisions,
        a.injection_opportunities,
        b.injection_collisions,
        b.injection_opportunities,
    );
    let n_min = a.injection_opportunities.min(b.injection_opportunities);
    let checks = vec![
        check(
            "enough-opportunities",
            n_min >= 10_000,
            format!("min_opportunities={n_min}"),
        ),
        check(
            "rate-drops-significantly",
            rate(b) < rate(a) && z > Z_CRIT_001,
            format!(
                "rate_always={:.5} rate_beta={:.5} z={z:.2} crit={Z_CRIT_001}",
                rate(a),
                rate(b)
            ),
        ),
    ];
    Ok(ExperimentOutput {
        experiment: Experiment::SnooperCollisions,
        csv: to_csv(
            &[
                "policy",
                "opportunities",
                "injections",
                "injection_collisions",
                "collision_rate",
            ],
            &rows,
        ),
        checks,
        audits: audits(&runs),
    })
}

/// `experiment,check,result,detail` rows over several outputs.
pub fn summary_csv(outputs: &[ExperimentOutput]) -> String {
    let rows: Vec<Vec<String>> = outputs
        .iter()
        .flat_map(|o| {
            o.checks.iter().map(|c| {
                vec![
                    o.experiment.name().to_string(),
                    c.name.clone(),
                    if c.passed { "PASS" } else { "FAIL" }.to_string(),
                    c.detail.clone(),
                ]
            })
        })
        .collect();
    to_csv(&["experiment", "check", "result", "detail"], &rows)
}
