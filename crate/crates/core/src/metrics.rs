//! Reception statistics computed from a trace.
//!
//! Update time is the gap between consecutive accepted frames at a node.
//! `mean_info_age_ms` is a secondary view: the age of the displayed
//! information averaged over continuous time between the first and last
//! accepted frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use thiserror::Error;

use crate::intersection::DisplayState;
use crate::nodes::NodeId;
use crate::protocol::{effective_throughput, tx_time, LinkTimingParams, FRAME_LEN, PAYLOAD_LEN};
use crate::time::SimTime;
use crate::trace::{LossReason, Trace, TraceEventKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("node {0} has no reception statistics in this report")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub tx_count: u64,
    pub rx_ok: u64,
    pub lost_channel: u64,
    pub lost_not_listening: u64,
    pub lost_rejected: u64,
    pub rx_corrupt: u64,
    pub update_intervals_us: Vec<u64>,
    pub display_timeline: Vec<(SimTime, DisplayState)>,
}

impl NodeMetrics {
    pub fn rx_lost(&self) -> u64 {
        self.lost_channel + self.lost_not_listening + self.lost_rejected
    }

    /// Frames addressed to this node, whatever happened to them.
    pub fn addressed(&self) -> u64 {
        self.rx_ok + self.rx_lost() + self.rx_corrupt
    }

    /// Accepted over addressed; frames missed while not listening count as lost.
    pub fn psr(&self) -> f64 {
        ratio(self.rx_ok, self.addressed())
    }

    /// Accepted over frames that reached a listening radio, i.e. the channel alone.
    pub fn link_psr(&self) -> f64 {
        ratio(self.rx_ok, self.rx_ok + self.lost_channel + self.rx_corrupt)
    }

    pub fn interval_stats(&self) -> Option<IntervalStats> {
        if self.update_intervals_us.is_empty() {
            return None;
        }
        let mut v = self.update_intervals_us.clone();
        v.sort_unstable();
        let n = v.len();
        let sum: u64 = v.iter().sum();
        let median = if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
        };
        Some(IntervalStats {
            mean_ms: sum as f64 / n as f64 / 1e3,
            median_ms: median / 1e3,
            max_ms: v[n - 1] as f64 / 1e3,
        })
    }

    pub fn mean_info_age_ms(&self) -> Option<f64> {
        let total: u64 = self.update_intervals_us.iter().sum();
        if total == 0 {
            return None;
        }
        let area: f64 = self
            .update_intervals_us
            .iter()
            .map(|&g| (g as f64) * (g as f64) / 2.0)
            .sum();
        Some(area / total as f64 / 1e3)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkMetrics {
    pub from: NodeId,
    pub to: NodeId,
    pub addressed: u64,
    pub rx_ok: u64,
    pub lost_channel: u64,
}

impl LinkMetrics {
    pub fn psr(&self) -> f64 {
        ratio(self.rx_ok, self.addressed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theoretical {
    pub tx_time_us: f64,
    pub throughput_b_per_us: f64,
}

impl Theoretical {
    pub fn new(params: &LinkTimingParams) -> Theoretical {
        let t = tx_time(FRAME_LEN, params);
        Theoretical {
            tx_time_us: t,
            throughput_b_per_us: effective_throughput((PAYLOAD_LEN * 8) as u32, t, params),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Nodes that sent or were sent at least one frame, by id.
    pub nodes: Vec<NodeMetrics>,
    pub links: Vec<LinkMetrics>,
    pub theoretical: Theoretical,
}

pub fn compute_metrics(trace: &Trace) -> MetricsReport {
    compute_metrics_with(trace, &LinkTimingParams::default())
}

pub fn compute_metrics_with(trace: &Trace, params: &LinkTimingParams) -> MetricsReport {
    let mut nodes: BTreeMap<NodeId, NodeMetrics> = BTreeMap::new();
    let mut links: BTreeMap<(NodeId, NodeId), LinkMetrics> = BTreeMap::new();
    let mut last_ok: BTreeMap<NodeId, SimTime> = BTreeMap::new();

    for e in &trace.events {
        let m = nodes.entry(e.node).or_insert_with(|| NodeMetrics {
            node: e.node,
            ..NodeMetrics::default()
        });
        let from = match &e.kind {
            TraceEventKind::Tx { .. } => {
                m.tx_count += 1;
                None
            }
            TraceEventKind::RxOk { from, .. } => {
                m.rx_ok += 1;
                if let Some(prev) = last_ok.insert(e.node, e.time) {
                    m.update_intervals_us.push(e.time.as_micros() - prev.as_micros());
                }
                Some((*from, true, false))
            }
            TraceEventKind::RxLost { from, reason, .. } => {
                match reason {
                    LossReason::Channel => m.lost_channel += 1,
                    LossReason::NotListening => m.lost_not_listening += 1,
                    LossReason::Rejected => m.lost_rejected += 1,
                }
                Some((*from, false, *reason == LossReason::Channel))
            }
            TraceEventKind::RxCorrupt { from, .. } => {
                m.rx_corrupt += 1;
                Some((*from, false, false))
            }
            TraceEventKind::DisplayChange(d) => {
                m.display_timeline.push((e.time, *d));
                None
            }
            TraceEventKind::StateAdvance(_) | TraceEventKind::SlotChange(_) => None,
        };
        if let Some((from, ok, channel)) = from {
            let l = links.entry((from, e.node)).or_insert_with(|| LinkMetrics {
                from,
                to: e.node,
                ..LinkMetrics::default()
            });
            l.addressed += 1;
            l.rx_ok += u64::from(ok);
            l.lost_channel += u64::from(channel);
        }
    }

    MetricsReport {
        nodes: nodes.into_values().collect(),
        links: links.into_values().collect(),
        theoretical: Theoretical::new(params),
    }
}

pub const METRICS_HEADER: [&str; 17] = [
    "node",
    "tx",
    "rx_ok",
    "rx_lost",
    "rx_lost_channel",
    "rx_lost_not_listening",
    "rx_lost_rejected",
    "rx_corrupt",
    "psr",
    "link_psr",
    "update_mean_ms",
    "update_median_ms",
    "update_max_ms",
    "mean_info_age_ms",
    "display_changes",
    "tx_time_us",
    "throughput_b_per_us",
];

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

impl MetricsReport {
    pub fn node(&self, id: NodeId) -> Option<&NodeMetrics> {
        self.nodes.iter().find(|n| n.node == id)
    }

    /// The formatted CSV cells. The text summary is built from these same
    /// strings, so both outputs always agree.
    pub fn rows(&self) -> Vec<Vec<String>> {
        self.nodes
            .iter()
            .map(|n| {
                let s = n.interval_stats();
                vec![
                    n.node.to_string(),
                    n.tx_count.to_string(),
                    n.rx_ok.to_string(),
                    n.rx_lost().to_string(),
                    n.lost_channel.to_string(),
                    n.lost_not_listening.to_string(),
                    n.lost_rejected.to_string(),
                    n.rx_corrupt.to_string(),
                    f(n.psr()),
                    f(n.link_psr()),
                    opt(s.as_ref().map(|s| s.mean_ms)),
                    opt(s.as_ref().map(|s| s.median_ms)),
                    opt(s.as_ref().map(|s| s.max_ms)),
                    opt(n.mean_info_age_ms()),
                    n.display_timeline.len().to_string(),
                    f(self.theoretical.tx_time_us),
                    f(self.theoretical.throughput_b_per_us),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(METRICS_HEADER)?;
        for row in self.rows() {
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("metrics CSV is ASCII")
    }

    pub fn summary(&self) -> String {
        let rows = self.rows();
        let mut out = String::new();
        let th = rows.first().map_or_else(
            || (f(self.theoretical.tx_time_us), f(self.theoretical.throughput_b_per_us)),
            |r| (r[15].clone(), r[16].clone()),
        );
        let _ = writeln!(out, "theoretical: tx_time_us={} throughput_b_per_us={}", th.0, th.1);
        for r in rows.iter().filter(|r| r[1] != "0" && r[2] == "0" && r[3] == "0") {
            let _ = writeln!(out, "node {}: tx={}", r[0], r[1]);
        }
        for r in rows.iter().filter(|r| !(r[2] == "0" && r[3] == "0" && r[7] == "0")) {
            let _ = writeln!(out, "node {}:", r[0]);
            let _ = writeln!(
                out,
                "  rx_ok={} rx_lost={} (channel={} not_listening={} rejected={}) rx_corrupt={}",
                r[2], r[3], r[4], r[5], r[6], r[7]
            );
            let _ = writeln!(out, "  psr={} link_psr={}", r[8], r[9]);
            let _ = writeln!(
                out,
                "  update_ms mean={} median={} max={} (mean_info_age_ms={})",
                r[10], r[11], r[12], r[13]
            );
            let _ = writeln!(out, "  display_changes={}", r[14]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: NodeId,
    pub b: NodeId,
    /// rx_ok(a) / rx_ok(b); `None` when b received nothing.
    pub count_ratio: Option<f64>,
    /// mean update interval of b minus that of a, ms.
    pub mean_interval_diff_ms: Option<f64>,
}

impl Comparison {
    pub fn summary(&self) -> String {
        format!(
            "nodes {} vs {}: rx_ok ratio={} mean update difference ms={}\n",
            self.a,
            self.b,
            opt(self.count_ratio),
            opt(self.mean_interval_diff_ms)
        )
    }
}

pub fn compare_receivers(report: &MetricsReport, a: NodeId, b: NodeId) -> Result<Comparison, MetricsError> {
    let ma = report.node(a).ok_or(MetricsError::UnknownNode(a))?;
    let mb = report.node(b).ok_or(MetricsError::UnknownNode(b))?;
    let count_ratio = (mb.rx_ok > 0).then(|| ma.rx_ok as f64 / mb.rx_ok as f64);
    let mean_interval_diff_ms = match (ma.interval_stats(), mb.interval_stats()) {
        (Some(x), Some(y)) => Some(y.mean_ms - x.mean_ms),
        _ => None,
    };
    Ok(Comparison {
        a,
        b,
        count_ratio,
        mean_interval_diff_ms,
    })
}

/// One row per (value, receiving node): the table behind a PSR-vs-parameter plot.
pub fn sweep_table(parameter: &str, runs: &[(f64, MetricsReport)]) -> String {
    let mut out = csv::Writer::from_writer(Vec::new());
    let header = [
        parameter,
        "node",
        "addressed",
        "rx_ok",
        "psr",
        "link_psr",
        "update_mean_ms",
        "update_max_ms",
    ];
    out.write_record(header).expect("writing to memory");
    for (value, report) in runs {
        for n in report.nodes.iter().filter(|n| n.addressed() > 0) {
            let s = n.interval_stats();
            out.write_record([
                value.to_string(),
                n.node.to_string(),
                n.addressed().to_string(),
                n.rx_ok.to_string(),
                f(n.psr()),
                f(n.link_psr()),
                opt(s.as_ref().map(|s| s.mean_ms)),
                opt(s.as_ref().map(|s| s.max_ms)),
            ])
            .expect("writing to memory");
        }
    }
    String::from_utf8(out.into_inner().expect("flushing memory")).expect("ASCII")
}
