//! Run measurements and their CSV forms.
//!
//! `deliveries` CSV, one row per (message, node) delivery:
//! `protocol,seed,message,msg_id,node,publish_ms,deliver_ms,latency_ms`.
//!
//! `summary` CSV, one row per run, columns in [`SUMMARY_COLUMNS`]. Times are
//! milliseconds with three decimals; an empty cell means "not reached".

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Duration;

use crate::crypto::{Digest, PeerId};
use crate::protocol::Kind;

use super::scenario::Protocol;

pub const DELIVERY_COLUMNS: [&str; 8] = [
    "protocol",
    "seed",
    "message",
    "msg_id",
    "node",
    "publish_ms",
    "deliver_ms",
    "latency_ms",
];

pub const SUMMARY_COLUMNS: [&str; 24] = [
    "protocol",
    "seed",
    "axis",
    "axis_value",
    "nodes",
    "messages",
    "message_bytes",
    "publish_rate",
    "byzantine_fraction",
    "delivered",
    "expected",
    "delivery_ratio",
    "quorum_reached",
    "mean_quorum_ms",
    "std_quorum_ms",
    "mean_latency_ms",
    "mean_node_std_ms",
    "bytes_sent",
    "redundant_bytes",
    "redundant_bytes_per_node",
    "control_msgs",
    "alerts",
    "quarantines",
    "topology_digest",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MessageMetrics {
    pub index: usize,
    pub id: Digest,
    pub publisher: PeerId,
    pub publish_at: Duration,
    /// Latency from publish, per node; `None` if never delivered.
    pub latency: Vec<Option<Duration>>,
    pub time_to_quorum: Option<Duration>,
}

impl MessageMetrics {
    pub fn delivered(&self, correct: &[bool]) -> usize {
        self.latency
            .iter()
            .zip(correct)
            .filter(|(l, &c)| c && l.is_some())
            .count()
    }

    /// Mean and population std of delivery latency over correct nodes
    /// that delivered, in milliseconds.
    pub fn latency_stats_ms(&self, correct: &[bool]) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self
            .latency
            .iter()
            .zip(correct)
            .filter_map(|(l, &c)| if c { *l } else { None })
            .map(ms)
            .collect();
        mean_std(&xs)
    }
}

/// Traffic and defence counters summed over all nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub bytes_by_kind: BTreeMap<Kind, u64>,
    pub envelopes_by_kind: BTreeMap<Kind, u64>,
    pub dropped: u64,
    /// Envelopes handed to their receiver.
    pub arrived: u64,
    /// Envelopes still on the wire at the horizon.
    pub in_flight: u64,
    pub corrupted: u64,
    pub redundant_bytes: u64,
    pub wrong_deliveries: u64,
    pub alerts: u64,
    pub bogus_alerts: u64,
    pub unverified_accusations: u64,
    pub polluted_episodes: u64,
    pub quarantines: u64,
    pub releases: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub protocol: Protocol,
    pub seed: u64,
    pub axis: String,
    pub axis_value: String,
    pub nodes: usize,
    pub message_bytes: usize,
    pub publish_rate: f64,
    pub byzantine_fraction: f64,
    pub deadline: Duration,
    pub correct: Vec<bool>,
    pub messages: Vec<MessageMetrics>,
    pub counters: Counters,
    pub topology_digest: Digest,
}

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn fmt_ms(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_default()
}

impl RunMetrics {
    pub fn correct_nodes(&self) -> usize {
        self.correct.iter().filter(|&&c| c).count()
    }

    pub fn expected_pairs(&self) -> usize {
        self.messages.len() * self.correct_nodes()
    }

    /// (message, correct node) pairs delivered within the deadline.
    pub fn delivered_pairs(&self) -> usize {
        self.messages
            .iter()
            .map(|m| {
                m.latency
                    .iter()
                    .zip(&self.correct)
                    .filter(|(l, &c)| c && l.is_some_and(|l| l <= self.deadline))
                    .count()
            })
            .sum()
    }

    pub fn delivery_ratio(&self) -> f64 {
        match self.expected_pairs() {
            0 => 1.0,
            e => self.delivered_pairs() as f64 / e as f64,
        }
    }

    pub fn quorum_times_ms(&self) -> Vec<f64> {
        self.messages
            .iter()
            .filter_map(|m| m.time_to_quorum.map(ms))
            .collect()
    }

    pub fn quorum_reached(&self) -> usize {
        self.quorum_times_ms().len()
    }

    pub fn mean_quorum_ms(&self) -> Option<f64> {
        mean_std(&self.quorum_times_ms()).map(|s| s.0)
    }

    pub fn std_quorum_ms(&self) -> Option<f64> {
        mean_std(&self.quorum_times_ms()).map(|s| s.1)
    }

    /// Mean latency over every delivered (message, correct node) pair.
    pub fn mean_latency_ms(&self) -> Option<f64> {
        let xs: Vec<f64> = self
            .messages
            .iter()
            .flat_map(|m| {
                m.latency
                    .iter()
                    .zip(&self.correct)
                    .filter_map(|(l, &c)| if c { *l } else { None })
            })
            .map(ms)
            .collect();
        mean_std(&xs).map(|s| s.0)
    }

    /// Spread of delivery times across nodes, averaged over messages.
    pub fn mean_node_std_ms(&self) -> Option<f64> {
        let stds: Vec<f64> = self
            .messages
            .iter()
            .filter_map(|m| m.latency_stats_ms(&self.correct).map(|s| s.1))
            .collect();
        mean_std(&stds).map(|s| s.0)
    }

    pub fn bytes_sent(&self) -> u64 {
        self.counters.bytes_by_kind.values().sum()
    }

    pub fn control_msgs(&self) -> u64 {
        self.counters
            .envelopes_by_kind
            .iter()
            .filter(|(k, _)| !k.is_data())
            .map(|(_, c)| c)
            .sum()
    }

    pub fn redundant_bytes_per_node(&self) -> f64 {
        self.counters.redundant_bytes as f64 / self.nodes as f64
    }

    pub fn summary_row(&self) -> Vec<String> {
        vec![
            self.protocol.to_string(),
            self.seed.to_string(),
            self.axis.clone(),
            self.axis_value.clone(),
            self.nodes.to_string(),
            self.messages.len().to_string(),
            self.message_bytes.to_string(),
            format!("{}", self.publish_rate),
            format!("{}", self.byzantine_fraction),
            self.delivered_pairs().to_string(),
            self.expected_pairs().to_string(),
            format!("{:.6}", self.delivery_ratio()),
            self.quorum_reached().to_string(),
            fmt_ms(self.mean_quorum_ms()),
            fmt_ms(self.std_quorum_ms()),
            fmt_ms(self.mean_latency_ms()),
            fmt_ms(self.mean_node_std_ms()),
            self.bytes_sent().to_string(),
            self.counters.redundant_bytes.to_string(),
            format!("{:.1}", self.redundant_bytes_per_node()),
            self.control_msgs().to_string(),
            self.counters.alerts.to_string(),
            self.counters.quarantines.to_string(),
            self.topology_digest.to_hex(),
        ]
    }

    pub fn delivery_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for m in &self.messages {
            for (v, l) in m.latency.iter().enumerate() {
                let Some(l) = l else { continue };
                rows.push(vec![
                    self.protocol.to_string(),
                    self.seed.to_string(),
                    m.index.to_string(),
                    m.id.short(),
                    v.to_string(),
                    format!("{:.3}", ms(m.publish_at)),
                    format!("{:.3}", ms(m.publish_at + *l)),
                    format!("{:.3}", ms(*l)),
                ]);
            }
        }
        rows
    }

    /// One-line human summary.
    pub fn headline(&self) -> String {
        let q = self
            .mean_quorum_ms()
            .map(|x| format!("{x:.0}ms"))
            .unwrap_or_else(|| "not reached".into());
        format!(
            "delivered {}/{}, quorum@95%={}",
            self.delivered_pairs(),
            self.expected_pairs(),
            q
        )
    }
}

pub fn write_summary_csv<W: Write>(runs: &[RunMetrics], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_COLUMNS)?;
    for r in runs {
        out.write_record(r.summary_row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_deliveries_csv<W: Write>(runs: &[RunMetrics], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(DELIVERY_COLUMNS)?;
    for r in runs {
        for row in r.delivery_rows() {
            out.write_record(row)?;
        }
    }
    out.flush()?;
    Ok(())
}
