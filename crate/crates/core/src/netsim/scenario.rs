//! Scenario files: flat `key = value` lines, `#` starts a comment.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `seed` | master seed | 1 |
//! | `protocol` | `optimum` or `gossipsub` | optimum |
//! | `nodes` | node count | 128 |
//! | `mesh_degree` | target mesh degree D | 6 |
//! | `k` | fragments per message | 8 |
//! | `r` | forwarding threshold | k |
//! | `p` | publisher shard multiplier, or `neighbors` | neighbors |
//! | `heartbeat_ms` | heartbeat period | 1000 |
//! | `message_bytes` | payload size | 1048576 |
//! | `publish_count` | messages published | 1 |
//! | `publish_rate` | messages per second | 1 |
//! | `byzantine_fraction` | share of polluting nodes | 0 |
//! | `pollution_prob` | chance a polluter corrupts a shard it sends | 1 |
//! | `bandwidth_classes` | `fraction:up_mbps:down_mbps`, comma separated | `0.2:1000:1000,0.8:50:50` |
//! | `latency` | `uniform:lo_ms:hi_ms` or `matrix:path.csv` | `uniform:10:150` |
//! | `horizon_s` | simulated run length | 30 |
//! | `delivery_quorum` | quorum fraction | 0.95 |
//! | `delivery_deadline_s` | a delivery counts if it lands this soon after publish | horizon |
//! | `loss_prob` | iid envelope drop probability | 0 |
//! | `accusation_grace_ms` | wait before accusing after decode | 2 heartbeats |

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::protocol::ProtocolParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Optimum,
    Gossipsub,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Optimum => "optimum",
            Protocol::Gossipsub => "gossipsub",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "optimum" | "optimump2p" | "rlnc" => Ok(Protocol::Optimum),
            "gossipsub" | "baseline" => Ok(Protocol::Gossipsub),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthClass {
    pub fraction: f64,
    pub up_bps: f64,
    pub down_bps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LatencyModel {
    /// One-way delay uniform in `[lo, hi]` milliseconds, symmetric.
    Uniform { lo_ms: f64, hi_ms: f64 },
    /// Row-major n×n one-way delays in milliseconds.
    Matrix { path: String, ms: Arc<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub protocol: Protocol,
    pub nodes: usize,
    pub mesh_degree: usize,
    pub k: usize,
    pub r: Option<usize>,
    pub p: Option<usize>,
    pub heartbeat: Duration,
    pub message_bytes: usize,
    pub publish_count: usize,
    pub publish_rate: f64,
    pub byzantine_fraction: f64,
    pub pollution_prob: f64,
    pub bandwidth_classes: Vec<BandwidthClass>,
    pub latency: LatencyModel,
    pub horizon: Duration,
    pub delivery_quorum: f64,
    pub delivery_deadline: Option<Duration>,
    pub loss_prob: f64,
    pub accusation_grace: Option<Duration>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            protocol: Protocol::Optimum,
            nodes: 128,
            mesh_degree: 6,
            k: 8,
            r: None,
            p: None,
            heartbeat: Duration::from_secs(1),
            message_bytes: 1 << 20,
            publish_count: 1,
            publish_rate: 1.0,
            byzantine_fraction: 0.0,
            pollution_prob: 1.0,
            bandwidth_classes: vec![
                BandwidthClass {
                    fraction: 0.2,
                    up_bps: 1e9,
                    down_bps: 1e9,
                },
                BandwidthClass {
                    fraction: 0.8,
                    up_bps: 50e6,
                    down_bps: 50e6,
                },
            ],
            latency: LatencyModel::Uniform {
                lo_ms: 10.0,
                hi_ms: 150.0,
            },
            horizon: Duration::from_secs(30),
            delivery_quorum: 0.95,
            delivery_deadline: None,
            loss_prob: 0.0,
            accusation_grace: None,
        }
    }
}

/// Non-empty, non-comment lines as `(line number, key, value)`.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ScenarioError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ScenarioError::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            });
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ScenarioError> {
    v.parse().map_err(|_| ScenarioError::Parse {
        line,
        msg: format!("{key}: cannot parse {v:?}"),
    })
}

fn secs(line: usize, key: &str, v: &str, scale: f64) -> Result<Duration, ScenarioError> {
    let x: f64 = num(line, key, v)?;
    if !x.is_finite() || x < 0.0 {
        return Err(ScenarioError::Parse {
            line,
            msg: format!("{key}: must be a non-negative number"),
        });
    }
    Ok(Duration::from_secs_f64(x * scale))
}

fn parse_classes(line: usize, v: &str) -> Result<Vec<BandwidthClass>, ScenarioError> {
    let bad = |msg: String| ScenarioError::Parse { line, msg };
    v.split(',')
        .map(|part| {
            let f: Vec<&str> = part.trim().split(':').collect();
            if f.len() != 3 {
                return Err(bad(format!(
                    "bandwidth class {part:?} is not fraction:up_mbps:down_mbps"
                )));
            }
            let g = |s: &str| -> Result<f64, ScenarioError> {
                s.trim()
                    .parse()
                    .map_err(|_| bad(format!("bad number {s:?} in bandwidth class")))
            };
            Ok(BandwidthClass {
                fraction: g(f[0])?,
                up_bps: g(f[1])? * 1e6,
                down_bps: g(f[2])? * 1e6,
            })
        })
        .collect()
}

/// Reads an n×n CSV of one-way delays in milliseconds.
pub fn load_latency_matrix(path: &str) -> Result<Vec<f64>, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, row) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        for cell in row.split(',') {
            let x: f64 = cell.trim().parse().map_err(|_| ScenarioError::Parse {
                line: i + 1,
                msg: format!("{path}: bad latency {cell:?}"),
            })?;
            out.push(x);
        }
    }
    Ok(out)
}

fn parse_latency(line: usize, v: &str) -> Result<LatencyModel, ScenarioError> {
    let bad = |msg: String| ScenarioError::Parse { line, msg };
    let (kind, rest) = v.split_once(':').unwrap_or((v, ""));
    match kind.trim() {
        "uniform" => {
            let (lo, hi) = rest
                .split_once(':')
                .ok_or_else(|| bad("uniform latency needs lo:hi".into()))?;
            Ok(LatencyModel::Uniform {
                lo_ms: num(line, "latency", lo.trim())?,
                hi_ms: num(line, "latency", hi.trim())?,
            })
        }
        "matrix" => {
            let path = rest.trim().to_string();
            let ms = load_latency_matrix(&path)?;
            Ok(LatencyModel::Matrix {
                path,
                ms: Arc::new(ms),
            })
        }
        other => Err(bad(format!("unknown latency model {other:?}"))),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let pairs = parse_pairs(text)?;
        Scenario::from_pairs(&pairs)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::parse(&text)
    }

    pub fn from_pairs(pairs: &[(usize, String, String)]) -> Result<Scenario, ScenarioError> {
        let mut s = Scenario::default();
        for (line, key, v) in pairs {
            s.set(*line, key, v)?;
        }
        s.validate()?;
        Ok(s)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ScenarioError> {
        match key {
            "seed" => self.seed = num(line, key, v)?,
            "protocol" => {
                self.protocol = v
                    .parse()
                    .map_err(|msg| ScenarioError::Parse { line, msg })?
            }
            "nodes" | "n" => self.nodes = num(line, key, v)?,
            "mesh_degree" | "D" => self.mesh_degree = num(line, key, v)?,
            "k" => self.k = num(line, key, v)?,
            "r" => self.r = Some(num(line, key, v)?),
            "p" => {
                self.p = match v {
                    "neighbors" | "auto" => None,
                    _ => Some(num(line, key, v)?),
                }
            }
            "heartbeat_ms" => self.heartbeat = secs(line, key, v, 1e-3)?,
            "message_bytes" => self.message_bytes = num(line, key, v)?,
            "publish_count" => self.publish_count = num(line, key, v)?,
            "publish_rate" => self.publish_rate = num(line, key, v)?,
            "byzantine_fraction" => self.byzantine_fraction = num(line, key, v)?,
            "pollution_prob" => self.pollution_prob = num(line, key, v)?,
            "bandwidth_classes" => self.bandwidth_classes = parse_classes(line, v)?,
            "latency" => self.latency = parse_latency(line, v)?,
            "horizon_s" => self.horizon = secs(line, key, v, 1.0)?,
            "delivery_quorum" => self.delivery_quorum = num(line, key, v)?,
            "delivery_deadline_s" => self.delivery_deadline = Some(secs(line, key, v, 1.0)?),
            "loss_prob" => self.loss_prob = num(line, key, v)?,
            "accusation_grace_ms" => self.accusation_grace = Some(secs(line, key, v, 1e-3)?),
            other => {
                return Err(ScenarioError::Parse {
                    line,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let positive = |x: f64| x > 0.0;
        if self.nodes < 2 {
            return bad("need at least 2 nodes");
        }
        if self.mesh_degree == 0 || self.mesh_degree >= self.nodes {
            return bad("mesh_degree must be in 1..nodes");
        }
        if self.k == 0 || self.k > crate::rlnc::MAX_K {
            return bad("k out of range");
        }
        if self.p == Some(0) {
            return bad("p must be positive");
        }
        if self.heartbeat.is_zero() {
            return bad("heartbeat must be positive");
        }
        if self.message_bytes == 0 {
            return bad("message_bytes must be positive");
        }
        if !(self.publish_rate > 0.0 && self.publish_rate.is_finite()) {
            return bad("publish_rate must be positive");
        }
        if !unit(self.byzantine_fraction) || !unit(self.pollution_prob) || !unit(self.loss_prob) {
            return bad("fractions and probabilities must lie in [0, 1]");
        }
        if !(self.delivery_quorum > 0.0 && self.delivery_quorum <= 1.0) {
            return bad("delivery_quorum must lie in (0, 1]");
        }
        if self.horizon.is_zero() {
            return bad("horizon must be positive");
        }
        if self.bandwidth_classes.is_empty() {
            return bad("at least one bandwidth class");
        }
        let total: f64 = self.bandwidth_classes.iter().map(|c| c.fraction).sum();
        if self
            .bandwidth_classes
            .iter()
            .any(|c| !unit(c.fraction) || !positive(c.up_bps) || !positive(c.down_bps))
            || (total - 1.0).abs() > 1e-6
        {
            return bad("bandwidth class fractions must sum to 1 and rates be positive");
        }
        match &self.latency {
            LatencyModel::Uniform { lo_ms, hi_ms } => {
                if !(*lo_ms >= 0.0 && lo_ms <= hi_ms) {
                    return bad("uniform latency needs 0 <= lo <= hi");
                }
            }
            LatencyModel::Matrix { ms, .. } => {
                if ms.len() != self.nodes * self.nodes {
                    return Err(ScenarioError::Invalid(format!(
                        "latency matrix has {} entries, expected {}x{}",
                        ms.len(),
                        self.nodes,
                        self.nodes
                    )));
                }
                if ms.iter().any(|x| x.is_nan() || *x < 0.0) {
                    return bad("latencies must be non-negative");
                }
            }
        }
        if (self.byzantine_fraction * self.nodes as f64).round() as usize >= self.nodes {
            return bad("at least one node must be correct");
        }
        self.protocol_params()
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        let mut p = ProtocolParams::new(self.k);
        p.r = self.r.unwrap_or(self.k);
        p.publish_multiplier = self.p;
        p.heartbeat = self.heartbeat;
        p.accusation_grace = self.accusation_grace.unwrap_or(2 * self.heartbeat);
        p
    }

    /// Window after publish in which a delivery counts towards the ratio.
    pub fn deadline(&self) -> Duration {
        self.delivery_deadline.unwrap_or(self.horizon)
    }

    pub fn publish_interval(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.publish_rate)
    }
}
