//! Scenario runner and A/B harness.
//!
//! A sweep file is a scenario file with four extra keys:
//!
//! ```text
//! axis = publish_rate          # message_bytes | publish_rate | byzantine_fraction
//! values = 1, 10, 20
//! repetitions = 10
//! publish_window_s = 1         # optional: publish_count = ceil(rate * window)
//! ```
//!
//! Repetition `i` runs with seed `base_seed + i` for every axis value and
//! protocol, so runs pair up across both.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use gg_core::netsim::metrics::{mean_std, write_deliveries_csv, write_summary_csv};
use gg_core::netsim::scenario::parse_pairs;
use gg_core::netsim::{run, Protocol, RunMetrics, Scenario, ScenarioError, SimError};
use thiserror::Error;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub const AGGREGATE_COLUMNS: [&str; 10] = [
    "protocol",
    "axis",
    "axis_value",
    "runs",
    "mean_quorum_ms",
    "std_quorum_ms",
    "delivery_ratio",
    "mean_node_std_ms",
    "redundant_bytes_per_node",
    "quorum_reached",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for anything the user can fix in their input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) | CliError::Config(_) | CliError::Sim(_) => 2,
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    MessageSize,
    PublishRate,
    ByzantineFraction,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::MessageSize => "message_bytes",
            Axis::PublishRate => "publish_rate",
            Axis::ByzantineFraction => "byzantine_fraction",
        }
    }

    fn apply(self, s: &mut Scenario, v: f64) -> Result<(), CliError> {
        match self {
            Axis::MessageSize => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(CliError::Config(format!(
                        "message size {v} is not a positive integer"
                    )));
                }
                s.message_bytes = v as usize;
            }
            Axis::PublishRate => s.publish_rate = v,
            Axis::ByzantineFraction => s.byzantine_fraction = v,
        }
        Ok(())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "messageSize" | "message_size" | "message_bytes" => Ok(Axis::MessageSize),
            "publishRate" | "publish_rate" => Ok(Axis::PublishRate),
            "byzantineFraction" | "byzantine_fraction" => Ok(Axis::ByzantineFraction),
            other => Err(format!("unknown sweep axis {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub repetitions: usize,
    pub publish_window: Option<Duration>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<SweepSpec, CliError> {
        let mut axis = None;
        let mut values = None;
        let mut repetitions = 1;
        let mut publish_window = None;
        let mut rest = Vec::new();
        for (line, key, v) in parse_pairs(text)? {
            let bad = |msg: String| CliError::Config(format!("line {line}: {msg}"));
            match key.as_str() {
                "axis" => axis = Some(v.parse::<Axis>().map_err(bad)?),
                "values" => {
                    let xs = v
                        .split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad(format!("values: cannot parse {v:?}")))?;
                    values = Some(xs);
                }
                "repetitions" => {
                    repetitions = v
                        .parse()
                        .map_err(|_| bad(format!("repetitions: cannot parse {v:?}")))?
                }
                "publish_window_s" => {
                    let w: f64 = v
                        .parse()
                        .map_err(|_| bad(format!("publish_window_s: cannot parse {v:?}")))?;
                    if !(w > 0.0 && w.is_finite()) {
                        return Err(bad("publish_window_s must be positive".into()));
                    }
                    publish_window = Some(Duration::from_secs_f64(w));
                }
                _ => rest.push((line, key, v)),
            }
        }
        let spec = SweepSpec {
            base: Scenario::from_pairs(&rest)?,
            axis: axis.ok_or_else(|| CliError::Config("sweep needs an axis".into()))?,
            values: values.ok_or_else(|| CliError::Config("sweep needs values".into()))?,
            repetitions,
            publish_window,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<SweepSpec, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        SweepSpec::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Err(CliError::Config("sweep values are empty".into()));
        }
        if self.repetitions == 0 {
            return Err(CliError::Config("repetitions must be at least 1".into()));
        }
        for s in self.scenarios(self.base.protocol)? {
            s.validate()?;
        }
        Ok(())
    }

    pub fn seed(&self, rep: usize) -> u64 {
        self.base.seed.wrapping_add(rep as u64)
    }

    /// Every run of the grid for `protocol`, value-major.
    pub fn scenarios(&self, protocol: Protocol) -> Result<Vec<Scenario>, CliError> {
        let mut out = Vec::new();
        for &v in &self.values {
            for rep in 0..self.repetitions {
                let mut s = self.base.clone();
                s.protocol = protocol;
                s.seed = self.seed(rep);
                self.axis.apply(&mut s, v)?;
                if let Some(w) = self.publish_window {
                    s.publish_count =
                        (s.publish_rate * w.as_secs_f64() - 1e-9).ceil().max(1.0) as usize;
                }
                out.push(s);
            }
        }
        Ok(out)
    }

    fn label(&self, s: &Scenario) -> String {
        match self.axis {
            Axis::MessageSize => s.message_bytes.to_string(),
            Axis::PublishRate => format!("{}", s.publish_rate),
            Axis::ByzantineFraction => format!("{}", s.byzantine_fraction),
        }
    }
}

/// Worker count for sweeps.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs every scenario on at most `workers` threads. Results come back in
/// input order.
pub fn run_all(scenarios: &[Scenario], workers: usize) -> Result<Vec<RunMetrics>, SimError> {
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, scenarios.len().max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(s) = scenarios.get(i) else { break };
                if tx.send((i, run(s))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut out: Vec<Option<RunMetrics>> = vec![None; scenarios.len()];
    for (i, r) in rx {
        out[i] = Some(r?);
    }
    Ok(out
        .into_iter()
        .map(|r| r.expect("every job reports"))
        .collect())
}

fn runs_for(
    spec: &SweepSpec,
    protocols: &[Protocol],
    workers: usize,
) -> Result<Vec<RunMetrics>, CliError> {
    let mut scenarios = Vec::new();
    for &p in protocols {
        scenarios.extend(spec.scenarios(p)?);
    }
    let mut runs = run_all(&scenarios, workers)?;
    for (r, s) in runs.iter_mut().zip(&scenarios) {
        r.axis = spec.axis.name().to_string();
        r.axis_value = spec.label(s);
    }
    Ok(runs)
}

/// All runs of a sweep for one protocol.
pub fn sweep(
    spec: &SweepSpec,
    protocol: Protocol,
    workers: usize,
) -> Result<Vec<RunMetrics>, CliError> {
    runs_for(spec, &[protocol], workers)
}

/// Both protocols over the same seeds, OptimumP2P first.
pub fn compare(spec: &SweepSpec, workers: usize) -> Result<Vec<RunMetrics>, CliError> {
    runs_for(spec, &[Protocol::Optimum, Protocol::Gossipsub], workers)
}

/// Writes the per-delivery and per-run CSVs into `dir`.
pub fn write_outputs(dir: &Path, runs: &[RunMetrics]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let metrics = dir.join(METRICS_FILE);
    write_deliveries_csv(runs, fs::File::create(&metrics).map_err(io_err(&metrics))?)?;
    let summary = dir.join(SUMMARY_FILE);
    write_summary_csv(runs, fs::File::create(&summary).map_err(io_err(&summary))?)?;
    Ok(())
}

/// One row of the per-group table.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub protocol: String,
    pub axis: String,
    pub axis_value: String,
    pub runs: usize,
    pub mean_quorum_ms: Option<f64>,
    /// Spread of the per-run mean quorum times.
    pub std_quorum_ms: Option<f64>,
    pub delivery_ratio: f64,
    pub mean_node_std_ms: Option<f64>,
    pub redundant_bytes_per_node: f64,
    pub quorum_reached: usize,
}

/// The per-run columns that aggregation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub protocol: String,
    pub axis: String,
    pub axis_value: String,
    pub delivery_ratio: f64,
    pub mean_quorum_ms: Option<f64>,
    pub mean_node_std_ms: Option<f64>,
    pub redundant_bytes_per_node: f64,
    pub quorum_reached: usize,
}

impl From<&RunMetrics> for RunRow {
    fn from(r: &RunMetrics) -> RunRow {
        RunRow {
            protocol: r.protocol.to_string(),
            axis: r.axis.clone(),
            axis_value: r.axis_value.clone(),
            delivery_ratio: r.delivery_ratio(),
            mean_quorum_ms: r.mean_quorum_ms(),
            mean_node_std_ms: r.mean_node_std_ms(),
            redundant_bytes_per_node: r.redundant_bytes_per_node(),
            quorum_reached: r.quorum_reached(),
        }
    }
}

/// Groups rows by (protocol, axis, axis value) in order of first
/// appearance.
pub fn aggregate(rows: &[RunRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(&str, &str, &str)> = Vec::new();
    for r in rows {
        let k = (r.protocol.as_str(), r.axis.as_str(), r.axis_value.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(p, a, v)| {
            let g: Vec<&RunRow> = rows
                .iter()
                .filter(|r| r.protocol == p && r.axis == a && r.axis_value == v)
                .collect();
            let quorum: Vec<f64> = g.iter().filter_map(|r| r.mean_quorum_ms).collect();
            let node_std: Vec<f64> = g.iter().filter_map(|r| r.mean_node_std_ms).collect();
            let n = g.len() as f64;
            Aggregate {
                protocol: p.to_string(),
                axis: a.to_string(),
                axis_value: v.to_string(),
                runs: g.len(),
                mean_quorum_ms: mean_std(&quorum).map(|s| s.0),
                std_quorum_ms: mean_std(&quorum).map(|s| s.1),
                delivery_ratio: g.iter().map(|r| r.delivery_ratio).sum::<f64>() / n,
                mean_node_std_ms: mean_std(&node_std).map(|s| s.0),
                redundant_bytes_per_node: g.iter().map(|r| r.redundant_bytes_per_node).sum::<f64>()
                    / n,
                quorum_reached: g.iter().map(|r| r.quorum_reached).sum(),
            }
        })
        .collect()
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_default()
}

impl Aggregate {
    fn record(&self) -> Vec<String> {
        vec![
            self.protocol.clone(),
            self.axis.clone(),
            self.axis_value.clone(),
            self.runs.to_string(),
            cell(self.mean_quorum_ms),
            cell(self.std_quorum_ms),
            format!("{:.6}", self.delivery_ratio),
            cell(self.mean_node_std_ms),
            format!("{:.1}", self.redundant_bytes_per_node),
            self.quorum_reached.to_string(),
        ]
    }
}

pub fn write_aggregate_csv<W: std::io::Write>(rows: &[Aggregate], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(AGGREGATE_COLUMNS)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `aggregate.csv` into `dir`.
pub fn write_aggregate(dir: &Path, rows: &[Aggregate]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(AGGREGATE_FILE);
    write_aggregate_csv(rows, fs::File::create(&path).map_err(io_err(&path))?)?;
    Ok(())
}

/// Fixed-width text table.
pub fn render_table(rows: &[Aggregate]) -> String {
    let ms = |x: Option<f64>| x.map(|v| format!("{v:.0}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "{:<10} {:<20} {:>12} {:>5} {:>10} {:>9} {:>8} {:>11} {:>12}\n",
        "protocol",
        "axis",
        "value",
        "runs",
        "quorum_ms",
        "std_ms",
        "ratio",
        "node_std_ms",
        "redundant/n"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:<20} {:>12} {:>5} {:>10} {:>9} {:>8.4} {:>11} {:>12.0}",
            r.protocol,
            r.axis,
            r.axis_value,
            r.runs,
            ms(r.mean_quorum_ms),
            ms(r.std_quorum_ms),
            r.delivery_ratio,
            ms(r.mean_node_std_ms),
            r.redundant_bytes_per_node
        );
    }
    out
}

fn parse_opt(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("bad number {s:?}"))
}

/// Reads the per-run rows of one summary CSV.
pub fn read_summary_csv(path: &Path) -> Result<Vec<RunRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{}: missing column {name}", path.display())))
    };
    let (p, a, v) = (col("protocol")?, col("axis")?, col("axis_value")?);
    let (d, q, ns, rb, qr) = (
        col("delivery_ratio")?,
        col("mean_quorum_ms")?,
        col("mean_node_std_ms")?,
        col("redundant_bytes_per_node")?,
        col("quorum_reached")?,
    );
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |e: String| CliError::Config(format!("{}: {e}", path.display()));
        let num = |i: usize| -> Result<f64, CliError> {
            parse_opt(&rec[i])
                .map_err(bad)?
                .ok_or_else(|| bad("empty cell".into()))
        };
        rows.push(RunRow {
            protocol: rec[p].to_string(),
            axis: rec[a].to_string(),
            axis_value: rec[v].to_string(),
            delivery_ratio: num(d)?,
            mean_quorum_ms: parse_opt(&rec[q]).map_err(bad)?,
            mean_node_std_ms: parse_opt(&rec[ns]).map_err(bad)?,
            redundant_bytes_per_node: num(rb)?,
            quorum_reached: num(qr)? as usize,
        });
    }
    Ok(rows)
}

/// Aggregates every summary CSV found in `dir` (sorted by file name).
pub fn summarize(dir: &Path) -> Result<Vec<Aggregate>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().contains("summary"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no summary CSV files",
            dir.display()
        )));
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_summary_csv(f)?);
    }
    Ok(aggregate(&rows))
}
