//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers to run a subset:
//! `cargo test --release -p gg-cli --test acceptance -- 3 7`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use gg_cli::{default_workers, run_all};
use gg_core::crypto::{hash, PeerId};
use gg_core::gf256::Matrix;
use gg_core::netsim::metrics::mean_std;
use gg_core::netsim::{Protocol, RunMetrics, Scenario, Simulation};
use gg_core::rlnc::{self, Shard, SourceMessage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CODEC_TRIALS: usize = 1000;
const CODEC_KS: [usize; 6] = [1, 2, 4, 8, 16, 32];
const CODEC_MAX_BYTES: usize = 1 << 20;
const CODEC_RECODE_DEPTH: usize = 3;
const CODEC_BUDGET: Duration = Duration::from_secs(30);

const RANK_KS: [usize; 4] = [2, 4, 8, 16];
const RANK_SAMPLES: usize = 20_000;
const RANK_TOLERANCE: f64 = 0.005;

const VALIDITY_SEEDS: u64 = 20;

const LATENCY_SEEDS: u64 = 10;
const LATENCY_RATIO: f64 = 0.75;
const LATENCY_BUDGET: Duration = Duration::from_secs(300);

const LOAD_SEEDS: u64 = 10;
const LOAD_RATES: [usize; 3] = [1, 10, 20];
const LOAD_HORIZON_S: u64 = 4;
const VARIANCE_MIN_WINS: usize = 8;

const POLLUTION_SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text).expect("valid scenario")
}

fn runs(scenarios: &[Scenario]) -> Vec<RunMetrics> {
    run_all(scenarios, default_workers()).expect("simulation runs")
}

fn log_uniform_len(rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen_range(0.0..(CODEC_MAX_BYTES as f64).ln());
    (x.exp() as usize).clamp(1, CODEC_MAX_BYTES)
}

fn recode_layer(from: &[Shard], n: usize, depth: usize, rng: &mut ChaCha8Rng) -> Vec<Shard> {
    let refs: Vec<&Shard> = from.iter().collect();
    (0..n)
        .map(|_| rlnc::recode(&refs, PeerId(depth as u64), rng).unwrap())
        .collect()
}

fn codec_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0dec);
    let (mut failures, mut skipped) = (0, 0);
    for trial in 0..CODEC_TRIALS {
        let k = CODEC_KS[trial % CODEC_KS.len()];
        let len = log_uniform_len(&mut rng);
        let value: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let src = SourceMessage::new(value.clone(), k).unwrap();
        let encoded = rlnc::encode_source(&src, k + 2, PeerId(0), &mut rng).unwrap();
        let mut layer = encoded.clone();
        for depth in 1..=CODEC_RECODE_DEPTH {
            layer = recode_layer(&layer, k + 1, depth, &mut rng);
        }
        // a random mix that always leads with a deepest recode
        let mut pool: Vec<&Shard> = encoded.iter().chain(&layer[1..]).collect();
        pool.shuffle(&mut rng);
        pool.insert(0, &layer[0]);
        let pick = rlnc::independent_subset(&pool, k);
        if pick.len() < k {
            skipped += 1;
            continue;
        }
        let set: Vec<&Shard> = pick.iter().map(|&i| pool[i]).collect();
        if rlnc::decode(&set, k, len).ok().as_deref() != Some(&value[..]) {
            failures += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        failures == 0 && skipped < CODEC_TRIALS / 100 && t < CODEC_BUDGET,
        format!(
            "{CODEC_TRIALS} trials, {failures} failures, {skipped} rank-deficient draws, {t:.1?}"
        ),
    )
}

fn full_rank_frequency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a4e);
    let mut pass = true;
    let mut parts = Vec::new();
    for k in RANK_KS {
        let full = (0..RANK_SAMPLES)
            .filter(|_| {
                let rows: Vec<Vec<u8>> = (0..k)
                    .map(|_| (0..k).map(|_| rng.gen()).collect())
                    .collect();
                Matrix::from_rows(rows.iter()).unwrap().rank() == k
            })
            .count();
        let got = full as f64 / RANK_SAMPLES as f64;
        let want: f64 = (1..=k).map(|i| 1.0 - 256f64.powi(-(i as i32))).product();
        pass &= (got - want).abs() <= RANK_TOLERANCE;
        parts.push(format!("k={k} {got:.4} vs {want:.4}"));
    }
    outcome(
        pass,
        format!("{} ({RANK_SAMPLES} samples each)", parts.join(", ")),
    )
}

/// Every correct Optimum node delivered every message, and the value it
/// hands out hashes to the message id.
fn integrity(sim: &Simulation) -> (usize, usize) {
    let (mut ok, mut bad) = (0, 0);
    for v in 0..sim.topology().n as u64 {
        let p = PeerId(v);
        if sim.is_byzantine(p) {
            continue;
        }
        let node = sim.optimum_node(p).expect("optimum run");
        for m in sim.message_ids() {
            match node.deliver(&m) {
                Ok(value) if hash(&value) == m => ok += 1,
                _ => bad += 1,
            }
        }
    }
    (ok, bad)
}

fn validity() -> Outcome {
    let mut failed = Vec::new();
    for seed in 1..=VALIDITY_SEEDS {
        let mut s = scenario(
            "protocol = optimum\nnodes = 128\nmesh_degree = 6\nk = 8\nmessage_bytes = 1048576\n\
             publish_count = 1\nloss_prob = 0\n",
        );
        s.seed = seed;
        let mut sim = Simulation::new(&s).unwrap();
        let m = sim.run();
        let (ok, bad) = integrity(&sim);
        if m.delivery_ratio() < 1.0 || m.counters.wrong_deliveries > 0 || bad > 0 || ok != 128 {
            failed.push(seed);
        }
    }
    outcome(
        failed.is_empty(),
        format!("n=128, {VALIDITY_SEEDS} seeds, failing seeds {failed:?}"),
    )
}

fn paired(base: &Scenario, seeds: std::ops::RangeInclusive<u64>) -> Vec<Scenario> {
    let mut out = Vec::new();
    for protocol in [Protocol::Optimum, Protocol::Gossipsub] {
        for seed in seeds.clone() {
            let mut s = base.clone();
            s.protocol = protocol;
            s.seed = seed;
            out.push(s);
        }
    }
    out
}

fn split(runs: Vec<RunMetrics>) -> (Vec<RunMetrics>, Vec<RunMetrics>) {
    runs.into_iter()
        .partition(|m| m.protocol == Protocol::Optimum)
}

struct LatencyRuns {
    optimum: Vec<RunMetrics>,
    gossipsub: Vec<RunMetrics>,
    elapsed: Duration,
}

fn latency_runs() -> LatencyRuns {
    let start = Instant::now();
    let base = scenario(
        "nodes = 200\nmesh_degree = 6\nk = 8\nmessage_bytes = 5242880\npublish_count = 1\n\
         bandwidth_classes = 0.2:1000:1000, 0.8:50:50\n",
    );
    let (optimum, gossipsub) = split(runs(&paired(&base, 1..=LATENCY_SEEDS)));
    LatencyRuns {
        optimum,
        gossipsub,
        elapsed: start.elapsed(),
    }
}

fn quorum_stats(runs: &[RunMetrics]) -> Option<(f64, f64)> {
    let xs: Option<Vec<f64>> = runs.iter().map(RunMetrics::mean_quorum_ms).collect();
    mean_std(&xs?)
}

fn latency_advantage(r: &LatencyRuns) -> Outcome {
    let (Some((om, os)), Some((gm, gs))) = (quorum_stats(&r.optimum), quorum_stats(&r.gossipsub))
    else {
        return outcome(false, "a run never reached quorum".into());
    };
    outcome(
        om <= LATENCY_RATIO * gm && os <= gs && r.elapsed < LATENCY_BUDGET,
        format!(
            "optimum {om:.0} ms (std {os:.0}) vs gossipsub {gm:.0} ms (std {gs:.0}), ratio {:.2}, {:.1?}",
            om / gm,
            r.elapsed
        ),
    )
}

fn duplication(r: &LatencyRuns) -> Outcome {
    let mut wins = 0;
    let mut worst: f64 = 0.0;
    for (o, g) in r.optimum.iter().zip(&r.gossipsub) {
        assert_eq!(o.seed, g.seed);
        let (a, b) = (o.redundant_bytes_per_node(), g.redundant_bytes_per_node());
        wins += usize::from(a < b);
        worst = worst.max(a / b);
    }
    outcome(
        wins == r.optimum.len(),
        format!(
            "optimum below gossipsub in {wins}/{} runs, worst ratio {worst:.2}",
            r.optimum.len()
        ),
    )
}

fn load_runs() -> BTreeMap<usize, (Vec<RunMetrics>, Vec<RunMetrics>)> {
    let mut out = BTreeMap::new();
    for rate in LOAD_RATES {
        let mut base = scenario("nodes = 100\nmesh_degree = 6\nk = 8\nmessage_bytes = 1048576\n");
        base.publish_rate = rate as f64;
        base.publish_count = rate;
        base.horizon = Duration::from_secs(LOAD_HORIZON_S);
        out.insert(rate, split(runs(&paired(&base, 1..=LOAD_SEEDS))));
    }
    out
}

fn mean_ratio(runs: &[RunMetrics]) -> f64 {
    runs.iter().map(RunMetrics::delivery_ratio).sum::<f64>() / runs.len() as f64
}

fn delivery_under_load(load: &BTreeMap<usize, (Vec<RunMetrics>, Vec<RunMetrics>)>) -> Outcome {
    let top = *load.keys().max().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (rate, (o, g)) in load {
        let (a, b) = (mean_ratio(o), mean_ratio(g));
        pass &= a >= b && (*rate != top || a > b);
        parts.push(format!("{rate}/s {a:.3} vs {b:.3}"));
    }
    outcome(pass, format!("optimum vs gossipsub: {}", parts.join(", ")))
}

fn variance(load: &BTreeMap<usize, (Vec<RunMetrics>, Vec<RunMetrics>)>) -> Outcome {
    let (rate, (o, g)) = load.iter().next_back().unwrap();
    let wins = o
        .iter()
        .zip(g)
        .filter(
            |(a, b)| match (a.mean_node_std_ms(), b.mean_node_std_ms()) {
                (Some(x), Some(y)) => x < y,
                _ => false,
            },
        )
        .count();
    outcome(
        wins >= VARIANCE_MIN_WINS,
        format!(
            "per-node delivery std lower at {rate}/s in {wins}/{} seeds",
            o.len()
        ),
    )
}

struct PollutionCheck {
    delivered: bool,
    flagged: bool,
    recovered: bool,
    false_accusations: usize,
}

fn pollution_run(seed: u64) -> PollutionCheck {
    let mut s = scenario(
        "protocol = optimum\nnodes = 64\nmesh_degree = 6\nk = 8\nmessage_bytes = 1048576\n\
         publish_count = 1\nbyzantine_fraction = 0.015625\npollution_prob = 1\n",
    );
    s.seed = seed;
    let mut sim = Simulation::new(&s).unwrap();
    let m = sim.run();
    let byz = sim.byzantine();
    let (_, bad) = integrity(&sim);
    let mut check = PollutionCheck {
        delivered: byz.len() == 1
            && bad == 0
            && m.delivery_ratio() == 1.0
            && m.counters.wrong_deliveries == 0,
        flagged: true,
        recovered: true,
        false_accusations: 0,
    };
    for v in 0..s.nodes as u64 {
        let p = PeerId(v);
        if sim.is_byzantine(p) {
            continue;
        }
        let node = sim.optimum_node(p).unwrap();
        check.false_accusations += node
            .mal_log()
            .iter()
            .filter(|(_, accused, _)| !sim.is_byzantine(*accused))
            .count();
        for (_, st) in node.messages() {
            check.recovered &= !st.is_polluted;
            check.recovered &= st.qua_peers.iter().all(|q| sim.is_byzantine(*q));
            for b in &byz {
                if node.mesh().contains(b) {
                    check.flagged &= st.mal_peers.contains(b);
                }
            }
        }
    }
    check
}

fn pollution() -> Vec<PollutionCheck> {
    (1..=POLLUTION_SEEDS).map(pollution_run).collect()
}

fn pollution_recovery(checks: &[PollutionCheck]) -> Outcome {
    let bad = |f: fn(&PollutionCheck) -> bool| {
        checks
            .iter()
            .zip(1..)
            .filter(|(c, _)| !f(c))
            .map(|(_, s)| s)
            .collect::<Vec<u64>>()
    };
    let (a, b, c) = (
        bad(|c| c.delivered),
        bad(|c| c.flagged),
        bad(|c| c.recovered),
    );
    outcome(
        a.is_empty() && b.is_empty() && c.is_empty(),
        format!(
            "{POLLUTION_SEEDS} seeds; failing seeds: delivery {a:?}, polluter flagged {b:?}, recovery {c:?}"
        ),
    )
}

fn accusation_soundness(checks: &[PollutionCheck]) -> Outcome {
    let total: usize = checks.iter().map(|c| c.false_accusations).sum();
    outcome(
        total == 0,
        format!(
            "{total} accusations of correct peers over {} runs",
            checks.len()
        ),
    )
}

fn gg(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_gg"))
        .args(args)
        .env_remove("GG_SEED")
        .status()
        .is_ok_and(|s| s.success())
}

fn digests(summary: &Path) -> BTreeMap<(String, String), Vec<String>> {
    let mut r = csv::Reader::from_path(summary).unwrap();
    let head = r.headers().unwrap().clone();
    let col = |name: &str| head.iter().position(|h| h == name).unwrap();
    let (v, s, d) = (col("axis_value"), col("seed"), col("topology_digest"));
    let mut out: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        out.entry((rec[v].into(), rec[s].into()))
            .or_default()
            .push(rec[d].into());
    }
    out
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("gg-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    fs::write(
        &cfg,
        "nodes = 60\nmesh_degree = 6\nk = 8\nmessage_bytes = 262144\npublish_count = 3\n\
         publish_rate = 5\nbyzantine_fraction = 0.02\nhorizon_s = 8\n",
    )
    .unwrap();
    let p = |x: &Path| x.to_str().unwrap().to_owned();
    let mut identical = true;
    for protocol in ["optimum", "gossipsub"] {
        let (a, b) = (
            dir.join(format!("{protocol}-a")),
            dir.join(format!("{protocol}-b")),
        );
        for out in [&a, &b] {
            identical &= gg(&[
                "run",
                &p(&cfg),
                "--protocol",
                protocol,
                "--out",
                &p(out),
                "-q",
            ]);
        }
        for f in ["metrics.csv", "summary.csv"] {
            identical &= fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok();
        }
    }
    let spec = dir.join("sweep.cfg");
    fs::write(
        &spec,
        "nodes = 40\nmesh_degree = 6\nk = 8\nmessage_bytes = 65536\npublish_count = 1\nhorizon_s = 5\n\
         axis = byzantine_fraction\nvalues = 0, 0.05\nrepetitions = 3\n",
    )
    .unwrap();
    let out = dir.join("compare");
    let ran = gg(&["compare", &p(&spec), "--out", &p(&out), "-q"]);
    let pairs = if ran {
        digests(&out.join("summary.csv"))
    } else {
        BTreeMap::new()
    };
    let paired = pairs.len() == 6 && pairs.values().all(|d| d.len() == 2 && d[0] == d[1]);
    let _ = fs::remove_dir_all(&dir);
    outcome(
        identical && paired,
        format!(
            "repeated runs identical: {identical}; {} compare pairs share topology: {paired}",
            pairs.len()
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let on = |i: u32| wanted.is_empty() || wanted.contains(&i);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |i: u32, name: &'static str, o: Outcome| {
        println!(
            "[{i:>2}] {:<4} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((i, name, o));
    };

    if on(1) {
        report(1, "codec round-trip", codec_round_trip());
    }
    if on(2) {
        report(2, "random matrix invertibility", full_rank_frequency());
    }
    if on(3) {
        report(3, "validity and integrity", validity());
    }
    if on(4) || on(10) {
        let r = latency_runs();
        if on(4) {
            report(4, "latency advantage", latency_advantage(&r));
        }
        if on(10) {
            report(10, "duplication reduction", duplication(&r));
        }
    }
    if on(5) || on(6) {
        let load = load_runs();
        if on(5) {
            report(5, "delivery under load", delivery_under_load(&load));
        }
        if on(6) {
            report(6, "delivery time variance", variance(&load));
        }
    }
    if on(7) || on(8) {
        let checks = pollution();
        if on(7) {
            report(7, "pollution recovery", pollution_recovery(&checks));
        }
        if on(8) {
            report(8, "accusation soundness", accusation_soundness(&checks));
        }
    }
    if on(9) {
        report(9, "determinism", determinism());
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
