use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gg_cli::{
    aggregate, compare, default_workers, render_table, summarize, sweep, write_aggregate,
    write_outputs, Aggregate, CliError, RunRow, SweepSpec,
};
use gg_core::netsim::{run, Protocol, Scenario};

#[derive(Parser)]
#[command(name = "gg", version, about = "Coded gossip simulator and A/B harness")]
struct Args {
    /// Master seed; beats GG_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Protocol for `run` and `sweep`.
    #[arg(long, global = true)]
    protocol: Option<Protocol>,
    /// No text on stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Worker threads for sweeps.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One run: metrics.csv and summary.csv.
    Run { scenario: PathBuf },
    /// A parameter grid for one protocol.
    Sweep { spec: PathBuf },
    /// Both protocols over the same seeds, with a side-by-side table.
    Compare { spec: PathBuf },
    /// Aggregates the summary CSVs in a directory.
    Summarize { dir: PathBuf },
}

fn seed_override(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("GG_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("GG_SEED: cannot parse {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<SweepSpec, CliError> {
    let mut spec = SweepSpec::from_file(path)?;
    if let Some(s) = seed {
        spec.base.seed = s;
    }
    Ok(spec)
}

fn emit_table(args: &Args, agg: &[Aggregate]) -> Result<(), CliError> {
    write_aggregate(&args.out, agg)?;
    if !args.quiet {
        print!("{}", render_table(agg));
    }
    Ok(())
}

fn main_inner(args: &Args) -> Result<(), CliError> {
    let seed = seed_override(args.seed)?;
    let workers = args.jobs.unwrap_or_else(default_workers);
    match &args.cmd {
        Cmd::Run { scenario } => {
            let mut s = Scenario::from_file(scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(p) = args.protocol {
                s.protocol = p;
            }
            let m = run(&s)?;
            write_outputs(&args.out, std::slice::from_ref(&m))?;
            if !args.quiet {
                println!("{}", m.headline());
            }
        }
        Cmd::Sweep { spec } => {
            let spec = load_spec(spec, seed)?;
            let runs = sweep(&spec, args.protocol.unwrap_or(spec.base.protocol), workers)?;
            write_outputs(&args.out, &runs)?;
            emit_table(
                args,
                &aggregate(&runs.iter().map(RunRow::from).collect::<Vec<_>>()),
            )?;
        }
        Cmd::Compare { spec } => {
            let spec = load_spec(spec, seed)?;
            let runs = compare(&spec, workers)?;
            write_outputs(&args.out, &runs)?;
            emit_table(
                args,
                &aggregate(&runs.iter().map(RunRow::from).collect::<Vec<_>>()),
            )?;
        }
        Cmd::Summarize { dir } => {
            emit_table(args, &summarize(dir)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
