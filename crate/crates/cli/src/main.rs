//! `twinsim`: batch front end for the simulator and the models.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use twin_mac::experiments::{self, BlockingSpec, OracleSpec, Provenance, Table};
use twin_mac::scenario::Scenario;
use twin_mac::Error;

#[derive(Parser, Debug)]
#[command(name = "twinsim", version, about = "Flow-aware TWIN MAC simulator and performance models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep an isolated destination tree (delay, throughput, flow counts).
    SingleTree(SweepArgs),
    /// Sweep a full network with transmitter blocking.
    Network(SweepArgs),
    /// Capacity lost to blocking against network size.
    Blocking(BlockingArgs),
    /// Model curves on a scenario's sweep grid, without simulating.
    Analytics(AnalyticsArgs),
    /// Long runs and Lyapunov drift of the polling model.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Output directory.
    #[arg(long, env = "TWINSIM_OUT")]
    out: Option<PathBuf>,
    /// Base seed; overrides the scenario file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Simulated seconds per run; overrides the scenario file.
    #[arg(long)]
    horizon: Option<f64>,
    /// Seeds per sweep point; overrides the scenario file.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Args, Debug)]
struct BlockingArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 2)]
    min_nodes: usize,
    #[arg(long, default_value_t = 50)]
    max_nodes: usize,
    /// Transmitter counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
    transmitters: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct AnalyticsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the network defaults when no scenario file is given.
    #[arg(long)]
    network: bool,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Loads to run, comma separated.
    #[arg(long = "rho", value_delimiter = ',', default_values_t = [0.5, 0.8, 0.9, 1.05, 1.2])]
    loads: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    sources: usize,
    /// Overhead per source per cycle, time units.
    #[arg(long, default_value_t = 1)]
    overheads: u32,
    /// Mean flow size, time units.
    #[arg(long, default_value_t = 10.0)]
    mean_size: f64,
    /// Run length, time units.
    #[arg(long, default_value_t = 1_000_000)]
    time_units: u64,
    /// Keep every n-th cycle in the trace.
    #[arg(long, default_value_t = 10)]
    record_every: u64,
    #[arg(long, default_value_t = 10_000)]
    drift_samples: usize,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn load_scenario(path: Option<&Path>, fallback: Scenario) -> anyhow::Result<Scenario> {
    match path {
        Some(p) => Scenario::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(fallback),
    }
}

fn out_dir(common: &Common, scenario: Option<&Scenario>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| scenario.and_then(|s| s.run.out.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn emit(dir: &Path, tables: &[Table], prov: &Provenance) -> anyhow::Result<()> {
    for path in experiments::write_tables(dir, tables, prov)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn install_pool(jobs: usize) {
    // a global pool only matters for the few parallel loops outside sweeps
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
}

fn sweep(args: &SweepArgs, network: bool) -> anyhow::Result<()> {
    let fallback = if network { Scenario::network() } else { Scenario::single_tree() };
    let mut scenario = load_scenario(args.config.as_deref(), fallback)?;
    if let Some(seed) = args.common.seed {
        scenario.run.seed = seed;
    }
    if let Some(h) = args.horizon {
        scenario.run.horizon_s = h;
    }
    if let Some(n) = args.seeds {
        scenario.run.seeds = n;
    }
    scenario.validate()?;
    let (command, tables) = if network {
        ("network", experiments::cmd_network(&scenario, args.jobs)?)
    } else {
        ("single-tree", experiments::cmd_single_tree(&scenario, args.jobs)?)
    };
    emit(&out_dir(&args.common, Some(&scenario)), &tables, &Provenance::of_scenario(command, &scenario))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::SingleTree(a) => sweep(&a, false),
        Command::Network(a) => sweep(&a, true),
        Command::Blocking(a) => {
            install_pool(a.jobs);
            let spec = BlockingSpec {
                min_nodes: a.min_nodes,
                max_nodes: a.max_nodes,
                transmitters: a.transmitters.clone(),
                limit: true,
            };
            let tables = experiments::cmd_blocking(&spec)?;
            let prov = Provenance::of_params("blocking", &spec, a.common.seed.unwrap_or(0));
            emit(&out_dir(&a.common, None), &tables, &prov)
        }
        Command::Analytics(a) => {
            install_pool(a.jobs);
            let fallback = if a.network { Scenario::network() } else { Scenario::single_tree() };
            let mut scenario = load_scenario(a.config.as_deref(), fallback)?;
            if let Some(seed) = a.common.seed {
                scenario.run.seed = seed;
            }
            let tables = experiments::cmd_analytics(&scenario)?;
            emit(&out_dir(&a.common, Some(&scenario)), &tables, &Provenance::of_scenario("analytics", &scenario))
        }
        Command::Oracle(a) => {
            install_pool(a.jobs);
            let spec = OracleSpec {
                loads: a.loads.clone(),
                sources: a.sources,
                overhead: a.overheads,
                mean_size: a.mean_size,
                time_units: a.time_units,
                record_every: a.record_every,
                drift_samples: a.drift_samples,
                seed: a.common.seed.unwrap_or(1),
                ..OracleSpec::default()
            };
            let (tables, json) = experiments::cmd_oracle(&spec)?;
            let prov = Provenance::of_params("oracle", &spec, spec.seed);
            let dir = out_dir(&a.common, None);
            emit(&dir, &tables, &prov)?;
            let path = dir.join("oracle.json");
            std::fs::write(&path, json + "\n")?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

/// 2 for bad input, 3 for a protocol invariant violation, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Invariant { .. }) => 3,
        Some(Error::Usage(_) | Error::Config(_) | Error::Toml(_) | Error::InvalidParameter(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("twinsim: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
