//! Figure-oriented sweeps and their CSV output.
//!
//! Every command returns [`Table`]s; nothing touches the file system until
//! [`write_tables`] is called. Each file opens with `#` comment lines holding
//! the command, the scenario hash, the seed and a one-line config echo, then
//! a header row and comma-separated records. Nothing time- or
//! host-dependent is written, so a rerun produces the same bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{self, Overlap};
use crate::error::{Error, Result};
use crate::oracle::{self, OracleRun, OracleTraffic};
use crate::scenario::Scenario;
use crate::sim::{run, Estimate, MetricsReport, SimConfig};
use crate::topology::Topology;
use crate::traffic::substream;

/// Load of the flow-count histograms.
pub const HISTOGRAM_LOAD: f64 = 0.9;
/// Quanta of the flow-count histograms, bytes.
pub const HISTOGRAM_QUANTA: [u64; 2] = [1000, 10_000];

/// One CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Parsed numeric column; blanks become `None`.
    pub fn values(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column(name)?;
        Some(self.rows.iter().map(|r| r[i].parse().ok()).collect())
    }

    /// CSV body without the comment preamble.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// What produced a set of tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub command: String,
    pub hash: String,
    pub seed: u64,
    pub echo: String,
}

impl Provenance {
    pub fn of_scenario(command: &str, scenario: &Scenario) -> Self {
        Provenance { command: command.into(), hash: scenario.hash(), seed: scenario.run.seed, echo: scenario.echo() }
    }

    /// For commands driven by a plain parameter struct.
    pub fn of_params<T: Serialize>(command: &str, params: &T, seed: u64) -> Self {
        let echo = serde_json::to_string(params).expect("parameters serialise");
        Provenance { command: command.into(), hash: short_hash(&echo), seed, echo }
    }

    fn preamble(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# twinsim {}", self.command);
        let _ = writeln!(s, "# scenario_hash: {}", self.hash);
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# config: {}", self.echo);
        s
    }
}

fn short_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Full file contents: preamble then CSV.
pub fn render(table: &Table, prov: &Provenance) -> Result<String> {
    Ok(prov.preamble() + &table.to_csv()?)
}

/// Writes every table under `dir`, creating it if needed.
pub fn write_tables(dir: &Path, tables: &[Table], prov: &Provenance) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    tables
        .iter()
        .map(|t| {
            let path = dir.join(&t.name);
            std::fs::write(&path, render(t, prov)?)?;
            Ok(path)
        })
        .collect()
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Results of all seeds at one sweep point.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub load: f64,
    pub mix: f64,
    pub transmitters: usize,
    pub config: SimConfig,
    pub runs: Vec<MetricsReport>,
}

impl SweepPoint {
    /// Mean over seeds, skipping seeds without a value.
    pub fn mean(&self, f: impl Fn(&MetricsReport) -> Option<f64>) -> Option<f64> {
        let xs: Vec<f64> = self.runs.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// 95% half-width over seeds; `None` with fewer than two values.
    pub fn ci95(&self, f: impl Fn(&MetricsReport) -> Option<f64>) -> Option<f64> {
        let xs: Vec<f64> = self.runs.iter().filter_map(f).collect();
        Estimate::from_samples(&xs).map(|e| e.half_width)
    }

    fn offered(&self) -> f64 {
        self.mean(|r| Some(r.offered_load)).unwrap_or(0.0)
    }
}

/// Runs `configs[i]` under `seeds` consecutive seeds each on a pool of
/// `jobs` threads (0 means one per core). Order of the result follows the
/// input; parallelism never changes a number.
pub fn run_batch(configs: &[SimConfig], seeds: usize, jobs: usize) -> Result<Vec<Vec<MetricsReport>>> {
    if seeds == 0 {
        return Err(Error::Usage("at least one seed per point".into()));
    }
    let work: Vec<SimConfig> = configs
        .iter()
        .flat_map(|c| {
            (0..seeds as u64).map(move |k| {
                let mut c = c.clone();
                c.seed = c.seed.wrapping_add(k);
                c
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let flat = pool.install(|| work.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    let mut it = flat.into_iter();
    Ok(configs.iter().map(|_| it.by_ref().take(seeds).collect()).collect())
}

/// Runs the scenario's load × mix × transmitter grid.
pub fn sweep(scenario: &Scenario, jobs: usize) -> Result<Vec<SweepPoint>> {
    scenario.validate()?;
    if scenario.sweep.loads.is_empty() {
        return Err(Error::Usage("the sweep has no load points".into()));
    }
    if scenario.sweep.mixes.is_empty() {
        return Err(Error::Usage("the sweep has no traffic mixes".into()));
    }
    let mut points = Vec::new();
    for t in scenario.transmitter_axis() {
        for &mix in &scenario.sweep.mixes {
            for &load in &scenario.sweep.loads {
                let config = scenario.sim_config(load, mix, scenario.run.seed, t)?;
                points.push(SweepPoint { load, mix, transmitters: t, config, runs: Vec::new() });
            }
        }
    }
    let configs: Vec<SimConfig> = points.iter().map(|p| p.config.clone()).collect();
    let results = run_batch(&configs, scenario.run.seeds, jobs)?;
    for (p, runs) in points.iter_mut().zip(results) {
        p.runs = runs;
    }
    Ok(points)
}

fn capacity(c: &SimConfig) -> f64 {
    c.rate.bits_per_sec() as f64
}

/// Throughput predicted for backlogged flows on an isolated tree, Mb/s.
/// Loads at or beyond capacity give a blank.
fn tree_throughput(c: &SimConfig, rho_b: f64, rho_nb: f64) -> Option<f64> {
    analytics::flow_throughput_mixed(rho_b, rho_nb, c.overhead_ratio(), capacity(c)).ok().map(|g| g / 1e6)
}

/// `(ρ*, B*)` of the network blocking model for `c`.
fn network_limit(c: &SimConfig, t: usize) -> Result<(f64, f64)> {
    analytics::max_load(t, Overlap::Binomial { nodes: c.topology.node_count() })
}

/// Offset `Δ_O` of the run in milliseconds.
fn offset_ms(p: &SweepPoint) -> Option<f64> {
    p.mean(|r| Some(r.mean_offset_us / 1e3))
}

fn delay_table(name: &str, points: &[SweepPoint], network: bool) -> Result<Table> {
    let mut cols = vec!["load", "mix"];
    if network {
        cols.push("transmitters");
    }
    cols.extend([
        "offered_load",
        "mean_nb_delay_ms",
        "ci95_nb_delay_ms",
        "max_nb_delay_ms",
        "delay_samples",
        "offset_ms",
        "blocked_fraction",
        "ci95_blocked_fraction",
    ]);
    if network {
        cols.push("rho_star");
    }
    cols.push("low_confidence");
    let mut t = Table::new(name, &cols);
    for p in points.iter().filter(|p| p.mix < 1.0) {
        let mut row = vec![num(p.load), num(p.mix)];
        if network {
            row.push(p.transmitters.to_string());
        }
        row.extend([
            num(p.offered()),
            opt(p.mean(|r| r.mean_nb_delay_ms)),
            opt(p.ci95(|r| r.mean_nb_delay_ms)),
            opt(p.runs.iter().filter_map(|r| r.max_nb_delay_ms).reduce(f64::max)),
            p.runs.iter().map(|r| r.nb_delay_samples).sum::<u64>().to_string(),
            opt(offset_ms(p)),
            opt(p.mean(|r| Some(r.blocked_fraction))),
            opt(p.ci95(|r| Some(r.blocked_fraction))),
        ]);
        if network {
            row.push(num(network_limit(&p.config, p.transmitters)?.0));
        }
        row.push(p.runs.iter().any(|r| r.low_confidence).to_string());
        t.push(row);
    }
    Ok(t)
}

/// Tables for Figs. 4, 5 and 7 of a single-tree sweep.
pub fn single_tree_tables(points: &[SweepPoint], histograms: &[SweepPoint]) -> Result<Vec<Table>> {
    let mut out = vec![delay_table("fig4_delay.csv", points, false)?];

    let mut thr = Table::new(
        "fig5_throughput.csv",
        &[
            "load",
            "mix",
            "offered_load",
            "mean_throughput_mbps",
            "ci95_throughput_mbps",
            "flows_completed",
            "model_mbps",
            "model_at_offered_mbps",
            "effective_load",
            "mean_cycle_us",
            "model_cycle_us",
        ],
    );
    for p in points.iter().filter(|p| p.mix > 0.0) {
        let c = &p.config;
        let (rb, rn) = (p.load * p.mix, p.load * (1.0 - p.mix));
        let ob = p.mean(|r| Some(r.offered_backlogged)).unwrap_or(0.0);
        let on = p.mean(|r| Some(r.offered_nonbacklogged)).unwrap_or(0.0);
        let s = c.topology.sources_per_tree();
        let cycle = analytics::expected_cycle_time(s, c.delta_r, p.load).ok().map(|t| t.as_micros_f64());
        thr.push(vec![
            num(p.load),
            num(p.mix),
            num(p.offered()),
            opt(p.mean(|r| r.mean_throughput_mbps)),
            opt(p.ci95(|r| r.mean_throughput_mbps)),
            p.runs.iter().map(|r| r.flows_completed).sum::<u64>().to_string(),
            opt(tree_throughput(c, rb, rn)),
            opt(tree_throughput(c, ob, on)),
            num(analytics::reduced_load(ob, on, 1.0).0),
            opt(p.mean(|r| r.mean_cycle_us)),
            opt(cycle),
        ]);
    }
    out.push(thr);
    out.push(histogram_table(histograms)?);
    Ok(out)
}

/// Simulated per-pair flow-count law next to its stationary counterpart
/// at the configured and at the measured load.
pub fn histogram_table(points: &[SweepPoint]) -> Result<Table> {
    let mut t = Table::new(
        "fig7_hist.csv",
        &["load", "quantum_bytes", "x", "offered_load", "flows", "simulated", "model", "model_at_offered"],
    );
    for p in points {
        let c = &p.config;
        let s = c.topology.sources_per_tree() as f64;
        let x = c.overhead_ratio();
        let offered = p.mean(|r| Some(r.offered_backlogged)).unwrap_or(0.0);
        let sim = pooled_distribution(&p.runs);
        let model = analytics::marginal_distribution(p.load / s, p.load, x)?;
        let at_offered = analytics::marginal_distribution(offered / s, offered, x).ok();
        let len = sim.len().max(model.len());
        for n in 0..len {
            t.push(vec![
                num(p.load),
                c.quantum_bytes.to_string(),
                num(x),
                num(offered),
                n.to_string(),
                num(sim.get(n).copied().unwrap_or(0.0)),
                num(model.get(n).copied().unwrap_or(0.0)),
                opt(at_offered.as_ref().map(|m| m.get(n).copied().unwrap_or(0.0))),
            ]);
        }
    }
    Ok(t)
}

/// Average of the per-seed time-weighted laws.
pub fn pooled_distribution(runs: &[MetricsReport]) -> Vec<f64> {
    let len = runs.iter().map(|r| r.flow_count_distribution.len()).max().unwrap_or(0);
    let mut acc = vec![0.0; len];
    for r in runs {
        for (a, v) in acc.iter_mut().zip(&r.flow_count_distribution) {
            *a += v / runs.len() as f64;
        }
    }
    acc
}

/// Total-variation distance between two laws on `0, 1, …`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    0.5 * (0..len).map(|n| (a.get(n).unwrap_or(&0.0) - b.get(n).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Runs the all-backlogged histogram points of Fig. 7.
pub fn histogram_points(scenario: &Scenario, jobs: usize) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for q in HISTOGRAM_QUANTA {
        let mut config = scenario.sim_config(HISTOGRAM_LOAD, 1.0, scenario.run.seed, scenario.topology.transmitters)?;
        config.quantum_bytes = q;
        points.push(SweepPoint { load: HISTOGRAM_LOAD, mix: 1.0, transmitters: config.transmitters, config, runs: Vec::new() });
    }
    let configs: Vec<SimConfig> = points.iter().map(|p| p.config.clone()).collect();
    for (p, runs) in points.iter_mut().zip(run_batch(&configs, scenario.run.seeds, jobs)?) {
        p.runs = runs;
    }
    Ok(points)
}

fn require(scenario: &Scenario, network: bool) -> Result<()> {
    let is_network = matches!(scenario.topology()?, Topology::Network { .. });
    if is_network != network {
        let want = if network { "network" } else { "single_tree" };
        return Err(Error::Usage(format!("this command needs topology.kind = \"{want}\"")));
    }
    Ok(())
}

/// `single-tree`: sweep plus the two histogram runs.
pub fn cmd_single_tree(scenario: &Scenario, jobs: usize) -> Result<Vec<Table>> {
    require(scenario, false)?;
    let points = sweep(scenario, jobs)?;
    let hist = histogram_points(scenario, jobs)?;
    single_tree_tables(&points, &hist)
}

/// Tables for Figs. 8 and 9 of a network sweep.
pub fn network_tables(points: &[SweepPoint]) -> Result<Vec<Table>> {
    let mut out = vec![delay_table("fig8_delay.csv", points, true)?];
    let mut thr = Table::new(
        "fig9_throughput.csv",
        &[
            "load",
            "mix",
            "transmitters",
            "offered_load",
            "mean_throughput_mbps",
            "ci95_throughput_mbps",
            "flows_completed",
            "blocked_fraction",
            "ci95_blocked_fraction",
            "rho_star",
            "model_mbps",
            "model_at_offered_mbps",
        ],
    );
    for p in points.iter().filter(|p| p.mix > 0.0) {
        let c = &p.config;
        let (rho_star, b) = network_limit(c, p.transmitters)?;
        let x = c.overhead_ratio();
        let model = |rho: f64| analytics::throughput_with_blocking(rho, x, capacity(c), b).ok().map(|g| g / 1e6);
        thr.push(vec![
            num(p.load),
            num(p.mix),
            p.transmitters.to_string(),
            num(p.offered()),
            opt(p.mean(|r| r.mean_throughput_mbps)),
            opt(p.ci95(|r| r.mean_throughput_mbps)),
            p.runs.iter().map(|r| r.flows_completed).sum::<u64>().to_string(),
            opt(p.mean(|r| Some(r.blocked_fraction))),
            opt(p.ci95(|r| Some(r.blocked_fraction))),
            num(rho_star),
            opt(model(p.load)),
            opt(model(p.offered())),
        ]);
    }
    out.push(thr);
    Ok(out)
}

/// `network`: sweep of a full network.
pub fn cmd_network(scenario: &Scenario, jobs: usize) -> Result<Vec<Table>> {
    require(scenario, true)?;
    network_tables(&sweep(scenario, jobs)?)
}

/// Axes of the blocking curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockingSpec {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub transmitters: Vec<usize>,
    /// Adds the `R → ∞` row for each transmitter count.
    pub limit: bool,
}

impl Default for BlockingSpec {
    fn default() -> Self {
        BlockingSpec { min_nodes: 2, max_nodes: 50, transmitters: vec![1, 2, 3, 4], limit: true }
    }
}

/// `blocking`: capacity lost at the maximum load against network size.
pub fn cmd_blocking(spec: &BlockingSpec) -> Result<Vec<Table>> {
    if spec.min_nodes < 2 || spec.max_nodes < spec.min_nodes {
        return Err(Error::Usage("node range must satisfy 2 ≤ min ≤ max".into()));
    }
    if spec.transmitters.is_empty() || spec.transmitters.contains(&0) {
        return Err(Error::Usage("transmitter counts must be positive".into()));
    }
    let mut t = Table::new("fig6_blocking.csv", &["nodes", "transmitters", "rho_star", "blocked_fraction"]);
    for &tx in &spec.transmitters {
        for r in spec.min_nodes..=spec.max_nodes {
            let (rho, b) = analytics::max_load(tx, Overlap::Binomial { nodes: r })?;
            t.push(vec![r.to_string(), tx.to_string(), num(rho), num(b)]);
        }
        if spec.limit {
            let (rho, b) = analytics::max_load(tx, Overlap::Poisson)?;
            t.push(vec!["inf".into(), tx.to_string(), num(rho), num(b)]);
        }
    }
    Ok(vec![t])
}

/// `analytics`: model curves on the scenario's sweep grid, no simulation.
pub fn cmd_analytics(scenario: &Scenario) -> Result<Vec<Table>> {
    scenario.validate()?;
    if scenario.sweep.loads.is_empty() {
        return Err(Error::Usage("the sweep has no load points".into()));
    }
    let network = matches!(scenario.topology()?, Topology::Network { .. });
    let mut t = Table::new(
        "analytics.csv",
        &[
            "load",
            "mix",
            "transmitters",
            "x",
            "model_mbps",
            "mean_flows_per_source",
            "model_cycle_us",
            "rho_star",
            "blocked_fraction",
            "grant_intensity",
            "model_blocking_mbps",
        ],
    );
    for tx in scenario.transmitter_axis() {
        for &mix in &scenario.sweep.mixes {
            for &load in &scenario.sweep.loads {
                let c = scenario.sim_config(load, mix, scenario.run.seed, tx)?;
                let s = c.topology.sources_per_tree();
                let x = c.overhead_ratio();
                let (rb, rn) = (load * mix, load * (1.0 - mix));
                let (eff, _) = analytics::reduced_load(rb, rn, 1.0);
                let flows = (mix > 0.0 && rn < 1.0)
                    .then(|| analytics::mean_source_flows(eff / s as f64, eff, x).ok())
                    .flatten();
                let cycle = analytics::expected_cycle_time(s, c.delta_r, load).ok().map(|t| t.as_micros_f64());
                let (star, b, intensity, blocked_thr) = if network {
                    let (star, b) = network_limit(&c, tx)?;
                    let law = Overlap::Binomial { nodes: c.topology.node_count() };
                    let thr = analytics::throughput_with_blocking(load, x, capacity(&c), b).ok().map(|g| g / 1e6);
                    (Some(star), Some(b), analytics::grant_intensity(load, tx, law), thr)
                } else {
                    (None, None, None, None)
                };
                t.push(vec![
                    num(load),
                    num(mix),
                    tx.to_string(),
                    num(x),
                    opt(if mix > 0.0 { tree_throughput(&c, rb, rn) } else { None }),
                    opt(flows),
                    opt(cycle),
                    opt(star),
                    opt(b),
                    opt(intensity),
                    opt(blocked_thr),
                ]);
            }
        }
    }
    Ok(vec![t])
}

/// Parameters of the `oracle` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub loads: Vec<f64>,
    pub sources: usize,
    /// Overhead per source per cycle, time units.
    pub overhead: u32,
    /// Mean flow size, time units.
    pub mean_size: f64,
    /// Length of each run, time units.
    pub time_units: u64,
    pub record_every: u64,
    /// Flows per source in the large probe states.
    pub probe_flows: usize,
    pub drift_samples: usize,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            loads: vec![0.5, 0.8, 0.9, 1.05, 1.2],
            sources: 10,
            overhead: 1,
            mean_size: 10.0,
            time_units: 1_000_000,
            record_every: 10,
            probe_flows: 50,
            drift_samples: 10_000,
            seed: 1,
        }
    }
}

/// Drift of the Lyapunov function from large states at one load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub alpha: f64,
    pub mean: f64,
    pub half_width: f64,
    pub negative: bool,
    pub positive: bool,
}

/// JSON summary of one oracle load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub rho: f64,
    pub cycles: u64,
    pub time: u64,
    pub mean_flows: f64,
    pub mean_flows_first_half: f64,
    pub mean_flows_second_half: f64,
    pub growth_rate: f64,
    pub mean_cycle: f64,
    /// `x/(1−ρ)` below capacity.
    pub model_cycle: Option<f64>,
    pub final_flows: usize,
    pub drift: DriftSummary,
}

/// Runs the polling model at every load and probes its drift. The `α` of
/// the Lyapunov function is the smallest power of two giving negative drift
/// from the large states at the lowest stable load, 1 if none does.
pub fn oracle_runs(spec: &OracleSpec) -> Result<(Vec<OracleSummary>, Vec<OracleRun>)> {
    if spec.loads.is_empty() {
        return Err(Error::Usage("no oracle loads".into()));
    }
    if spec.sources == 0 || spec.overhead == 0 || spec.mean_size < 1.0 || spec.drift_samples < 2 {
        return Err(Error::Usage("oracle needs sources, a positive overhead, mean size ≥ 1 and ≥ 2 drift samples".into()));
    }
    let traffic: Vec<OracleTraffic> = spec
        .loads
        .iter()
        .map(|&rho| OracleTraffic::symmetric(spec.sources, rho, spec.mean_size, spec.overhead))
        .collect::<Result<_>>()?;
    let mut rng = substream(spec.seed, 20);
    let alpha = match spec.loads.iter().position(|&r| r < 1.0) {
        Some(i) => {
            let probes: Vec<_> = (0..4).map(|_| oracle::large_state(&traffic[i], spec.probe_flows, &mut rng)).collect();
            oracle::choose_alpha(&probes, &traffic[i], spec.drift_samples / 10, 1024.0, &mut rng).unwrap_or(1.0)
        }
        None => 1.0,
    };
    let runs: Vec<OracleRun> = traffic
        .par_iter()
        .enumerate()
        .map(|(i, t)| oracle::simulate(t, alpha, spec.time_units, spec.record_every, spec.seed.wrapping_add(i as u64)))
        .collect();
    let mut summaries = Vec::new();
    for ((t, r), &rho) in traffic.iter().zip(&runs).zip(&spec.loads) {
        let state = oracle::large_state(t, spec.probe_flows, &mut rng);
        let d = oracle::drift_estimate(&state, t, alpha, spec.drift_samples, &mut rng);
        let x = t.total_overhead() as f64;
        summaries.push(OracleSummary {
            rho,
            cycles: r.cycles,
            time: r.time,
            mean_flows: r.mean_flows,
            mean_flows_first_half: r.mean_flows_first_half,
            mean_flows_second_half: r.mean_flows_second_half,
            growth_rate: r.growth_rate,
            mean_cycle: r.mean_cycle,
            model_cycle: (rho < 1.0).then(|| x / (1.0 - rho)),
            final_flows: r.final_flows,
            drift: DriftSummary { alpha, mean: d.mean, half_width: d.half_width, negative: d.negative(), positive: d.positive() },
        });
    }
    Ok((summaries, runs))
}

/// `oracle`: trajectory CSV plus a JSON summary string.
pub fn cmd_oracle(spec: &OracleSpec) -> Result<(Vec<Table>, String)> {
    let (summaries, runs) = oracle_runs(spec)?;
    let mut t = Table::new("oracle_trace.csv", &["rho", "cycle", "time", "flows", "lyapunov"]);
    for (r, &rho) in runs.iter().zip(&spec.loads) {
        for c in &r.trace {
            t.push(vec![num(rho), c.cycle.to_string(), c.time.to_string(), c.flows.to_string(), num(c.lyapunov)]);
        }
    }
    let json = serde_json::to_string_pretty(&summaries)?;
    Ok((vec![t], json))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: &str) -> Scenario {
        let mut s = if kind == "network" { Scenario::network() } else { Scenario::single_tree() };
        s.run.horizon_s = 0.05;
        s.sweep.loads = vec![0.2, 0.5];
        s.sweep.mixes = vec![0.0, 1.0];
        s
    }

    #[test]
    fn csv_preamble_and_body() {
        let mut t = Table::new("a.csv", &["x", "y"]);
        t.push(vec![num(0.5), opt(None)]);
        let p = Provenance { command: "test".into(), hash: "00ff".into(), seed: 3, echo: "{}".into() };
        let text = render(&t, &p).unwrap();
        assert_eq!(text, "# twinsim test\n# scenario_hash: 00ff\n# seed: 3\n# config: {}\nx,y\n0.5,\n");
        assert_eq!(t.values("x").unwrap(), vec![Some(0.5)]);
        assert_eq!(t.values("y").unwrap(), vec![None]);
    }

    #[test]
    fn empty_load_list_is_a_usage_error() {
        let mut s = tiny("single_tree");
        s.sweep.loads.clear();
        assert!(matches!(cmd_single_tree(&s, 1), Err(Error::Usage(_))));
        assert!(matches!(cmd_analytics(&s), Err(Error::Usage(_))));
    }

    #[test]
    fn wrong_topology_rejected() {
        assert!(matches!(cmd_network(&tiny("single_tree"), 1), Err(Error::Usage(_))));
        assert!(matches!(cmd_single_tree(&tiny("network"), 1), Err(Error::Usage(_))));
    }

    #[test]
    fn batch_order_independent_of_jobs() {
        let s = tiny("single_tree");
        let configs: Vec<_> = [0.3, 0.6].iter().map(|&l| s.sim_config(l, 0.5, 7, 1).unwrap()).collect();
        let a = run_batch(&configs, 2, 1).unwrap();
        let b = run_batch(&configs, 2, 3).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(serde_json::to_string(x).unwrap(), serde_json::to_string(y).unwrap());
        }
        assert_eq!(a[0][0].seed, 7);
        assert_eq!(a[0][1].seed, 8);
    }

    #[test]
    fn blocking_table_rows() {
        let t = &cmd_blocking(&BlockingSpec::default()).unwrap()[0];
        assert_eq!(t.rows.len(), 4 * 50);
        let row = t.rows.iter().find(|r| r[0] == "10" && r[1] == "1").unwrap();
        let b: f64 = row[3].parse().unwrap();
        assert!((b - (8.0f64 / 9.0).powi(9)).abs() < 1e-12);
        let inf = t.rows.iter().find(|r| r[0] == "inf" && r[1] == "1").unwrap();
        assert!((inf[3].parse::<f64>().unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn analytics_grid_matches_sweep_axes() {
        let t = &cmd_analytics(&tiny("network")).unwrap()[0];
        assert_eq!(t.rows.len(), 4);
        let star = t.values("rho_star").unwrap();
        assert!(star.iter().all(|v| (v.unwrap() - (1.0 - (8.0f64 / 9.0).powi(9))).abs() < 1e-12));
        let x = t.values("x").unwrap();
        assert!((x[0].unwrap() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn total_variation_basics() {
        assert_eq!(total_variation(&[1.0], &[1.0, 0.0]), 0.0);
        assert!((total_variation(&[1.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        assert!((total_variation(&[0.5, 0.5], &[0.25, 0.75]) - 0.25).abs() < 1e-15);
    }
}
