//! Discrete-event simulation of destination trees and full networks.

mod engine;
pub mod event;
pub mod metrics;
mod replicate;

use serde::{Deserialize, Serialize};

use crate::clock::PropagationMatrix;
use crate::error::{Error, Result};
use crate::grant::GrantJitter;
use crate::time::{LineRate, TimeSpan};
use crate::topology::Topology;
use crate::traffic::{PairLoad, SizeFamily, TrafficMix};

pub use engine::Simulation;
pub use metrics::{ChannelAccounting, InvariantChecks, MetricsReport, TimeWeightedHistogram};
pub use replicate::{run_replications, Estimate, ReplicatedReport};

/// Everything one run needs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: Topology,
    pub rate: LineRate,
    /// Report plus guard time, `Δ_R`.
    pub delta_r: TimeSpan,
    /// Grant signalling tolerance `τ`.
    pub tau: TimeSpan,
    pub quantum_bytes: u64,
    pub transmitters: usize,
    pub grant_jitter: GrantJitter,
    pub max_grant: Option<TimeSpan>,
    /// Lost at the head of a grant picked up late by a retuned transmitter.
    pub retune_guard: TimeSpan,
    pub rtt_min: TimeSpan,
    pub rtt_max: TimeSpan,
    /// Overrides the random round-trip draw when set.
    pub propagation: Option<PropagationMatrix>,
    /// Start every destination clock at an arbitrary offset from global time.
    pub random_clock_offsets: bool,
    /// Per-pair loads, ordered by destination then source.
    pub traffic: TrafficMix,
    pub horizon: TimeSpan,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Number of samples of the total flow population over the run.
    pub trace_points: usize,
}

impl SimConfig {
    /// Reference settings for a single tree of 10 sources at total load `load`,
    /// a fraction `backlogged` of it from backlogged flows.
    pub fn single_tree(load: f64, backlogged: f64) -> Result<Self> {
        Self::symmetric(Topology::SingleTree { sources: 10 }, load, backlogged)
    }

    /// Reference settings for a network of 10 nodes with one transmitter each,
    /// every destination offered `load`.
    pub fn network(load: f64, backlogged: f64) -> Result<Self> {
        Self::symmetric(Topology::Network { nodes: 10 }, load, backlogged)
    }

    /// Symmetric traffic on `topology`: every destination channel is offered
    /// `load`, split equally over its sources.
    pub fn symmetric(topology: Topology, load: f64, backlogged: f64) -> Result<Self> {
        let s = topology.sources_per_tree();
        let pairs = topology.destinations().len() * s;
        let rate = LineRate::GIGABIT;
        let traffic = TrafficMix::symmetric(pairs, load * pairs as f64 / s as f64, backlogged, rate, 10e6, 2e6, 30.0, 1000)?;
        let horizon = match topology {
            Topology::SingleTree { .. } => TimeSpan::from_secs_f64(200.0),
            Topology::Network { .. } => TimeSpan::from_secs_f64(100.0),
        };
        Ok(SimConfig {
            topology,
            rate,
            delta_r: TimeSpan::from_micros(2),
            tau: TimeSpan::from_millis(1),
            quantum_bytes: 1000,
            transmitters: 1,
            grant_jitter: GrantJitter::None,
            max_grant: None,
            retune_guard: TimeSpan::ZERO,
            rtt_min: TimeSpan::from_micros(20),
            rtt_max: TimeSpan::from_millis(1),
            propagation: None,
            random_clock_offsets: true,
            traffic,
            horizon,
            warmup_fraction: 0.1,
            seed: 1,
            trace_points: 200,
        })
    }

    /// Replaces the per-pair loads, keeping every other traffic parameter.
    pub fn set_load(&mut self, load: f64, backlogged: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&backlogged) || load < 0.0 {
            return Err(Error::Config(format!("bad load {load} / backlogged fraction {backlogged}")));
        }
        let per = load / self.topology.sources_per_tree() as f64;
        let pair = PairLoad { backlogged: per * backlogged, nonbacklogged: per * (1.0 - backlogged) };
        for p in &mut self.traffic.pairs {
            *p = pair;
        }
        Ok(())
    }

    pub fn with_size_family(mut self, family: SizeFamily) -> Self {
        self.traffic.size_family = family;
        self
    }

    /// Quantum transmission time.
    pub fn quantum_time(&self) -> TimeSpan {
        self.rate.tx_time(self.quantum_bytes)
    }

    /// Overhead ratio `x = S Δ_R / q`.
    pub fn overhead_ratio(&self) -> f64 {
        self.topology.sources_per_tree() as f64 * self.delta_r.as_nanos() as f64 / self.quantum_time().as_nanos() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = self.topology.destinations().len() * self.topology.sources_per_tree();
        if self.topology.sources_per_tree() == 0 {
            return Err(Error::Config("a tree needs at least one source".into()));
        }
        if self.traffic.pairs.len() != pairs {
            return Err(Error::Config(format!("{} pair loads for {pairs} pairs", self.traffic.pairs.len())));
        }
        if self.delta_r <= TimeSpan::ZERO {
            return Err(Error::Config("Δ_R must be positive".into()));
        }
        if self.tau.is_negative() {
            return Err(Error::Config("τ must be non-negative".into()));
        }
        if self.quantum_bytes == 0 || self.transmitters == 0 {
            return Err(Error::Config("quantum and transmitter count must be positive".into()));
        }
        if self.rtt_min <= TimeSpan::ZERO || self.rtt_max < self.rtt_min {
            return Err(Error::Config("round-trip range must be positive and ordered".into()));
        }
        if let Some(cap) = self.max_grant {
            if cap <= TimeSpan::ZERO {
                return Err(Error::Config("grant cap must be positive".into()));
            }
        }
        if let Some(p) = &self.propagation {
            if p.len() != self.topology.node_count() {
                return Err(Error::Config("propagation matrix does not match the topology".into()));
            }
        }
        if self.horizon <= TimeSpan::ZERO || !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("horizon must be positive and warm-up below 1".into()));
        }
        self.traffic.validate()
    }
}

/// Runs one single-tree scenario. Fails if the scenario has more than one
/// destination.
pub fn run_single_tree(config: &SimConfig) -> Result<MetricsReport> {
    if !matches!(config.topology, Topology::SingleTree { .. }) {
        return Err(Error::Config("run_single_tree needs a single-tree topology".into()));
    }
    Simulation::new(config)?.run()
}

/// Runs one network scenario.
pub fn run_network(config: &SimConfig) -> Result<MetricsReport> {
    if !matches!(config.topology, Topology::Network { .. }) {
        return Err(Error::Config("run_network needs a network topology".into()));
    }
    Simulation::new(config)?.run()
}

/// Runs any scenario.
pub fn run(config: &SimConfig) -> Result<MetricsReport> {
    Simulation::new(config)?.run()
}
