//! Scenario files: topology, protocol constants, traffic and sweep axes in
//! one TOML document. Every key has a default taken from the reference
//! configuration (10 sources, 1 Gb/s, 1 KB packets and quantum, 2 µs report
//! and guard time, 2 Mb/s non-backlogged flows lasting 30 s on average,
//! 10 MB backlogged flows, 1 ms grant tolerance, round trips between 20 µs
//! and 1 ms).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::PropagationMatrix;
use crate::error::{Error, Result};
use crate::grant::GrantJitter;
use crate::sim::SimConfig;
use crate::time::{LineRate, TimeSpan};
use crate::topology::Topology;
use crate::traffic::{SizeFamily, TrafficMix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    /// `single_tree` or `network`.
    pub kind: String,
    /// Sources of a single tree.
    pub sources: u16,
    /// Routers of a network.
    pub nodes: u16,
    /// Tunable transmitters per source.
    pub transmitters: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection { kind: "single_tree".into(), sources: 10, nodes: 10, transmitters: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub line_rate_gbps: f64,
    pub delta_r_us: f64,
    pub tau_ms: f64,
    pub quantum_bytes: u64,
    pub packet_bytes: u32,
    pub grant_jitter_model: GrantJitter,
    pub max_grant_us: Option<f64>,
    pub retune_guard_us: f64,
    pub rtt_min_us: f64,
    pub rtt_max_us: f64,
    /// One-way delays `[from][to]` in microseconds; replaces the random
    /// round-trip draw when present.
    pub propagation_us: Option<Vec<Vec<f64>>>,
    pub random_clock_offsets: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            line_rate_gbps: 1.0,
            delta_r_us: 2.0,
            tau_ms: 1.0,
            quantum_bytes: 1000,
            packet_bytes: 1000,
            grant_jitter_model: GrantJitter::None,
            max_grant_us: None,
            retune_guard_us: 0.0,
            rtt_min_us: 20.0,
            rtt_max_us: 1000.0,
            propagation_us: None,
            random_clock_offsets: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    pub mean_flow_mb: f64,
    pub size_family: SizeFamily,
    pub nb_rate_mbps: f64,
    pub nb_duration_s: f64,
}

impl Default for TrafficSection {
    fn default() -> Self {
        TrafficSection { mean_flow_mb: 10.0, size_family: SizeFamily::Exponential, nb_rate_mbps: 2.0, nb_duration_s: 30.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Load offered to each destination channel.
    pub loads: Vec<f64>,
    /// Backlogged share of the load.
    pub mixes: Vec<f64>,
    /// Transmitter counts to sweep; empty means the topology's value.
    pub transmitters: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            loads: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            mixes: vec![0.0, 0.2, 0.6, 1.0],
            transmitters: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub horizon_s: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Independent seeds per sweep point.
    pub seeds: usize,
    pub out: Option<String>,
    pub trace_points: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { horizon_s: 200.0, warmup_fraction: 0.1, seed: 1, seeds: 1, out: None, trace_points: 200 }
    }
}

/// A complete scenario file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub topology: TopologySection,
    pub protocol: ProtocolSection,
    pub traffic: TrafficSection,
    pub sweep: SweepSection,
    pub run: RunSection,
}

impl Scenario {
    pub fn single_tree() -> Self {
        Scenario::default()
    }

    /// Ten-node network with one transmitter per node, 100 s runs.
    pub fn network() -> Self {
        let mut s = Scenario::default();
        s.topology.kind = "network".into();
        s.run.horizon_s = 100.0;
        s
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// Compact one-line echo of the scenario.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("scenario serialises")
    }

    /// First 16 hex digits of the SHA-256 of the canonical echo.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn topology(&self) -> Result<Topology> {
        match self.topology.kind.as_str() {
            "single_tree" => Ok(Topology::SingleTree { sources: self.topology.sources }),
            "network" => Ok(Topology::Network { nodes: self.topology.nodes }),
            other => Err(Error::Config(format!("unknown topology kind `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let topo = self.topology()?;
        if topo.sources_per_tree() == 0 {
            return Err(Error::Config("a tree needs at least one source".into()));
        }
        if self.sweep.loads.iter().any(|&l| !(0.0..=2.0).contains(&l)) {
            return Err(Error::Config("loads must lie in [0, 2]".into()));
        }
        if self.sweep.mixes.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::Config("mixes must lie in [0, 1]".into()));
        }
        if self.run.seeds == 0 {
            return Err(Error::Config("at least one seed".into()));
        }
        // builds and checks one point
        self.sim_config(0.5, 0.5, self.run.seed, self.topology.transmitters)?.validate()
    }

    /// Transmitter counts to sweep.
    pub fn transmitter_axis(&self) -> Vec<usize> {
        if self.sweep.transmitters.is_empty() {
            vec![self.topology.transmitters]
        } else {
            self.sweep.transmitters.clone()
        }
    }

    /// Simulation of one sweep point.
    pub fn sim_config(&self, load: f64, mix: f64, seed: u64, transmitters: usize) -> Result<SimConfig> {
        let topology = self.topology()?;
        let p = &self.protocol;
        let rate = LineRate((p.line_rate_gbps * 1e9).round() as u64);
        if rate.0 == 0 {
            return Err(Error::Config("line rate must be positive".into()));
        }
        let pairs = topology.destinations().len() * topology.sources_per_tree();
        let mut traffic = TrafficMix::symmetric(
            pairs,
            load * pairs as f64 / topology.sources_per_tree() as f64,
            mix,
            rate,
            self.traffic.mean_flow_mb * 1e6,
            self.traffic.nb_rate_mbps * 1e6,
            self.traffic.nb_duration_s,
            p.packet_bytes,
        )?;
        traffic.size_family = self.traffic.size_family;
        Ok(SimConfig {
            topology,
            rate,
            delta_r: TimeSpan::from_micros_f64(p.delta_r_us),
            tau: TimeSpan::from_millis_f64(p.tau_ms),
            quantum_bytes: p.quantum_bytes,
            transmitters,
            grant_jitter: p.grant_jitter_model,
            max_grant: p.max_grant_us.map(TimeSpan::from_micros_f64),
            retune_guard: TimeSpan::from_micros_f64(p.retune_guard_us),
            rtt_min: TimeSpan::from_micros_f64(p.rtt_min_us),
            rtt_max: TimeSpan::from_micros_f64(p.rtt_max_us),
            propagation: p.propagation_us.as_deref().map(PropagationMatrix::from_micros).transpose()?,
            random_clock_offsets: p.random_clock_offsets,
            traffic,
            horizon: TimeSpan::from_secs_f64(self.run.horizon_s),
            warmup_fraction: self.run.warmup_fraction,
            seed,
            trace_points: self.run.trace_points,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::NodeId;

    #[test]
    fn defaults_match_reference_table() {
        let s = Scenario::single_tree();
        let c = s.sim_config(0.5, 1.0, 1, 1).unwrap();
        assert_eq!(c.topology.sources_per_tree(), 10);
        assert_eq!(c.rate, LineRate::GIGABIT);
        assert_eq!(c.delta_r, TimeSpan::from_micros(2));
        assert_eq!(c.quantum_time(), TimeSpan::from_micros(8));
        assert!((c.overhead_ratio() - 2.5).abs() < 1e-12);
        assert_eq!(c.tau, TimeSpan::from_millis(1));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let s = Scenario::from_toml_str(
            r#"
            [protocol]
            quantum_bytes = 10000
            [sweep]
            loads = [0.3]
            "#,
        )
        .unwrap();
        assert_eq!(s.protocol.quantum_bytes, 10000);
        assert_eq!(s.protocol.delta_r_us, 2.0);
        assert_eq!(s.sweep.loads, vec![0.3]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Scenario::from_toml_str("[protocol]\nquantum = 3\n").is_err());
        assert!(Scenario::from_toml_str("[topology]\nkind = \"ring\"\n").is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let s = Scenario::network();
        let back = Scenario::from_toml_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        assert_ne!(Scenario::single_tree().hash(), s.hash());
        assert_eq!(s.hash().len(), 16);
    }

    #[test]
    fn propagation_matrix_from_file() {
        let s = Scenario::from_toml_str(
            r#"
            [topology]
            sources = 2
            [protocol]
            propagation_us = [[0, 10, 20], [30, 0, 40], [50, 60, 0]]
            "#,
        )
        .unwrap();
        let c = s.sim_config(0.5, 0.0, 1, 1).unwrap();
        let m = c.propagation.unwrap();
        assert_eq!(m.one_way(NodeId(1), NodeId(0)), TimeSpan::from_micros(30));
        assert!(Scenario::from_toml_str("[protocol]\npropagation_us = [[0, 1], [1]]\n").is_err());
    }

    #[test]
    fn network_pair_loads() {
        let s = Scenario::network();
        let c = s.sim_config(0.45, 0.0, 1, 1).unwrap();
        assert_eq!(c.traffic.pairs.len(), 90);
        let per_dest: f64 = c.traffic.pairs[..9].iter().map(|p| p.total()).sum();
        assert!((per_dest - 0.45).abs() < 1e-12);
    }
}
