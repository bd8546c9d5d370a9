//! Seeded traffic for one source-destination pair.
//!
//! Backlogged flows arrive as a Poisson process with i.i.d. sizes (all data
//! of a flow is queued on arrival). Non-backlogged traffic is a Poisson
//! packet stream whose rate is proportional to a hidden M/M/∞ population of
//! rate-limited flows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{LineRate, TimePoint};

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Flow size distribution family, all parameterised by their mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeFamily {
    #[default]
    Exponential,
    Deterministic,
    /// Two-phase hyperexponential with balanced means and squared
    /// coefficient of variation `scv` (> 1).
    HyperExponential { scv: f64 },
}

impl SizeFamily {
    pub fn sample<R: Rng + ?Sized>(self, mean: f64, rng: &mut R) -> f64 {
        match self {
            SizeFamily::Exponential => Exp::new(1.0 / mean).unwrap().sample(rng),
            SizeFamily::Deterministic => mean,
            SizeFamily::HyperExponential { scv } => {
                let p1 = 0.5 * (1.0 + ((scv - 1.0) / (scv + 1.0)).sqrt());
                let p = if rng.random::<f64>() < p1 { p1 } else { 1.0 - p1 };
                Exp::new(2.0 * p / mean).unwrap().sample(rng)
            }
        }
    }
}

/// Offered traffic of one source-destination pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLoad {
    /// Load of backlogged flows, as a fraction of the channel rate.
    pub backlogged: f64,
    /// Load of non-backlogged traffic, as a fraction of the channel rate.
    pub nonbacklogged: f64,
}

impl PairLoad {
    pub fn total(&self) -> f64 {
        self.backlogged + self.nonbacklogged
    }
}

/// Traffic parameters shared by every pair, plus the per-pair loads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficMix {
    pub rate: LineRate,
    /// Mean backlogged flow size in bytes.
    pub mean_flow_bytes: f64,
    pub size_family: SizeFamily,
    /// Rate of one non-backlogged flow, bits per second.
    pub nb_flow_rate_bps: f64,
    /// Mean lifetime of a non-backlogged flow, seconds.
    pub nb_flow_duration_s: f64,
    pub packet_bytes: u32,
    pub pairs: Vec<PairLoad>,
}

impl TrafficMix {
    /// `count` pairs sharing `total_load` equally, a fraction
    /// `backlogged_fraction` of it from backlogged flows.
    pub fn symmetric(
        count: usize,
        total_load: f64,
        backlogged_fraction: f64,
        rate: LineRate,
        mean_flow_bytes: f64,
        nb_flow_rate_bps: f64,
        nb_flow_duration_s: f64,
        packet_bytes: u32,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&backlogged_fraction) {
            return Err(Error::Config(format!("backlogged fraction {backlogged_fraction} outside [0,1]")));
        }
        if total_load < 0.0 {
            return Err(Error::Config(format!("negative load {total_load}")));
        }
        let per = total_load / count as f64;
        let pair = PairLoad { backlogged: per * backlogged_fraction, nonbacklogged: per * (1.0 - backlogged_fraction) };
        let mix = TrafficMix {
            rate,
            mean_flow_bytes,
            size_family: SizeFamily::Exponential,
            nb_flow_rate_bps,
            nb_flow_duration_s,
            packet_bytes,
            pairs: vec![pair; count],
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean_flow_bytes < 1.0 || self.packet_bytes == 0 || self.nb_flow_rate_bps <= 0.0 || self.nb_flow_duration_s <= 0.0 {
            return Err(Error::Config("traffic sizes and rates must be positive".into()));
        }
        for p in &self.pairs {
            if p.backlogged < 0.0 || p.nonbacklogged < 0.0 {
                return Err(Error::Config("negative pair load".into()));
            }
        }
        Ok(())
    }

    pub fn total_load(&self) -> f64 {
        self.pairs.iter().map(PairLoad::total).sum()
    }

    /// Backlogged flow arrival rate (flows/s) for a pair load.
    pub fn flow_rate(&self, load: &PairLoad) -> f64 {
        load.backlogged * self.rate.bits_per_sec() as f64 / (8.0 * self.mean_flow_bytes)
    }

    /// Mean number of non-backlogged flows in progress for a pair load.
    pub fn mean_nb_flows(&self, load: &PairLoad) -> f64 {
        load.nonbacklogged * self.rate.bits_per_sec() as f64 / self.nb_flow_rate_bps
    }

    /// Packet rate (packets/s) contributed by one non-backlogged flow.
    pub fn packets_per_flow(&self) -> f64 {
        self.nb_flow_rate_bps / (8.0 * self.packet_bytes as f64)
    }
}

/// Poisson arrivals of backlogged flows.
#[derive(Clone, Debug)]
pub struct BackloggedArrivals {
    rng: ChaCha8Rng,
    gap: Option<Exp<f64>>,
    mean_size: f64,
    family: SizeFamily,
    now_ns: f64,
}

impl BackloggedArrivals {
    pub fn new(flows_per_sec: f64, mean_size_bytes: f64, family: SizeFamily, rng: ChaCha8Rng) -> Self {
        BackloggedArrivals {
            rng,
            gap: (flows_per_sec > 0.0).then(|| Exp::new(flows_per_sec * 1e-9).unwrap()),
            mean_size: mean_size_bytes,
            family,
            now_ns: 0.0,
        }
    }
}

impl Iterator for BackloggedArrivals {
    /// Arrival instant and flow size in bytes.
    type Item = (TimePoint, u64);

    fn next(&mut self) -> Option<Self::Item> {
        let gap = self.gap.as_ref()?;
        self.now_ns += gap.sample(&mut self.rng);
        let size = self.family.sample(self.mean_size, &mut self.rng).ceil().max(1.0) as u64;
        Some((TimePoint(self.now_ns.round() as i64), size))
    }
}

/// M/M/∞ flow population: arrivals at rate `ν`, each flow leaving after an
/// exponential holding time.
#[derive(Clone, Debug)]
pub struct FlowPopulation {
    arrival_rate: f64,
    departure_rate: f64,
    count: u64,
}

impl FlowPopulation {
    /// Population with mean `mean_flows` and mean holding time
    /// `holding_s`; the initial count is drawn from the stationary
    /// Poisson law.
    pub fn stationary<R: Rng + ?Sized>(mean_flows: f64, holding_s: f64, rng: &mut R) -> Self {
        let count = if mean_flows > 0.0 { Poisson::new(mean_flows).unwrap().sample(rng) as u64 } else { 0 };
        FlowPopulation { arrival_rate: mean_flows / holding_s, departure_rate: 1.0 / holding_s, count }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    /// Total rate (per second) of population changes in the current state.
    pub fn change_rate(&self) -> f64 {
        self.arrival_rate + self.count as f64 * self.departure_rate
    }

    /// Applies one change, chosen by uniform `u` on `[0, change_rate)`.
    fn change(&mut self, u: f64) {
        if u < self.arrival_rate {
            self.count += 1;
        } else {
            self.count -= 1;
        }
    }
}

/// Non-backlogged packet stream: Poisson with rate proportional to the
/// current population, piecewise constant between population changes.
#[derive(Clone, Debug)]
pub struct NonBackloggedPackets {
    rng: ChaCha8Rng,
    population: FlowPopulation,
    packets_per_flow: f64,
    now_ns: f64,
}

impl NonBackloggedPackets {
    pub fn new(mean_flows: f64, holding_s: f64, packets_per_flow: f64, mut rng: ChaCha8Rng) -> Self {
        let population = FlowPopulation::stationary(mean_flows, holding_s, &mut rng);
        NonBackloggedPackets { rng, population, packets_per_flow, now_ns: 0.0 }
    }

    pub fn population(&self) -> &FlowPopulation {
        &self.population
    }

    /// Advances to the next population change or packet; returns the
    /// instant and whether it was a packet. `None` when nothing can happen.
    pub fn step(&mut self) -> Option<(f64, bool)> {
        let pkt = self.population.count as f64 * self.packets_per_flow;
        let total = pkt + self.population.change_rate();
        if total <= 0.0 {
            return None;
        }
        self.now_ns += Exp::new(total * 1e-9).unwrap().sample(&mut self.rng);
        let u = self.rng.random::<f64>() * total;
        if u < pkt {
            Some((self.now_ns, true))
        } else {
            self.population.change(u - pkt);
            Some((self.now_ns, false))
        }
    }
}

impl Iterator for NonBackloggedPackets {
    type Item = TimePoint;

    fn next(&mut self) -> Option<TimePoint> {
        loop {
            let (t, packet) = self.step()?;
            if packet {
                return Some(TimePoint(t.round() as i64));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arrival {
    Packet { bytes: u32 },
    Flow { size: u64 },
}

/// Both traffic classes of one pair, merged in time order.
#[derive(Clone, Debug)]
pub struct PairTraffic {
    flows: BackloggedArrivals,
    packets: NonBackloggedPackets,
    packet_bytes: u32,
    next_flow: Option<(TimePoint, u64)>,
    next_packet: Option<TimePoint>,
}

impl PairTraffic {
    /// Generator for pair number `pair` of `mix`, using sub-streams of
    /// `seed` that no other pair shares.
    pub fn new(mix: &TrafficMix, pair: usize, seed: u64) -> Self {
        let load = &mix.pairs[pair];
        let mut flows = BackloggedArrivals::new(
            mix.flow_rate(load),
            mix.mean_flow_bytes,
            mix.size_family,
            substream(seed, 2 * pair as u64 + 1_000),
        );
        let mut packets = NonBackloggedPackets::new(
            mix.mean_nb_flows(load),
            mix.nb_flow_duration_s,
            mix.packets_per_flow(),
            substream(seed, 2 * pair as u64 + 1_001),
        );
        let next_flow = flows.next();
        let next_packet = packets.next();
        PairTraffic { flows, packets, packet_bytes: mix.packet_bytes, next_flow, next_packet }
    }

    pub fn peek_time(&self) -> Option<TimePoint> {
        match (self.next_flow, self.next_packet) {
            (Some((f, _)), Some(p)) => Some(f.min(p)),
            (Some((f, _)), None) => Some(f),
            (None, Some(p)) => Some(p),
            (None, None) => None,
        }
    }

    pub fn population(&self) -> u64 {
        self.packets.population().count()
    }
}

impl Iterator for PairTraffic {
    type Item = (TimePoint, Arrival);

    fn next(&mut self) -> Option<Self::Item> {
        let flow_first = match (self.next_flow, self.next_packet) {
            (Some((f, _)), Some(p)) => f <= p,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return None,
        };
        if flow_first {
            let (t, size) = self.next_flow.take().unwrap();
            self.next_flow = self.flows.next();
            Some((t, Arrival::Flow { size }))
        } else {
            let t = self.next_packet.take().unwrap();
            self.next_packet = self.packets.next();
            Some((t, Arrival::Packet { bytes: self.packet_bytes }))
        }
    }
}
