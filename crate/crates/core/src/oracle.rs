//! Discrete-time polling model used to probe stability.
//!
//! Time is counted in integer units and flow sizes are integer numbers of
//! units. At the start of a cycle the server takes a snapshot of every
//! source; it then visits the sources in order, gives one unit of service to
//! each flow in the snapshot and spends the source's switch overhead before
//! moving on. Flows arriving during the cycle wait for the next one.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::substream;

/// Remaining sizes of the flows at every source.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollingState {
    pub sources: Vec<Vec<u32>>,
}

impl PollingState {
    pub fn empty(sources: usize) -> Self {
        PollingState { sources: vec![Vec::new(); sources] }
    }

    /// `L(N)`: flows in the system.
    pub fn flows(&self) -> usize {
        self.sources.iter().map(Vec::len).sum()
    }

    /// Total remaining work.
    pub fn work(&self) -> u64 {
        self.sources.iter().flatten().map(|&n| n as u64).sum()
    }

    /// Serves one cycle and appends `arrivals[i]` to source `i` afterwards.
    /// Returns the cycle length `x + L(N)`.
    pub fn run_cycle(&mut self, overheads: &[u32], arrivals: &[Vec<u32>]) -> u64 {
        let len = overheads.iter().map(|&x| x as u64).sum::<u64>() + self.flows() as u64;
        for flows in &mut self.sources {
            flows.retain_mut(|n| {
                *n -= 1;
                *n > 0
            });
        }
        for (flows, new) in self.sources.iter_mut().zip(arrivals) {
            flows.extend(new.iter().copied().filter(|&n| n > 0));
        }
        len
    }
}

/// `‖N‖ = Σ_i Σ_p N_{i,p}² + α N_{i,p}`.
pub fn lyapunov(state: &PollingState, alpha: f64) -> f64 {
    state
        .sources
        .iter()
        .flatten()
        .map(|&n| {
            let n = n as f64;
            n * n + alpha * n
        })
        .sum()
}

/// Poisson flow arrivals with geometric sizes, per source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleTraffic {
    /// Flow arrival rate per time unit, per source.
    pub rates: Vec<f64>,
    /// Mean flow size in time units, per source (at least 1).
    pub mean_sizes: Vec<f64>,
    /// Switch overhead per source, in time units.
    pub overheads: Vec<u32>,
}

impl OracleTraffic {
    /// `sources` identical sources with total load `rho`, mean size `mean`
    /// and overhead `overhead` each.
    pub fn symmetric(sources: usize, rho: f64, mean: f64, overhead: u32) -> Result<Self> {
        if sources == 0 || mean < 1.0 || rho < 0.0 {
            return Err(Error::invalid("need sources, mean size ≥ 1 and a non-negative load"));
        }
        Ok(OracleTraffic {
            rates: vec![rho / (sources as f64 * mean); sources],
            mean_sizes: vec![mean; sources],
            overheads: vec![overhead; sources],
        })
    }

    /// `ρ = Σ λ_i m_i`.
    pub fn load(&self) -> f64 {
        self.rates.iter().zip(&self.mean_sizes).map(|(l, m)| l * m).sum()
    }

    /// `x = Σ x_i`.
    pub fn total_overhead(&self) -> u64 {
        self.overheads.iter().map(|&x| x as u64).sum()
    }

    /// Arrivals at each source over `len` time units.
    pub fn sample<R: Rng + ?Sized>(&self, len: u64, rng: &mut R) -> Vec<Vec<u32>> {
        self.rates
            .iter()
            .zip(&self.mean_sizes)
            .map(|(&rate, &mean)| {
                let mu = rate * len as f64;
                if mu <= 0.0 {
                    return Vec::new();
                }
                let k = Poisson::new(mu).unwrap().sample(rng) as usize;
                // failures before the first success, plus one: mean exactly `mean`
                let size = Geometric::new(1.0 / mean).unwrap();
                (0..k).map(|_| (size.sample(rng) + 1).min(u32::MAX as u64) as u32).collect()
            })
            .collect()
    }
}

/// One cycle of the recorded trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u64,
    /// Time at the start of the cycle.
    pub time: u64,
    pub flows: usize,
    pub lyapunov: f64,
}

/// Summary of a long run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    pub rho: f64,
    pub cycles: u64,
    pub time: u64,
    /// Time-average of `L(N)` over the whole run, cycles weighted by length.
    pub mean_flows: f64,
    /// Same over the first and second halves of elapsed time.
    pub mean_flows_first_half: f64,
    pub mean_flows_second_half: f64,
    /// Least-squares slope of `L(N)` against time at cycle starts.
    pub growth_rate: f64,
    pub mean_cycle: f64,
    pub final_flows: usize,
    pub trace: Vec<CycleRecord>,
}

/// Runs the polling model from an empty state for at least `time_units`,
/// recording every `record_every`-th cycle.
pub fn simulate(traffic: &OracleTraffic, alpha: f64, time_units: u64, record_every: u64, seed: u64) -> OracleRun {
    let mut rng = substream(seed, 7);
    let mut state = PollingState::empty(traffic.rates.len());
    let half = time_units / 2;
    let (mut t, mut cycles) = (0u64, 0u64);
    let (mut area_a, mut area_b) = (0.0, 0.0);
    // running sums for the regression of L on t
    let (mut n, mut st, mut sl, mut stt, mut stl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut trace = Vec::new();
    while t < time_units {
        let l = state.flows();
        if record_every > 0 && cycles % record_every == 0 {
            trace.push(CycleRecord { cycle: cycles, time: t, flows: l, lyapunov: lyapunov(&state, alpha) });
        }
        let len = traffic.total_overhead() + l as u64;
        let arrivals = traffic.sample(len, &mut rng);
        let got = state.run_cycle(&traffic.overheads, &arrivals);
        debug_assert_eq!(got, len);
        let (tf, lf) = (t as f64, l as f64);
        n += 1.0;
        st += tf;
        sl += lf;
        stt += tf * tf;
        stl += tf * lf;
        // split the cycle's area at the half-way mark
        let end = t + len;
        if end <= half {
            area_a += lf * len as f64;
        } else if t >= half {
            area_b += lf * len as f64;
        } else {
            area_a += lf * (half - t) as f64;
            area_b += lf * (end - half) as f64;
        }
        t = end;
        cycles += 1;
    }
    let denom = n * stt - st * st;
    let slope = if denom > 0.0 { (n * stl - st * sl) / denom } else { 0.0 };
    OracleRun {
        rho: traffic.load(),
        cycles,
        time: t,
        mean_flows: (area_a + area_b) / t as f64,
        mean_flows_first_half: area_a / half.max(1) as f64,
        mean_flows_second_half: area_b / (t - half).max(1) as f64,
        growth_rate: slope,
        mean_cycle: t as f64 / cycles.max(1) as f64,
        final_flows: state.flows(),
        trace,
    }
}

/// Monte-Carlo estimate of the one-cycle Lyapunov drift per unit time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    /// Mean of `(‖N(τ)‖ − ‖N‖)/τ` where `τ = x + L(N)`.
    pub mean: f64,
    /// 95% normal-approximation half-width.
    pub half_width: f64,
    pub samples: usize,
    pub cycle: u64,
}

impl DriftEstimate {
    pub fn negative(&self) -> bool {
        self.mean + self.half_width < 0.0
    }

    pub fn positive(&self) -> bool {
        self.mean - self.half_width > 0.0
    }
}

pub fn drift_estimate(
    state: &PollingState,
    traffic: &OracleTraffic,
    alpha: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> DriftEstimate {
    let before = lyapunov(state, alpha);
    let cycle = traffic.total_overhead() + state.flows() as u64;
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..samples {
        let mut next = state.clone();
        let arrivals = traffic.sample(cycle, rng);
        next.run_cycle(&traffic.overheads, &arrivals);
        let d = (lyapunov(&next, alpha) - before) / cycle as f64;
        s += d;
        ss += d * d;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = if samples > 1 { (ss - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
    DriftEstimate { mean, half_width: 1.96 * (var / n).sqrt(), samples, cycle }
}

/// A state of `flows_per_source` flows at every source with sizes drawn
/// from the traffic's size laws.
pub fn large_state(traffic: &OracleTraffic, flows_per_source: usize, rng: &mut ChaCha8Rng) -> PollingState {
    PollingState {
        sources: traffic
            .mean_sizes
            .iter()
            .map(|&m| {
                let g = Geometric::new(1.0 / m).unwrap();
                (0..flows_per_source).map(|_| g.sample(rng) as u32 + 1).collect()
            })
            .collect(),
    }
}

/// Smallest `α` in `{1, 2, 4, …, max}` for which the estimated drift is
/// negative at every probe state.
pub fn choose_alpha(
    probes: &[PollingState],
    traffic: &OracleTraffic,
    samples: usize,
    max: f64,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let mut alpha = 1.0;
    while alpha <= max {
        if probes.iter().all(|p| drift_estimate(p, traffic, alpha, samples, rng).negative()) {
            return Some(alpha);
        }
        alpha *= 2.0;
    }
    None
}
