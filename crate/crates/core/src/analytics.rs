//! Closed-form performance model.
//!
//! In the limit of a vanishing quantum, a destination tree with only
//! backlogged flows behaves like a network of processor-sharing queues plus
//! a permanent customer of relative weight `x` that stands for the report
//! and guard overhead. That network is balanced, so its stationary laws are
//! negative binomial and insensitive to the flow size distribution.
//!
//! Transmitter blocking is modelled separately: the grants covering a given
//! instant at a source are counted as independent Bernoulli variables, one
//! per destination, and the time a source's transmitters cannot serve is
//! the excess of that count over the number of transmitters.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::time::TimeSpan;

/// Truncation target for series over flow counts.
pub const TAIL_TOLERANCE: f64 = 1e-9;

/// `(y)_r = y (y−1) … (y−r+1)`, with `(y)_0 = 1`.
pub fn falling(y: f64, r: u32) -> f64 {
    (0..r).map(|k| y - k as f64).product()
}

/// `ln((m+x)_m / m!)`, the log of the generalised binomial `C(m+x, m)`.
fn ln_binom_x(m: u64, x: f64) -> f64 {
    ln_gamma(m as f64 + x + 1.0) - ln_gamma(x + 1.0) - ln_gamma(m as f64 + 1.0)
}

fn check_load(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) || rho.is_nan() {
        return Err(Error::Divergent { rho });
    }
    Ok(())
}

fn check_x(x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("overhead ratio x = {x} must be positive")));
    }
    Ok(())
}

/// Parameters of the tree and network model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    /// Per-source backlogged loads `ρ_i`.
    pub source_loads: Vec<f64>,
    /// Overhead ratio `x = S Δ_R / q`.
    pub x: f64,
    pub capacity_bps: f64,
    /// Network size `R` for the blocking model.
    pub nodes: usize,
    pub transmitters: usize,
}

impl AnalyticParams {
    /// `sources` equal loads summing to `rho`; `x` derived from the quantum
    /// and overhead times.
    pub fn symmetric(rho: f64, sources: usize, delta_r: TimeSpan, q_time: TimeSpan, capacity_bps: f64) -> Self {
        AnalyticParams {
            source_loads: vec![rho / sources as f64; sources],
            x: overhead_ratio(sources, delta_r, q_time),
            capacity_bps,
            nodes: sources + 1,
            transmitters: 1,
        }
    }

    pub fn load(&self) -> f64 {
        self.source_loads.iter().sum()
    }

    /// `ρ̃_i = ρ_i / (1 − ρ + ρ_i)`.
    pub fn effective_load(&self, i: usize) -> f64 {
        let rho = self.load();
        self.source_loads[i] / (1.0 - rho + self.source_loads[i])
    }

    pub fn joint(&self, n: &[u32]) -> Result<f64> {
        stationary_joint(n, &self.source_loads, self.x)
    }

    pub fn marginal(&self, i: usize, n: u32) -> Result<f64> {
        stationary_marginal(n, self.source_loads[i], self.load(), self.x)
    }

    pub fn throughput(&self) -> Result<f64> {
        flow_throughput(self.load(), self.x, self.capacity_bps)
    }
}

/// `x = S Δ_R / q`.
pub fn overhead_ratio(sources: usize, delta_r: TimeSpan, q_time: TimeSpan) -> f64 {
    sources as f64 * delta_r.as_nanos() as f64 / q_time.as_nanos() as f64
}

/// Joint law of the per-source flow counts:
/// `π(n) = (m+x)_m Π ρ_i^{n_i}/n_i! (1−ρ)^{1+x}` with `m = Σ n_i`.
pub fn stationary_joint(n: &[u32], loads: &[f64], x: f64) -> Result<f64> {
    if n.len() != loads.len() {
        return Err(Error::invalid("one count per source expected"));
    }
    check_x(x)?;
    let rho: f64 = loads.iter().sum();
    check_load(rho)?;
    let m: u64 = n.iter().map(|&k| k as u64).sum();
    let mut ln = ln_gamma(m as f64 + x + 1.0) - ln_gamma(x + 1.0) + (1.0 + x) * (1.0 - rho).ln();
    for (&k, &r) in n.iter().zip(loads) {
        if k > 0 {
            if r <= 0.0 {
                return Ok(0.0);
            }
            ln += k as f64 * r.ln() - ln_gamma(k as f64 + 1.0);
        }
    }
    Ok(ln.exp())
}

/// Law of the total flow count: `ω(m) = (m+x)_m ρ^m/m! (1−ρ)^{1+x}`.
pub fn stationary_total(m: u32, rho: f64, x: f64) -> Result<f64> {
    check_x(x)?;
    check_load(rho)?;
    negative_binomial(m, rho, x)
}

/// Law of one source's flow count, negative binomial in
/// `ρ̃_i = ρ_i/(1−ρ+ρ_i)`.
pub fn stationary_marginal(n: u32, rho_i: f64, rho: f64, x: f64) -> Result<f64> {
    check_x(x)?;
    check_load(rho)?;
    if rho_i < 0.0 || rho_i > rho {
        return Err(Error::invalid(format!("source load {rho_i} outside [0, {rho}]")));
    }
    negative_binomial(n, rho_i / (1.0 - rho + rho_i), x)
}

fn negative_binomial(m: u32, p: f64, x: f64) -> Result<f64> {
    if m == 0 {
        return Ok((1.0 - p).powf(1.0 + x));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok((ln_binom_x(m as u64, x) + m as f64 * p.ln() + (1.0 + x) * (1.0 - p).ln()).exp())
}

/// Negative binomial law with parameter `p` and shape `1+x`, truncated once
/// the remaining tail mass is below `tol`. Built with the recursion
/// `ω(m+1)/ω(m) = p (m+1+x)/(m+1)`.
pub fn negative_binomial_pmf(p: f64, x: f64, tol: f64) -> Result<Vec<f64>> {
    check_x(x)?;
    check_load(p)?;
    let mut out = vec![(1.0 - p).powf(1.0 + x)];
    let mut mass = out[0];
    let mut m = 0u64;
    while 1.0 - mass > tol {
        let next = out[m as usize] * p * (m as f64 + 1.0 + x) / (m as f64 + 1.0);
        if next == 0.0 || m > 100_000_000 {
            break;
        }
        out.push(next);
        mass += next;
        m += 1;
    }
    Ok(out)
}

/// Truncated distribution of the total flow count.
pub fn total_distribution(rho: f64, x: f64) -> Result<Vec<f64>> {
    negative_binomial_pmf(rho, x, TAIL_TOLERANCE)
}

/// Truncated distribution of one source's flow count.
pub fn marginal_distribution(rho_i: f64, rho: f64, x: f64) -> Result<Vec<f64>> {
    check_load(rho)?;
    negative_binomial_pmf(rho_i / (1.0 - rho + rho_i), x, TAIL_TOLERANCE)
}

/// `E[N_i] = ρ_i (1+x)/(1−ρ)`.
pub fn mean_source_flows(rho_i: f64, rho: f64, x: f64) -> Result<f64> {
    check_load(rho)?;
    Ok(rho_i * (1.0 + x) / (1.0 - rho))
}

/// `E[M] = ρ (1+x)/(1−ρ)`.
pub fn mean_total_flows(rho: f64, x: f64) -> Result<f64> {
    mean_source_flows(rho, rho, x)
}

/// Expected response time of a flow of `bits` bits: `s/C · (1+x)/(1−ρ)`.
pub fn response_time(bits: f64, rho: f64, x: f64, capacity_bps: f64) -> Result<f64> {
    check_load(rho)?;
    Ok(bits / capacity_bps * (1.0 + x) / (1.0 - rho))
}

/// Flow throughput `γ = (1−ρ) C/(1+x)`, bits per second.
pub fn flow_throughput(rho: f64, x: f64, capacity_bps: f64) -> Result<f64> {
    check_load(rho)?;
    Ok((1.0 - rho) * capacity_bps / (1.0 + x))
}

/// Flow throughput with priority traffic of load `rho_nb` taken off the
/// top: capacity becomes `C(1−ρ_N)` and backlogged load `ρ_B/(1−ρ_N)`.
pub fn flow_throughput_mixed(rho_b: f64, rho_nb: f64, x: f64, capacity_bps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho_nb) {
        return Err(Error::Divergent { rho: rho_nb });
    }
    let (rho, c) = reduced_load(rho_b, rho_nb, capacity_bps);
    flow_throughput(rho, x, c)
}

/// Backlogged load and capacity seen by backlogged flows once priority
/// traffic is served.
pub fn reduced_load(rho_b: f64, rho_nb: f64, capacity_bps: f64) -> (f64, f64) {
    (rho_b / (1.0 - rho_nb), capacity_bps * (1.0 - rho_nb))
}

/// Law of the number of grants overlapping a given instant at a source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Overlap {
    /// `R − 1` independent destinations, as in a network of `nodes` routers.
    Binomial { nodes: usize },
    /// The `R → ∞` limit.
    Poisson,
}

impl Overlap {
    fn trials(self) -> Option<usize> {
        match self {
            Overlap::Binomial { nodes } => Some(nodes.saturating_sub(1)),
            Overlap::Poisson => None,
        }
    }
}

/// `g_n`: probability that `n` grants cover an arbitrary instant when each
/// destination's grants cover a fraction `ρ′/(R−1)` of time.
pub fn overlap_pmf(n: usize, law: Overlap, rho_prime: f64) -> Result<f64> {
    match law.trials() {
        Some(k) => {
            if k == 0 {
                return Ok(if n == 0 { 1.0 } else { 0.0 });
            }
            if rho_prime < 0.0 || rho_prime > k as f64 {
                return Err(Error::invalid(format!("ρ′ = {rho_prime} outside [0, {k}]")));
            }
            if n > k {
                return Ok(0.0);
            }
            let p = rho_prime / k as f64;
            Ok(binomial_pmf(n, k, p))
        }
        None => {
            if rho_prime < 0.0 {
                return Err(Error::invalid("negative ρ′"));
            }
            if rho_prime == 0.0 {
                return Ok(if n == 0 { 1.0 } else { 0.0 });
            }
            Ok((n as f64 * rho_prime.ln() - rho_prime - ln_gamma(n as f64 + 1.0)).exp())
        }
    }
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if p == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if n == k { 1.0 } else { 0.0 };
    }
    let ln_c = ln_gamma(k as f64 + 1.0) - ln_gamma(n as f64 + 1.0) - ln_gamma((k - n) as f64 + 1.0);
    (ln_c + n as f64 * p.ln() + (k - n) as f64 * (1.0 - p).ln()).exp()
}

/// Blocked share of grant time with `t` transmitters,
/// `B_t = E[(G−t)⁺]/E[G]`, zero when no grant is ever issued.
///
/// Uses `E[(G−t)⁺] = E[G] − t + Σ_{n<t} (t−n) g_n`, a finite sum even in the
/// Poisson case.
pub fn blocking_fraction(t: usize, law: Overlap, rho_prime: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("at least one transmitter"));
    }
    if rho_prime == 0.0 {
        return Ok(0.0);
    }
    let mean = rho_prime;
    let mut head = 0.0;
    for n in 0..t {
        head += (t - n) as f64 * overlap_pmf(n, law, rho_prime)?;
    }
    let excess = (mean - t as f64 + head).max(0.0);
    Ok(excess / mean)
}

/// Largest sustainable load `ρ*` and the capacity share `B*` lost to
/// blocking at that load, evaluating the blocking model at `ρ′ = min(t, 1)`.
pub fn max_load(t: usize, law: Overlap) -> Result<(f64, f64)> {
    if let Some(k) = law.trials() {
        if k < 1 {
            return Err(Error::invalid("a network needs at least two nodes"));
        }
        if t >= k {
            return Ok((1.0, 0.0));
        }
    }
    let rho_prime = (t as f64).min(1.0);
    let b = blocking_fraction(t, law, rho_prime)?;
    Ok((rho_prime * (1.0 - b), b))
}

/// Throughput interpolated linearly between the light-traffic value
/// `C/(1+x)` and zero at the blocking-limited capacity `1 − B_t`; zero at
/// and beyond that capacity.
pub fn throughput_with_blocking(rho: f64, x: f64, capacity_bps: f64, blocking: f64) -> Result<f64> {
    check_x(x)?;
    if !(0.0..1.0).contains(&blocking) {
        return Err(Error::invalid(format!("blocking share {blocking} outside [0, 1)")));
    }
    if rho < 0.0 {
        return Err(Error::invalid("negative load"));
    }
    Ok(((1.0 - rho / (1.0 - blocking)) * capacity_bps / (1.0 + x)).max(0.0))
}

/// Mean time between successive grants to the same source, `S Δ_R/(1−ρ)`.
pub fn expected_cycle_time(sources: usize, delta_r: TimeSpan, rho: f64) -> Result<TimeSpan> {
    check_load(rho)?;
    Ok(TimeSpan::from_secs_f64(sources as f64 * delta_r.as_secs_f64() / (1.0 - rho)))
}

/// Solves `ρ′ = ρ/(1 − B_t(ρ′))` by fixed-point iteration. `None` when the
/// iteration leaves the admissible range, meaning `ρ` exceeds the capacity
/// of the model.
pub fn grant_intensity(rho: f64, t: usize, law: Overlap) -> Option<f64> {
    let limit = law.trials().map(|k| k as f64).unwrap_or(f64::INFINITY);
    let mut r = rho;
    for _ in 0..10_000 {
        let b = blocking_fraction(t, law, r.min(limit)).ok()?;
        if b >= 1.0 {
            return None;
        }
        let next = rho / (1.0 - b);
        if !(next <= limit) {
            return None;
        }
        if (next - r).abs() < 1e-13 {
            return Some(next);
        }
        r = next;
    }
    None
}
