use serde::{Deserialize, Serialize};

use crate::time::{TimePoint, TimeSpan};

/// Time-weighted histogram of an integer-valued process.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TimeWeightedHistogram {
    weights: Vec<f64>,
}

impl TimeWeightedHistogram {
    pub fn add(&mut self, value: usize, span: TimeSpan) {
        if span.as_nanos() <= 0 {
            return;
        }
        if value >= self.weights.len() {
            self.weights.resize(value + 1, 0.0);
        }
        self.weights[value] += span.as_nanos() as f64;
    }

    pub fn merge(&mut self, other: &TimeWeightedHistogram) {
        if other.weights.len() > self.weights.len() {
            self.weights.resize(other.weights.len(), 0.0);
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn distribution(&self) -> Vec<f64> {
        let t = self.total();
        if t == 0.0 {
            return Vec::new();
        }
        self.weights.iter().map(|w| w / t).collect()
    }

    pub fn mean(&self) -> f64 {
        let t = self.total();
        if t == 0.0 {
            return 0.0;
        }
        self.weights.iter().enumerate().map(|(k, w)| k as f64 * w).sum::<f64>() / t
    }
}

/// Integrates a piecewise-constant count over time, from `from` on.
#[derive(Clone, Debug)]
pub(crate) struct CountTracker {
    pub last_at: TimePoint,
    pub count: usize,
    pub peak: usize,
}

impl CountTracker {
    pub fn new() -> Self {
        CountTracker { last_at: TimePoint::ZERO, count: 0, peak: 0 }
    }

    /// Credits the held count up to `now`, then switches to `count`.
    pub fn update(&mut self, now: TimePoint, count: usize, from: TimePoint, hist: &mut TimeWeightedHistogram) {
        let lo = self.last_at.max(from);
        if now > lo {
            hist.add(self.count, now - lo);
        }
        self.last_at = now;
        self.count = count;
        self.peak = self.peak.max(count);
    }
}

/// Running sums for a positive quantity.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub min: f64,
    pub max: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Time accounting of one destination channel over resolved grants.
///
/// Every resolved grant window of `d + Δ_R` is split into data actually
/// received (`busy`), granted time nobody filled (`idle`) and report/guard
/// time (`overhead`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelAccounting {
    pub busy_ns: i64,
    pub idle_ns: i64,
    pub overhead_ns: i64,
    pub elapsed_ns: i64,
}

impl ChannelAccounting {
    pub fn add(&mut self, other: &ChannelAccounting) {
        self.busy_ns += other.busy_ns;
        self.idle_ns += other.idle_ns;
        self.overhead_ns += other.overhead_ns;
        self.elapsed_ns += other.elapsed_ns;
    }

    pub fn balanced(&self) -> bool {
        self.busy_ns + self.idle_ns + self.overhead_ns == self.elapsed_ns
    }
}

/// Counts of invariant checks performed during a run. A run that violates
/// any of them aborts with an error instead of producing a report, so the
/// counters only say how much was verified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantChecks {
    /// Grants whose burst landed at the destination inside its window.
    pub bursts_in_window: u64,
    /// Consecutive grant windows verified to abut exactly.
    pub windows_abutting: u64,
    /// Saturated consecutive bursts whose gap was exactly `Δ_R`.
    pub saturated_gaps: u64,
    /// Grants verified to reach their source no later than their start.
    pub feasible_grants: u64,
    /// Grants verified for served + deficit + forfeit = d.
    pub conserved_grants: u64,
    /// Largest number of simultaneously busy transmitters seen at a source.
    pub max_active_transmitters: usize,
}

/// Result of one simulation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub horizon_s: f64,
    pub warmup_s: f64,
    /// Largest scheduling offset over destinations, microseconds.
    pub offset_us: f64,
    /// Mean of the per-destination offsets, microseconds.
    pub mean_offset_us: f64,
    pub nb_delay_samples: u64,
    pub mean_nb_delay_ms: Option<f64>,
    pub max_nb_delay_ms: Option<f64>,
    pub flows_completed: u64,
    /// Total bits of completed flows over their total response time.
    pub mean_throughput_mbps: Option<f64>,
    /// Average of per-flow size/response ratios.
    pub mean_flow_rate_mbps: Option<f64>,
    /// Time-weighted distribution of the backlogged flow count of one
    /// source-destination pair, pooled over pairs.
    pub flow_count_distribution: Vec<f64>,
    pub mean_flow_count: f64,
    /// Highest backlogged flow count seen at any pair.
    pub flow_count_watermark: usize,
    /// Total backlogged flows in the system sampled at regular instants.
    pub flow_count_trace: Vec<usize>,
    pub mean_cycle_us: Option<f64>,
    pub cycle_samples: u64,
    /// Grant time lost to blocking or late arrival over granted data time.
    pub blocked_fraction: f64,
    /// Granted data time actually usable, as a fraction of granted time.
    pub effective_capacity: f64,
    pub channel: ChannelAccounting,
    /// Offered load per destination channel measured over the window.
    pub offered_load: f64,
    pub offered_backlogged: f64,
    pub offered_nonbacklogged: f64,
    pub unfinished_flows: u64,
    pub queued_packets: u64,
    /// Fewer than 10⁴ delay samples where delay was to be measured.
    pub low_confidence: bool,
    pub checks: InvariantChecks,
    pub events: u64,
}
