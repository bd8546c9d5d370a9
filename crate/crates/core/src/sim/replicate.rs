use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{run, MetricsReport, SimConfig};
use crate::error::{Error, Result};

/// Sample mean with a 95% Student-t confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl Estimate {
    /// `None` when fewer than two values are present.
    pub fn from_samples(xs: &[f64]) -> Option<Estimate> {
        let n = xs.len();
        if n < 2 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
        Some(Estimate { mean, half_width: t * (var / n as f64).sqrt(), samples: n })
    }
}

/// Metrics of independent seeds with their confidence intervals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicatedReport {
    pub seeds: Vec<u64>,
    pub mean_nb_delay_ms: Option<Estimate>,
    pub mean_throughput_mbps: Option<Estimate>,
    pub blocked_fraction: Option<Estimate>,
    pub mean_cycle_us: Option<Estimate>,
    pub mean_flow_count: Option<Estimate>,
    pub offered_load: Option<Estimate>,
    pub runs: Vec<MetricsReport>,
}

fn collect(runs: &[MetricsReport], f: impl Fn(&MetricsReport) -> Option<f64>) -> Option<Estimate> {
    let xs: Vec<f64> = runs.iter().filter_map(f).collect();
    Estimate::from_samples(&xs)
}

/// Runs `config` under seeds `config.seed, config.seed + 1, …` in parallel
/// and aggregates. Each run owns its whole state; only the reports are
/// joined.
pub fn run_replications(config: &SimConfig, n_seeds: usize) -> Result<ReplicatedReport> {
    if n_seeds < 2 {
        return Err(Error::Config("replications need at least two seeds".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| config.seed.wrapping_add(k)).collect();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = config.clone();
            c.seed = seed;
            run(&c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicatedReport {
        mean_nb_delay_ms: collect(&runs, |r| r.mean_nb_delay_ms),
        mean_throughput_mbps: collect(&runs, |r| r.mean_throughput_mbps),
        blocked_fraction: collect(&runs, |r| Some(r.blocked_fraction)),
        mean_cycle_us: collect(&runs, |r| r.mean_cycle_us),
        mean_flow_count: collect(&runs, |r| Some(r.mean_flow_count)),
        offered_load: collect(&runs, |r| Some(r.offered_load)),
        seeds,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_constant_has_zero_width() {
        let e = Estimate::from_samples(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.half_width, 0.0);
        assert!(Estimate::from_samples(&[1.0]).is_none());
    }

    #[test]
    fn half_width_uses_student_t() {
        // two samples: t_{0.975,1} = 12.706
        let e = Estimate::from_samples(&[0.0, 2.0]).unwrap();
        assert!((e.half_width - 12.7062 * (2.0f64 / 2.0).sqrt()).abs() < 1e-3);
    }
}
