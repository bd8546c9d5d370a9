//! Per-wavelength local clocks and the timestamp exchange that measures
//! round-trip times.
//!
//! Every router keeps one clock for its own (destination) wavelength and one
//! source-role clock per remote destination. A clock is stored as an offset
//! from simulator global time: `reading = global + offset`. Clocks never
//! drift, so one exchange per pair at start-up fixes them for the run.
//!
//! Only the round-trip time leaves this module. One-way delays stay inside
//! [`PropagationMatrix`], which the simulator uses to move signals around but
//! which protocol logic never reads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{TimePoint, TimeSpan};
use crate::topology::NodeId;

/// One-way propagation delay for every ordered pair of routers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationMatrix {
    delays: Vec<Vec<TimeSpan>>,
}

impl PropagationMatrix {
    /// `delays[i][j]` is the delay from `i` to `j`. Off-diagonal entries must
    /// be strictly positive; the diagonal is ignored.
    pub fn new(delays: Vec<Vec<TimeSpan>>) -> Result<Self> {
        let n = delays.len();
        for (i, row) in delays.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("propagation row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, d) in row.iter().enumerate() {
                if i != j && d.as_nanos() <= 0 {
                    return Err(Error::Config(format!("propagation delay {i}->{j} must be positive, got {d}")));
                }
            }
        }
        Ok(PropagationMatrix { delays })
    }

    /// Builds the matrix from per-pair one-way delays given in microseconds.
    pub fn from_micros(us: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            us.iter()
                .map(|row| row.iter().map(|&d| TimeSpan::from_micros_f64(d)).collect())
                .collect(),
        )
    }

    /// Draws a round-trip time uniformly in `[rtt_min, rtt_max]` for every
    /// unordered pair and splits it at a uniform random point into the two
    /// one-way delays.
    pub fn generate<R: Rng + ?Sized>(n: usize, rtt_min: TimeSpan, rtt_max: TimeSpan, rng: &mut R) -> Self {
        assert!(rtt_min.as_nanos() >= 2 && rtt_max >= rtt_min, "rtt range must be positive");
        let mut delays = vec![vec![TimeSpan::ZERO; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let rtt = rng.random_range(rtt_min.as_nanos()..=rtt_max.as_nanos());
                let there = ((rtt as f64 * rng.random::<f64>()).round() as i64).clamp(1, rtt - 1);
                delays[i][j] = TimeSpan(there);
                delays[j][i] = TimeSpan(rtt - there);
            }
        }
        PropagationMatrix { delays }
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn one_way(&self, from: NodeId, to: NodeId) -> TimeSpan {
        self.delays[from.index()][to.index()]
    }

    pub fn max_one_way(&self) -> TimeSpan {
        let mut m = TimeSpan::ZERO;
        for (i, row) in self.delays.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                if i != j {
                    m = m.max(d);
                }
            }
        }
        m
    }

    pub fn min_one_way(&self) -> TimeSpan {
        let mut m = TimeSpan(i64::MAX);
        for (i, row) in self.delays.iter().enumerate() {
            for (j, &d) in row.iter().enumerate() {
                if i != j {
                    m = m.min(d);
                }
            }
        }
        m
    }
}

/// The clocks held by one router: one destination-role clock and one
/// source-role clock per remote destination.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalClockSet {
    node: NodeId,
    destination_offset: TimeSpan,
    // Indexed by remote node id; the entry for `node` itself is unused.
    source_offsets: Vec<TimeSpan>,
}

impl LocalClockSet {
    /// A fresh, unsynchronized clock set. Source-role clocks start out
    /// reading the same as the destination clock.
    pub fn new(node: NodeId, node_count: usize, destination_offset: TimeSpan) -> Self {
        LocalClockSet {
            node,
            destination_offset,
            source_offsets: vec![destination_offset; node_count],
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Total number of clocks: one destination clock plus one per peer.
    pub fn clock_count(&self) -> usize {
        self.source_offsets.len()
    }

    pub fn destination_offset(&self) -> TimeSpan {
        self.destination_offset
    }

    pub fn source_offset(&self, toward: NodeId) -> TimeSpan {
        self.source_offsets[toward.index()]
    }

    /// Destination clock reading at global time `global`.
    pub fn destination_reading(&self, global: TimePoint) -> TimePoint {
        global + self.destination_offset
    }

    /// Global time at which the destination clock reads `local`.
    pub fn destination_to_global(&self, local: TimePoint) -> TimePoint {
        local - self.destination_offset
    }

    /// Reading of the source-role clock toward `toward` at global time `global`.
    pub fn source_reading(&self, toward: NodeId, global: TimePoint) -> TimePoint {
        global + self.source_offsets[toward.index()]
    }

    /// Global time at which the source-role clock toward `toward` reads `local`.
    pub fn source_to_global(&self, toward: NodeId, local: TimePoint) -> TimePoint {
        local - self.source_offsets[toward.index()]
    }

    /// Sets the source-role clock toward `sender` so that it reads `t1` at
    /// global instant `receipt`. Later timestamps overwrite earlier ones.
    pub fn apply_timestamp(&mut self, sender: NodeId, t1: TimePoint, receipt: TimePoint) {
        self.source_offsets[sender.index()] = t1 - receipt;
    }
}

/// Round-trip time from the source emission stamp `t2` (source-role clock)
/// and the destination receipt stamp `t3` (destination clock).
pub fn measure_rtt(t2: TimePoint, t3: TimePoint) -> Result<TimeSpan> {
    let rtt = t3 - t2;
    if rtt.is_negative() {
        return Err(Error::Invariant {
            at_ns: t3.as_nanos(),
            what: format!("negative round-trip time {rtt} (t2={t2}, t3={t3})"),
        });
    }
    Ok(rtt)
}

/// Round-trip times as seen by each destination, `rtt[dest][source]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttTable {
    rtt: Vec<Vec<TimeSpan>>,
}

impl RttTable {
    pub fn get(&self, dest: NodeId, source: NodeId) -> TimeSpan {
        self.rtt[dest.index()][source.index()]
    }

    pub fn max_for(&self, dest: NodeId, sources: &[NodeId]) -> TimeSpan {
        sources.iter().map(|&s| self.get(dest, s)).max().unwrap_or(TimeSpan::ZERO)
    }
}

/// Runs the start-up exchange for every (destination, source) pair in
/// `pairs`: the destination stamps a message with its clock, the source sets
/// its clock on receipt and immediately answers with its own stamp, and the
/// destination derives the round-trip time.
pub fn bootstrap(
    prop: &PropagationMatrix,
    clocks: &mut [LocalClockSet],
    pairs: &[(NodeId, NodeId)],
    at: TimePoint,
) -> Result<RttTable> {
    let n = clocks.len();
    let mut rtt = vec![vec![TimeSpan::ZERO; n]; n];
    for &(dest, src) in pairs {
        let t1 = clocks[dest.index()].destination_reading(at);
        let receipt = at + prop.one_way(dest, src);
        clocks[src.index()].apply_timestamp(dest, t1, receipt);
        let t2 = clocks[src.index()].source_reading(dest, receipt);
        let back = receipt + prop.one_way(src, dest);
        let t3 = clocks[dest.index()].destination_reading(back);
        rtt[dest.index()][src.index()] = measure_rtt(t2, t3)?;
    }
    Ok(RttTable { rtt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn timestamp_sets_lagging_clock() {
        let mut c = LocalClockSet::new(NodeId(1), 2, TimeSpan::ZERO);
        let receipt = TimePoint(250_000);
        c.apply_timestamp(NodeId(0), TimePoint(0), receipt);
        assert_eq!(c.source_reading(NodeId(0), receipt), TimePoint(0));
        assert_eq!(c.source_offset(NodeId(0)), TimeSpan::from_micros(-250));
    }

    #[test]
    fn receiver_lags_sender_by_propagation() {
        let sender = LocalClockSet::new(NodeId(0), 2, TimeSpan::ZERO);
        let mut recv = LocalClockSet::new(NodeId(1), 2, TimeSpan::from_millis(3));
        let emit = TimePoint(100_000);
        let t1 = sender.destination_reading(emit);
        recv.apply_timestamp(NodeId(0), t1, emit + TimeSpan::from_micros(20));
        let later = TimePoint(777_777);
        let lag = sender.destination_reading(later) - recv.source_reading(NodeId(0), later);
        assert_eq!(lag, TimeSpan::from_micros(20));
    }

    #[test]
    fn latest_timestamp_wins() {
        let mut c = LocalClockSet::new(NodeId(1), 3, TimeSpan::ZERO);
        c.apply_timestamp(NodeId(2), TimePoint(10), TimePoint(50));
        c.apply_timestamp(NodeId(2), TimePoint(1_000), TimePoint(1_007));
        assert_eq!(c.source_offset(NodeId(2)), TimeSpan(-7));
        assert_eq!(c.source_offset(NodeId(0)), TimeSpan::ZERO);
    }

    #[test]
    fn rtt_is_difference_of_stamps() {
        let rtt = measure_rtt(TimePoint(5_000), TimePoint(12_000)).unwrap();
        assert_eq!(rtt, TimeSpan::from_micros(7));
        assert!(measure_rtt(TimePoint(12), TimePoint(5)).is_err());
    }

    #[test]
    fn asymmetric_exchange() {
        let prop = PropagationMatrix::from_micros(&[vec![0.0, 30.0], vec![10.0, 0.0]]).unwrap();
        let mut clocks = vec![
            LocalClockSet::new(NodeId(0), 2, TimeSpan::from_micros(-400)),
            LocalClockSet::new(NodeId(1), 2, TimeSpan::from_micros(9_000)),
        ];
        // destination 1 polls source 0: RTT = 0->1 + 1->0
        let table = bootstrap(&prop, &mut clocks, &[(NodeId(1), NodeId(0))], TimePoint(123)).unwrap();
        assert_eq!(table.get(NodeId(1), NodeId(0)), TimeSpan::from_micros(40));
    }

    #[test]
    fn symmetric_metro_bound() {
        let prop = PropagationMatrix::from_micros(&[vec![0.0, 500.0], vec![500.0, 0.0]]).unwrap();
        let mut clocks = vec![
            LocalClockSet::new(NodeId(0), 2, TimeSpan::ZERO),
            LocalClockSet::new(NodeId(1), 2, TimeSpan::ZERO),
        ];
        let table = bootstrap(&prop, &mut clocks, &[(NodeId(0), NodeId(1))], TimePoint(0)).unwrap();
        assert_eq!(table.get(NodeId(0), NodeId(1)), TimeSpan::from_millis(1));
    }

    #[test]
    fn rejects_nonpositive_delay() {
        assert!(PropagationMatrix::from_micros(&[vec![0.0, 0.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn generated_rtts_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lo = TimeSpan::from_micros(20);
        let hi = TimeSpan::from_millis(1);
        let p = PropagationMatrix::generate(6, lo, hi, &mut rng);
        for i in 0..6u16 {
            for j in 0..6u16 {
                if i != j {
                    let rtt = p.one_way(NodeId(i), NodeId(j)) + p.one_way(NodeId(j), NodeId(i));
                    assert!(rtt >= lo && rtt <= hi);
                    assert!(p.one_way(NodeId(i), NodeId(j)).as_nanos() > 0);
                }
            }
        }
    }
}
