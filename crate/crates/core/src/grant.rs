//! Destination-side grant scheduling.
//!
//! Each destination runs one [`GrantState`]: it formulates grants strictly
//! one after another, sizing each from the reports its [`AllocationLedger`]
//! has collected for the chosen source, and timing it so that successive
//! bursts reach the destination back to back with exactly `Δ_R` of report and
//! guard time between leading edges.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::Report;
use crate::time::{TimePoint, TimeSpan};
use crate::topology::NodeId;

/// A grant as formulated by a destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub destination: NodeId,
    pub source: NodeId,
    /// Formulation epoch g(n), destination clock.
    pub epoch: TimePoint,
    /// Start time s(n), on the source's clock toward `destination`.
    pub start: TimePoint,
    /// Data duration d(n). The grant window also covers `Δ_R` after it.
    pub duration: TimeSpan,
    /// Sequence number n of the grant at its destination.
    pub number: u64,
}

/// Picks the source for the next grant: uniform over every source except
/// the current one, or uniform over all of them for the first grant.
///
/// With a single source there is nothing to exclude and it is always chosen.
pub fn next_source<R: Rng + ?Sized>(current: Option<usize>, source_count: usize, rng: &mut R) -> usize {
    assert!(source_count >= 1, "a destination needs at least one source");
    match current {
        _ if source_count == 1 => 0,
        None => rng.random_range(0..source_count),
        Some(cur) => {
            let k = rng.random_range(0..source_count - 1);
            if k >= cur {
                k + 1
            } else {
                k
            }
        }
    }
}

/// Recursion state of one destination's grant sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrantState {
    destination: NodeId,
    sources: Vec<NodeId>,
    rtt: Vec<TimeSpan>,
    offset: TimeSpan,
    overhead: TimeSpan,
    tolerance: TimeSpan,
    first_epoch: TimePoint,
    epoch: TimePoint,
    duration: TimeSpan,
    last: Option<usize>,
    issued: u64,
}

impl GrantState {
    /// Sets up the recursion with the smallest feasible offset,
    /// `Δ_O = max RTT + τ`. The first grant is formulated at `first_epoch`
    /// (destination clock).
    pub fn new(
        destination: NodeId,
        sources: Vec<(NodeId, TimeSpan)>,
        overhead: TimeSpan,
        tolerance: TimeSpan,
        first_epoch: TimePoint,
    ) -> Result<Self> {
        let max_rtt = sources.iter().map(|&(_, r)| r).max().unwrap_or(TimeSpan::ZERO);
        Self::with_offset(destination, sources, overhead, tolerance, max_rtt + tolerance, first_epoch)
    }

    pub fn with_offset(
        destination: NodeId,
        sources: Vec<(NodeId, TimeSpan)>,
        overhead: TimeSpan,
        tolerance: TimeSpan,
        offset: TimeSpan,
        first_epoch: TimePoint,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("destination without sources"));
        }
        if overhead <= TimeSpan::ZERO {
            return Err(Error::invalid("Δ_R must be positive"));
        }
        if tolerance.is_negative() {
            return Err(Error::invalid("τ must be non-negative"));
        }
        let max_rtt = sources.iter().map(|&(_, r)| r).max().unwrap();
        if offset < max_rtt + tolerance {
            return Err(Error::invalid(format!(
                "offset {offset} below max RTT {max_rtt} + τ {tolerance}: grants could miss their start"
            )));
        }
        let (ids, rtt) = sources.into_iter().unzip();
        Ok(GrantState {
            destination,
            sources: ids,
            rtt,
            offset,
            overhead,
            tolerance,
            first_epoch,
            epoch: first_epoch,
            duration: TimeSpan::ZERO,
            last: None,
            issued: 0,
        })
    }

    pub fn destination(&self) -> NodeId {
        self.destination
    }

    pub fn sources(&self) -> &[NodeId] {
        &self.sources
    }

    pub fn offset(&self) -> TimeSpan {
        self.offset
    }

    pub fn overhead(&self) -> TimeSpan {
        self.overhead
    }

    pub fn tolerance(&self) -> TimeSpan {
        self.tolerance
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn last_source(&self) -> Option<NodeId> {
        self.last.map(|i| self.sources[i])
    }

    pub fn rtt_of(&self, source: NodeId) -> TimeSpan {
        self.rtt[self.slot(source)]
    }

    fn slot(&self, source: NodeId) -> usize {
        self.sources
            .iter()
            .position(|&s| s == source)
            .unwrap_or_else(|| panic!("{source} is not a source of {}", self.destination))
    }

    /// Epoch at which the next grant will be formulated:
    /// `g(n+1) = g(n) + d(n) + Δ_R`.
    pub fn next_epoch(&self) -> TimePoint {
        if self.issued == 0 {
            self.first_epoch
        } else {
            self.epoch + self.duration + self.overhead
        }
    }

    /// Draws the next source per [`next_source`].
    pub fn choose_source<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        self.sources[next_source(self.last, self.sources.len(), rng)]
    }

    /// Issues grant n+1 to `source` with data duration `duration`, returning
    /// `g(n+1)` and `s(n+1) = g(n+1) + Δ_O − RTT`.
    pub fn advance(&mut self, source: NodeId, duration: TimeSpan) -> Grant {
        assert!(!duration.is_negative(), "negative grant duration");
        let slot = self.slot(source);
        let epoch = self.next_epoch();
        let start = epoch + self.offset - self.rtt[slot];
        let number = self.issued;
        self.epoch = epoch;
        self.duration = duration;
        self.last = Some(slot);
        self.issued += 1;
        Grant {
            destination: self.destination,
            source,
            epoch,
            start,
            duration,
            number,
        }
    }

    /// Destination-clock instant at which the leading edge of the burst for
    /// a grant formulated at `epoch` reaches the destination.
    pub fn arrival_at_destination(&self, epoch: TimePoint) -> TimePoint {
        epoch + self.offset
    }
}

/// Reports received per source since its last grant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Reported non-backlogged channel time plus deficits, summed.
    pub pending: TimeSpan,
    /// Backlogged flow count from the latest report.
    pub backlogged: u32,
    pub reports: u64,
}

impl LedgerEntry {
    pub fn absorb(&mut self, report: &Report) {
        self.pending += report.nonbacklogged;
        self.backlogged = report.backlogged;
        self.reports += 1;
    }
}

/// Grant duration for a source: every reported second of non-backlogged
/// traffic and deficit, plus one quantum per backlogged flow in the latest
/// report. Zero is a valid answer: the grant then only carries a report.
pub fn compute_allocation(entry: &LedgerEntry, quantum: TimeSpan) -> TimeSpan {
    entry.pending + quantum * entry.backlogged as i64
}

/// Per-source aggregation of reports at one destination.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AllocationLedger {
    quantum: TimeSpan,
    cap: Option<TimeSpan>,
    entries: Vec<LedgerEntry>,
    reported: TimeSpan,
    granted: TimeSpan,
}

impl AllocationLedger {
    pub fn new(source_slots: usize, quantum: TimeSpan, cap: Option<TimeSpan>) -> Self {
        AllocationLedger {
            quantum,
            cap,
            entries: vec![LedgerEntry::default(); source_slots],
            reported: TimeSpan::ZERO,
            granted: TimeSpan::ZERO,
        }
    }

    pub fn quantum(&self) -> TimeSpan {
        self.quantum
    }

    pub fn entry(&self, slot: usize) -> &LedgerEntry {
        &self.entries[slot]
    }

    pub fn receive(&mut self, slot: usize, report: &Report) {
        self.reported += report.nonbacklogged;
        self.entries[slot].absorb(report);
    }

    /// Sizes a grant for `slot` and drains the reported time it covers. With
    /// a cap, whatever does not fit stays in the ledger for the next grant.
    pub fn allocate(&mut self, slot: usize) -> TimeSpan {
        let entry = &mut self.entries[slot];
        let mut d = compute_allocation(entry, self.quantum);
        let mut drained = entry.pending;
        if let Some(cap) = self.cap {
            if d > cap {
                d = cap;
                drained = entry.pending.min(cap);
            }
        }
        entry.pending -= drained;
        self.granted += drained;
        d
    }

    /// Reported non-backlogged time and deficit received so far.
    pub fn total_reported(&self) -> TimeSpan {
        self.reported
    }

    /// Reported time already covered by grants.
    pub fn total_granted(&self) -> TimeSpan {
        self.granted
    }

    pub fn outstanding(&self) -> TimeSpan {
        self.entries.iter().map(|e| e.pending).sum()
    }
}

/// Model for the out-of-band grant transport beyond propagation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantJitter {
    /// Grants arrive after exactly the one-way propagation delay.
    #[default]
    None,
    /// An extra delay uniform on `[0, τ]`.
    Uniform,
}

impl GrantJitter {
    pub fn sample<R: Rng + ?Sized>(self, tolerance: TimeSpan, rng: &mut R) -> TimeSpan {
        match self {
            GrantJitter::None => TimeSpan::ZERO,
            GrantJitter::Uniform => TimeSpan(rng.random_range(0..=tolerance.as_nanos())),
        }
    }
}

/// Arrival time (global) of a grant released at `epoch` (global) over a path
/// with one-way delay `one_way` and signalling increment `increment`.
pub fn grant_delivery_time(epoch: TimePoint, one_way: TimeSpan, increment: TimeSpan) -> TimePoint {
    epoch + one_way + increment
}
