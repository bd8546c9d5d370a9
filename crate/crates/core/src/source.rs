//! Source-side protocol: transmitter arbitration, burst formation, deficit
//! tracking and reports.
//!
//! A source receives grants from every destination it talks to. Grants are
//! served in arrival order by a pool of tunable transmitters; when a grant
//! starts while every transmitter is busy it waits, and whatever part of its
//! data window has gone by when a transmitter frees up is lost. That lost
//! time is the deficit, which the next report hands back to the destination.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grant::Grant;
use crate::time::{LineRate, TimePoint, TimeSpan};
use crate::topology::NodeId;

/// Message trailing every burst.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    /// Channel time of non-backlogged arrivals since the previous report,
    /// plus the deficit accrued over the same period.
    pub nonbacklogged: TimeSpan,
    /// Backlogged flows queued at the instant of emission.
    pub backlogged: u32,
    pub emitted: TimePoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct NbPacket {
    born: TimePoint,
    remaining: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackloggedFlow {
    pub id: u64,
    pub born: TimePoint,
    pub size: u64,
    pub remaining: u64,
}

/// What a fragment carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    Packet { born: TimePoint },
    Flow { id: u64, born: TimePoint, size: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub payload: Payload,
    pub bytes: u64,
    /// Offset of the fragment's last bit from the start of the burst.
    pub end_offset: TimeSpan,
    /// The fragment carries the last byte of its packet or flow.
    pub completes: bool,
}

/// Data portion of one grant as actually transmitted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Burst {
    pub fragments: Vec<Fragment>,
    /// Channel time occupied by data.
    pub used: TimeSpan,
    /// Usable time left unfilled: nothing else was queued, or a flow ended
    /// inside its quantum.
    pub forfeited: TimeSpan,
}

impl Burst {
    pub fn bytes(&self) -> u64 {
        self.fragments.iter().map(|f| f.bytes).sum()
    }
}

/// Everything a source holds for one destination.
#[derive(Clone, Debug)]
pub struct DestinationQueue {
    rate: LineRate,
    nb: VecDeque<NbPacket>,
    flows: Vec<BackloggedFlow>,
    cursor: usize,
    quantum_left: Option<u64>,
    deficit: TimeSpan,
    nb_since_report: TimeSpan,
    generated: u64,
    sent: u64,
}

impl DestinationQueue {
    pub fn new(rate: LineRate) -> Self {
        DestinationQueue {
            rate,
            nb: VecDeque::new(),
            flows: Vec::new(),
            cursor: 0,
            quantum_left: None,
            deficit: TimeSpan::ZERO,
            nb_since_report: TimeSpan::ZERO,
            generated: 0,
            sent: 0,
        }
    }

    pub fn push_packet(&mut self, born: TimePoint, bytes: u32) {
        assert!(bytes > 0);
        self.nb.push_back(NbPacket { born, remaining: bytes });
        self.nb_since_report += self.rate.tx_time(bytes as u64);
        self.generated += bytes as u64;
    }

    pub fn push_flow(&mut self, id: u64, born: TimePoint, size: u64) {
        assert!(size > 0);
        self.flows.push(BackloggedFlow { id, born, size, remaining: size });
        self.generated += size;
    }

    pub fn backlogged_count(&self) -> usize {
        self.flows.len()
    }

    pub fn flows(&self) -> &[BackloggedFlow] {
        &self.flows
    }

    pub fn queued_packets(&self) -> usize {
        self.nb.len()
    }

    pub fn cursor(&self) -> Option<usize> {
        (!self.flows.is_empty()).then_some(self.cursor)
    }

    pub fn deficit(&self) -> TimeSpan {
        self.deficit
    }

    /// Nothing queued and nothing waiting to be reported.
    pub fn is_quiet(&self) -> bool {
        self.nb.is_empty() && self.flows.is_empty() && self.deficit == TimeSpan::ZERO && self.nb_since_report == TimeSpan::ZERO
    }

    pub fn generated_bytes(&self) -> u64 {
        self.generated
    }

    pub fn sent_bytes(&self) -> u64 {
        self.sent
    }

    pub fn queued_bytes(&self) -> u64 {
        self.nb.iter().map(|p| p.remaining as u64).sum::<u64>() + self.flows.iter().map(|f| f.remaining).sum::<u64>()
    }

    /// Credits `nominal − used` of grant time that could not be used.
    pub fn record_deficit(&mut self, nominal: TimeSpan, used: TimeSpan) -> Result<()> {
        if used > nominal || used.is_negative() {
            return Err(Error::Invariant {
                at_ns: 0,
                what: format!("grant use {used} outside nominal {nominal}"),
            });
        }
        self.deficit += nominal - used;
        Ok(())
    }

    /// Report emitted now; both accumulators restart from zero.
    pub fn build_report(&mut self, now: TimePoint) -> Report {
        let r = Report {
            nonbacklogged: self.nb_since_report + self.deficit,
            backlogged: self.flows.len() as u32,
            emitted: now,
        };
        self.nb_since_report = TimeSpan::ZERO;
        self.deficit = TimeSpan::ZERO;
        r
    }

    /// Fills `usable` channel time: queued non-backlogged packets first,
    /// oldest first, then as many quanta of backlogged flows as fit, in
    /// round robin order from where the previous burst stopped. A flow that
    /// ends inside its quantum forfeits the rest of it. The last item may be
    /// cut to fit exactly.
    pub fn build_burst(&mut self, usable: TimeSpan, quantum: u64) -> Burst {
        let mut burst = Burst::default();
        let budget_total = self.rate.bytes_in(usable);
        let mut budget = budget_total;
        let mut cum = 0u64;

        while budget > 0 {
            let Some(head) = self.nb.front_mut() else { break };
            let send = (head.remaining as u64).min(budget);
            head.remaining -= send as u32;
            budget -= send;
            cum += send;
            let completes = head.remaining == 0;
            burst.fragments.push(Fragment {
                payload: Payload::Packet { born: head.born },
                bytes: send,
                end_offset: self.rate.tx_time(cum),
                completes,
            });
            if completes {
                self.nb.pop_front();
            }
        }

        while budget > 0 && !self.flows.is_empty() {
            if self.cursor >= self.flows.len() {
                self.cursor = 0;
            }
            let allowance = self.quantum_left.take().unwrap_or(quantum);
            let flow = &mut self.flows[self.cursor];
            let send = allowance.min(flow.remaining).min(budget);
            flow.remaining -= send;
            budget -= send;
            cum += send;
            let completes = flow.remaining == 0;
            burst.fragments.push(Fragment {
                payload: Payload::Flow { id: flow.id, born: flow.born, size: flow.size },
                bytes: send,
                end_offset: self.rate.tx_time(cum),
                completes,
            });
            if completes {
                // the rest of its quantum is not used
                budget -= (allowance - send).min(budget);
                self.flows.remove(self.cursor);
            } else if send == allowance {
                self.cursor += 1;
            } else {
                self.quantum_left = Some(allowance - send);
                break;
            }
        }
        if self.cursor >= self.flows.len() {
            self.cursor = 0;
        }
        if self.flows.is_empty() {
            self.quantum_left = None;
        }

        self.sent += cum;
        burst.used = self.rate.tx_time(cum);
        burst.forfeited = usable.max(TimeSpan::ZERO) - burst.used;
        burst
    }
}

/// A grant held by a source, with its schedule converted to global time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingGrant {
    pub grant: Grant,
    pub arrival: TimePoint,
    pub start: TimePoint,
    pub window_end: TimePoint,
}

impl PendingGrant {
    pub fn data_end(&self) -> TimePoint {
        self.start + self.grant.duration
    }

    /// A grant can still send (at least its report) while its data window
    /// has not closed.
    pub fn servable_at(&self, now: TimePoint) -> bool {
        now >= self.start && now >= self.arrival && now <= self.data_end()
    }

    fn order_key(&self) -> (TimePoint, NodeId) {
        (self.arrival, self.grant.destination)
    }
}

/// What the pool decided at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolDecision {
    Serve { grant: PendingGrant, transmitter: usize },
    Expired(PendingGrant),
}

/// Tunable transmitters of one source, serving grants in arrival order
/// (ties by destination id).
#[derive(Clone, Debug)]
pub struct TransmitterPool {
    busy_until: Vec<TimePoint>,
    serving: Vec<Option<NodeId>>,
    ready: Vec<PendingGrant>,
}

impl TransmitterPool {
    pub fn new(transmitters: usize) -> Self {
        assert!(transmitters >= 1);
        TransmitterPool {
            busy_until: vec![TimePoint(i64::MIN); transmitters],
            serving: vec![None; transmitters],
            ready: Vec::new(),
        }
    }

    pub fn transmitters(&self) -> usize {
        self.busy_until.len()
    }

    /// Adds a grant that has both arrived and reached its start time.
    pub fn enqueue_grant(&mut self, g: PendingGrant) {
        let key = g.order_key();
        let pos = self.ready.partition_point(|p| p.order_key() <= key);
        self.ready.insert(pos, g);
    }

    pub fn waiting(&self) -> usize {
        self.ready.len()
    }

    /// Transmitters busy at `now`.
    pub fn active(&self, now: TimePoint) -> usize {
        self.busy_until.iter().filter(|&&b| b > now).count()
    }

    /// Earliest instant a busy transmitter frees up, if any is busy.
    pub fn next_free(&self, now: TimePoint) -> Option<TimePoint> {
        self.busy_until.iter().copied().filter(|&b| b > now).min()
    }

    /// Next action at `now`: drop an expired grant, or start serving the
    /// earliest-arrived ready grant on an idle transmitter. `None` when
    /// nothing can happen until a transmitter frees or a grant starts.
    pub fn poll(&mut self, now: TimePoint) -> Option<PoolDecision> {
        if let Some(pos) = self.ready.iter().position(|g| now > g.data_end()) {
            return Some(PoolDecision::Expired(self.ready.remove(pos)));
        }
        if self.ready.is_empty() {
            return None;
        }
        let tx = self.busy_until.iter().position(|&b| b <= now)?;
        let grant = self.ready.remove(0);
        self.busy_until[tx] = grant.window_end;
        self.serving[tx] = Some(grant.grant.destination);
        Some(PoolDecision::Serve { grant, transmitter: tx })
    }
}

/// Outcome of serving one grant.
#[derive(Clone, Debug)]
pub struct Service {
    pub grant: PendingGrant,
    pub begin: TimePoint,
    pub usable: TimeSpan,
    pub deficit: TimeSpan,
    pub burst: Burst,
}

impl Service {
    /// Global instant the trailing report leaves the source.
    pub fn report_at(&self) -> TimePoint {
        self.grant.data_end()
    }
}

/// Serves `grant` on a transmitter that became available at `begin`.
///
/// Time between the grant's start and `begin` is lost, as is the optional
/// retune guard when the grant is picked up late.
pub fn serve_grant(
    queue: &mut DestinationQueue,
    grant: PendingGrant,
    begin: TimePoint,
    quantum: u64,
    retune_guard: TimeSpan,
) -> Result<Service> {
    let d = grant.grant.duration;
    let late = begin - grant.start;
    if late.is_negative() || late > d {
        return Err(Error::Invariant {
            at_ns: begin.as_nanos(),
            what: format!("grant served outside its window: start {} begin {begin} d {d}", grant.start),
        });
    }
    let guard = if late > TimeSpan::ZERO { retune_guard } else { TimeSpan::ZERO };
    let usable = (d - late - guard).max(TimeSpan::ZERO);
    queue.record_deficit(d, usable)?;
    let burst = queue.build_burst(usable, quantum);
    let deficit = d - usable;
    if burst.used + burst.forfeited + deficit != d {
        return Err(Error::Invariant {
            at_ns: begin.as_nanos(),
            what: format!(
                "grant time not conserved: d={d} used={} forfeited={} deficit={deficit}",
                burst.used, burst.forfeited
            ),
        });
    }
    Ok(Service { grant, begin, usable, deficit, burst })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PKT: u32 = 1000;
    const Q: u64 = 1000;

    fn pt() -> TimeSpan {
        TimeSpan::from_micros(8)
    }

    fn queue() -> DestinationQueue {
        DestinationQueue::new(LineRate::GIGABIT)
    }

    fn flow_ids(b: &Burst) -> Vec<(u64, u64)> {
        b.fragments
            .iter()
            .filter_map(|f| match f.payload {
                Payload::Flow { id, .. } => Some((id, f.bytes)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn nonbacklogged_first_then_round_robin() {
        let mut q = queue();
        for i in 0..3 {
            q.push_packet(TimePoint(i), PKT);
        }
        for id in 1..=4 {
            q.push_flow(id, TimePoint(0), 1_000_000);
        }
        let b = q.build_burst(pt() * 5, Q);
        assert_eq!(b.fragments.iter().filter(|f| matches!(f.payload, Payload::Packet { .. })).count(), 3);
        assert_eq!(flow_ids(&b), vec![(1, 1000), (2, 1000)]);
        assert_eq!(q.cursor(), Some(2));
        assert_eq!(b.used, pt() * 5);
        assert_eq!(b.forfeited, TimeSpan::ZERO);
    }

    #[test]
    fn fragment_last_quantum_and_resume() {
        let mut q = queue();
        for id in 1..=4 {
            q.push_flow(id, TimePoint(0), 1_000_000);
        }
        // move cursor to f3
        q.build_burst(pt() * 2, Q);
        assert_eq!(q.cursor(), Some(2));
        let b = q.build_burst(TimeSpan::from_micros(28), Q);
        assert_eq!(flow_ids(&b), vec![(3, 1000), (4, 1000), (1, 1000), (2, 500)]);
        assert_eq!(q.cursor(), Some(1));
        // next burst finishes f2's quantum before moving on
        let b = q.build_burst(pt() * 2, Q);
        assert_eq!(flow_ids(&b), vec![(2, 500), (3, 1000), (4, 500)]);
    }

    #[test]
    fn ending_flow_forfeits_residual() {
        let mut q = queue();
        q.push_flow(1, TimePoint(0), 500);
        q.push_flow(2, TimePoint(0), 1_000_000);
        let b = q.build_burst(pt() * 2, Q);
        assert_eq!(flow_ids(&b), vec![(1, 500), (2, 1000)]);
        assert!(b.fragments[0].completes);
        assert_eq!(b.forfeited, TimeSpan::from_micros(4));
        assert_eq!(q.backlogged_count(), 1);
    }

    #[test]
    fn regranted_deficit_is_spent_on_further_quanta() {
        let mut q = queue();
        q.push_flow(7, TimePoint(0), 10_000_000);
        // 5 µs of an 8 µs grant survive blocking, the rest comes back later
        let b1 = q.build_burst(TimeSpan::from_micros(5), Q);
        assert_eq!(b1.bytes(), 625);
        let b2 = q.build_burst(TimeSpan::from_micros(11), Q);
        assert_eq!(b2.bytes(), 1375);
        assert_eq!(b2.forfeited, TimeSpan::ZERO);
        assert_eq!(flow_ids(&b2), vec![(7, 375), (7, 1000)]);
    }

    #[test]
    fn zero_usable_sends_nothing() {
        let mut q = queue();
        q.push_packet(TimePoint(0), PKT);
        let b = q.build_burst(TimeSpan::ZERO, Q);
        assert!(b.fragments.is_empty());
        assert_eq!(q.queued_packets(), 1);
    }

    #[test]
    fn packet_fragmented_across_bursts() {
        let mut q = queue();
        q.push_packet(TimePoint(0), PKT);
        let b = q.build_burst(TimeSpan::from_micros(3), Q);
        assert_eq!(b.fragments.len(), 1);
        assert_eq!(b.fragments[0].bytes, 375);
        assert!(!b.fragments[0].completes);
        let b = q.build_burst(pt(), Q);
        assert_eq!(b.fragments[0].bytes, 625);
        assert!(b.fragments[0].completes);
        assert_eq!(q.sent_bytes(), 1000);
    }

    #[test]
    fn reports() {
        let mut q = queue();
        q.push_packet(TimePoint(0), PKT);
        q.push_packet(TimePoint(1), PKT);
        for id in 0..7 {
            q.push_flow(id, TimePoint(0), 5000);
        }
        let r = q.build_report(TimePoint(10));
        assert_eq!((r.nonbacklogged, r.backlogged), (TimeSpan::from_micros(16), 7));

        let mut q = queue();
        q.record_deficit(TimeSpan::from_micros(10), TimeSpan::from_micros(6)).unwrap();
        let r = q.build_report(TimePoint(0));
        assert_eq!((r.nonbacklogged, r.backlogged), (TimeSpan::from_micros(4), 0));
        let r = q.build_report(TimePoint(1));
        assert_eq!((r.nonbacklogged, r.backlogged), (TimeSpan::ZERO, 0));
    }

    #[test]
    fn deficit_accounting_errors() {
        let mut q = queue();
        assert!(q.record_deficit(TimeSpan(5), TimeSpan(6)).is_err());
    }

    fn pending(dest: u16, start_us: i64, end_us: i64, arrival_us: i64) -> PendingGrant {
        let start = TimePoint(start_us * 1000);
        let d = TimeSpan::from_micros(end_us - start_us);
        PendingGrant {
            grant: Grant { destination: NodeId(dest), source: NodeId(9), epoch: TimePoint(0), start, duration: d, number: 0 },
            arrival: TimePoint(arrival_us * 1000),
            start,
            window_end: start + d,
        }
    }

    fn us(t: i64) -> TimePoint {
        TimePoint(t * 1000)
    }

    #[test]
    fn idle_transmitter_serves_at_start() {
        let mut pool = TransmitterPool::new(1);
        let a = pending(1, 10, 20, 5);
        assert!(!a.servable_at(us(5)));
        pool.enqueue_grant(a);
        match pool.poll(us(10)) {
            Some(PoolDecision::Serve { grant, .. }) => assert_eq!(grant, a),
            other => panic!("{other:?}"),
        }
        assert_eq!(pool.next_free(us(10)), Some(us(20)));
    }

    #[test]
    fn blocked_grant_resumes_with_deficit() {
        let mut pool = TransmitterPool::new(1);
        let mut q = queue();
        for id in 0..4 {
            q.push_flow(id, TimePoint(0), 10_000_000);
        }
        let a = pending(1, 10, 20, 1);
        let b = pending(2, 15, 25, 2);
        pool.enqueue_grant(a);
        let Some(PoolDecision::Serve { grant, .. }) = pool.poll(us(10)) else { panic!() };
        let sa = serve_grant(&mut q, grant, us(10), Q, TimeSpan::ZERO).unwrap();
        assert_eq!(sa.deficit, TimeSpan::ZERO);
        pool.enqueue_grant(b);
        assert_eq!(pool.poll(us(15)), None);
        let Some(PoolDecision::Serve { grant, .. }) = pool.poll(us(20)) else { panic!() };
        let sb = serve_grant(&mut q, grant, us(20), Q, TimeSpan::ZERO).unwrap();
        assert_eq!(sb.deficit, TimeSpan::from_micros(5));
        assert_eq!(sb.usable, TimeSpan::from_micros(5));
        assert_eq!(q.deficit(), TimeSpan::from_micros(5));
    }

    #[test]
    fn two_transmitters_no_contention() {
        let mut pool = TransmitterPool::new(2);
        pool.enqueue_grant(pending(1, 10, 20, 1));
        assert!(matches!(pool.poll(us(10)), Some(PoolDecision::Serve { transmitter: 0, .. })));
        pool.enqueue_grant(pending(2, 15, 25, 2));
        assert!(matches!(pool.poll(us(15)), Some(PoolDecision::Serve { transmitter: 1, .. })));
        assert_eq!(pool.active(us(16)), 2);
    }

    #[test]
    fn nested_grant_fully_blocked() {
        let mut pool = TransmitterPool::new(1);
        let mut q = queue();
        pool.enqueue_grant(pending(1, 10, 40, 1));
        let Some(PoolDecision::Serve { .. }) = pool.poll(us(10)) else { panic!() };
        let inner = pending(2, 15, 25, 2);
        pool.enqueue_grant(inner);
        assert_eq!(pool.poll(us(15)), None);
        assert_eq!(pool.poll(us(40)), Some(PoolDecision::Expired(inner)));
        q.record_deficit(inner.grant.duration, TimeSpan::ZERO).unwrap();
        assert_eq!(q.deficit(), TimeSpan::from_micros(10));
    }

    #[test]
    fn late_grant_counts_lateness() {
        let mut q = queue();
        q.push_packet(TimePoint(0), 2000);
        let g = pending(1, 10, 20, 13);
        let s = serve_grant(&mut q, g, us(13), Q, TimeSpan::ZERO).unwrap();
        assert_eq!(s.deficit, TimeSpan::from_micros(3));
        assert_eq!(s.burst.used, TimeSpan::from_micros(7));
    }

    #[test]
    fn arrival_order_ties_by_destination() {
        let mut pool = TransmitterPool::new(1);
        pool.enqueue_grant(pending(5, 10, 20, 3));
        pool.enqueue_grant(pending(2, 10, 20, 3));
        let Some(PoolDecision::Serve { grant, .. }) = pool.poll(us(10)) else { panic!() };
        assert_eq!(grant.grant.destination, NodeId(2));
    }
}
