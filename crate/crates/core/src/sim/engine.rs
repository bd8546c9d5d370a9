use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::event::EventQueue;
use super::metrics::{
    ChannelAccounting, CountTracker, InvariantChecks, MetricsReport, Moments, TimeWeightedHistogram,
};
use super::SimConfig;
use crate::clock::{bootstrap, LocalClockSet, PropagationMatrix};
use crate::error::{Error, Result};
use crate::grant::{AllocationLedger, Grant, GrantState};
use crate::source::{serve_grant, DestinationQueue, Payload, PendingGrant, PoolDecision, Report, TransmitterPool};
use crate::time::{TimePoint, TimeSpan};
use crate::topology::NodeId;
use crate::traffic::{substream, Arrival, PairTraffic};

// Resolved grants waiting to be accounted in grant-number order.
const RING: usize = 1 << 17;
const RING_MASK: u64 = RING as u64 - 1;
// How far the idle fast path may run ahead of the oldest unaccounted grant.
const LOOKAHEAD: u64 = 1 << 16;

#[derive(Clone, Copy, Debug)]
enum Event {
    Formulate(u16),
    GrantReady(PendingGrant),
    Wake(u16),
    Report(u32),
    Traffic(u32),
    Sample,
}

struct Pair {
    dest: usize,
    slot: usize,
    /// Source to destination propagation.
    fwd: TimeSpan,
    /// Destination to source propagation.
    back: TimeSpan,
    queue: DestinationQueue,
    traffic: PairTraffic,
    next_arrival: Option<(TimePoint, Arrival)>,
    flows: CountTracker,
    last_visit: Option<TimePoint>,
    window_nb_bytes: u64,
    window_flow_bytes: u64,
}

#[derive(Clone, Copy, Debug)]
struct Resolved {
    number: u64,
    /// Nominal leading edge of the window at the destination.
    edge: TimePoint,
    duration: TimeSpan,
    used: TimeSpan,
    deficit: TimeSpan,
    /// Arrival of the first data bit (equals `edge` when on time).
    data_edge: TimePoint,
    on_time: bool,
}

struct Dest {
    node: NodeId,
    state: GrantState,
    ledger: AllocationLedger,
    inbox: Vec<VecDeque<(TimePoint, Report)>>,
    /// Reports in `inbox` that carry anything, per slot.
    inbox_live: Vec<u32>,
    pairs: Vec<usize>,
    rng: ChaCha8Rng,
    ring: Vec<Option<Resolved>>,
    next_account: u64,
    last_accounted: Option<Resolved>,
    channel: ChannelAccounting,
    first_edge: Option<TimePoint>,
    granted: TimeSpan,
    lost: TimeSpan,
}

struct Source {
    pool: TransmitterPool,
    wake_at: Option<TimePoint>,
}

/// One simulation run. Build with [`Simulation::new`], consume with
/// [`Simulation::run`].
pub struct Simulation {
    cfg: SimConfig,
    queue: EventQueue<Event>,
    clocks: Vec<LocalClockSet>,
    pairs: Vec<Pair>,
    pair_index: Vec<Vec<u32>>,
    dests: Vec<Dest>,
    sources: Vec<Source>,
    jitter_rng: ChaCha8Rng,
    no_contention: bool,
    horizon: TimePoint,
    warmup_at: TimePoint,
    next_flow_id: u64,
    checks: InvariantChecks,
    nb_delay: Moments,
    flow_bits: f64,
    flow_secs: f64,
    flow_rate: Moments,
    cycles: Moments,
    hist: TimeWeightedHistogram,
    trace: Vec<usize>,
    trace_step: TimeSpan,
    events: u64,
}

fn is_empty_report(r: &Report) -> bool {
    r.nonbacklogged == TimeSpan::ZERO && r.backlogged == 0
}

fn violation(at: TimePoint, what: String) -> Error {
    Error::Invariant { at_ns: at.as_nanos(), what }
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.clone();
        let topo = cfg.topology;
        let n = topo.node_count();
        let prop = match &cfg.propagation {
            Some(p) => p.clone(),
            None => PropagationMatrix::generate(n, cfg.rtt_min, cfg.rtt_max, &mut substream(cfg.seed, 1)),
        };
        let mut offset_rng = substream(cfg.seed, 2);
        let mut clocks: Vec<LocalClockSet> = (0..n)
            .map(|i| {
                let off = if cfg.random_clock_offsets {
                    TimeSpan(offset_rng.random_range(-1_000_000_000..=1_000_000_000))
                } else {
                    TimeSpan::ZERO
                };
                LocalClockSet::new(NodeId(i as u16), n, off)
            })
            .collect();

        let dest_nodes = topo.destinations();
        let mut links = Vec::new();
        for &d in &dest_nodes {
            for s in topo.sources_of(d) {
                links.push((d, s));
            }
        }
        let rtt = bootstrap(&prop, &mut clocks, &links, TimePoint(-10_000_000))?;

        let horizon = TimePoint(cfg.horizon.as_nanos());
        let warmup_at = TimePoint((cfg.horizon.as_nanos() as f64 * cfg.warmup_fraction).round() as i64);
        let quantum = cfg.quantum_time();

        let mut pairs = Vec::with_capacity(links.len());
        let mut pair_index = vec![vec![u32::MAX; n]; n];
        let mut dests = Vec::with_capacity(dest_nodes.len());
        for (di, &d) in dest_nodes.iter().enumerate() {
            let srcs = topo.sources_of(d);
            let mut slots = Vec::with_capacity(srcs.len());
            for (slot, &s) in srcs.iter().enumerate() {
                let idx = pairs.len();
                let mut traffic = PairTraffic::new(&cfg.traffic, idx, cfg.seed);
                let next_arrival = traffic.next();
                pairs.push(Pair {
                    dest: di,
                    slot,
                    fwd: prop.one_way(s, d),
                    back: prop.one_way(d, s),
                    queue: DestinationQueue::new(cfg.rate),
                    traffic,
                    next_arrival,
                    flows: CountTracker::new(),
                    last_visit: None,
                    window_nb_bytes: 0,
                    window_flow_bytes: 0,
                });
                pair_index[d.index()][s.index()] = idx as u32;
                slots.push(idx);
            }
            let first_epoch = clocks[d.index()].destination_reading(TimePoint::ZERO);
            let state = GrantState::new(
                d,
                srcs.iter().map(|&s| (s, rtt.get(d, s))).collect(),
                cfg.delta_r,
                cfg.tau,
                first_epoch,
            )?;
            dests.push(Dest {
                node: d,
                state,
                ledger: AllocationLedger::new(srcs.len(), quantum, cfg.max_grant),
                inbox: vec![VecDeque::new(); srcs.len()],
                inbox_live: vec![0; srcs.len()],
                pairs: slots,
                rng: substream(cfg.seed, 10 + di as u64),
                ring: vec![None; RING],
                next_account: 0,
                last_accounted: None,
                channel: ChannelAccounting::default(),
                first_edge: None,
                granted: TimeSpan::ZERO,
                lost: TimeSpan::ZERO,
            });
        }

        let max_fanout = (0..n).map(|i| topo.destinations_of(NodeId(i as u16)).len()).max().unwrap_or(0);
        let sources = (0..n)
            .map(|_| Source { pool: TransmitterPool::new(cfg.transmitters), wake_at: None })
            .collect();
        let trace_step = TimeSpan((cfg.horizon.as_nanos() / cfg.trace_points.max(1) as i64).max(1));

        let mut sim = Simulation {
            no_contention: cfg.transmitters >= max_fanout,
            jitter_rng: substream(cfg.seed, 3),
            cfg,
            queue: EventQueue::new(),
            clocks,
            pairs,
            pair_index,
            dests,
            sources,
            horizon,
            warmup_at,
            next_flow_id: 0,
            checks: InvariantChecks::default(),
            nb_delay: Moments::default(),
            flow_bits: 0.0,
            flow_secs: 0.0,
            flow_rate: Moments::default(),
            cycles: Moments::default(),
            hist: TimeWeightedHistogram::default(),
            trace: Vec::new(),
            trace_step,
            events: 0,
        };
        for di in 0..sim.dests.len() {
            sim.queue.push(TimePoint::ZERO, Event::Formulate(di as u16));
        }
        for p in 0..sim.pairs.len() {
            if let Some((t, _)) = sim.pairs[p].next_arrival {
                if t <= sim.horizon {
                    sim.queue.push(t, Event::Traffic(p as u32));
                }
            }
        }
        sim.queue.push(TimePoint::ZERO, Event::Sample);
        Ok(sim)
    }

    pub fn run(mut self) -> Result<MetricsReport> {
        while let Some((now, ev)) = self.queue.pop() {
            if now > self.horizon {
                break;
            }
            self.events += 1;
            match ev {
                Event::Formulate(d) => self.formulate(d as usize, now)?,
                Event::GrantReady(pg) => {
                    let src = pg.grant.source.index();
                    self.sources[src].pool.enqueue_grant(pg);
                    self.drive(src, now)?;
                }
                Event::Wake(s) => {
                    let src = s as usize;
                    if self.sources[src].wake_at == Some(now) {
                        self.sources[src].wake_at = None;
                    }
                    self.drive(src, now)?;
                }
                Event::Report(p) => self.emit_report(p as usize, now),
                Event::Traffic(p) => self.arrive(p as usize, now),
                Event::Sample => {
                    self.trace.push(self.pairs.iter().map(|p| p.queue.backlogged_count()).sum());
                    let next = now + self.trace_step;
                    if next <= self.horizon {
                        self.queue.push(next, Event::Sample);
                    }
                }
            }
        }
        self.finish()
    }

    fn formulate(&mut self, di: usize, now: TimePoint) -> Result<()> {
        let dest_node = self.dests[di].node;
        let mut g_global = now;
        loop {
            let d = &mut self.dests[di];
            let source = d.state.choose_source(&mut d.rng);
            let slot = d.state.sources().iter().position(|&s| s == source).unwrap();
            let pi = d.pairs[slot];
            while let Some(&(at, _)) = d.inbox[slot].front() {
                if at > g_global {
                    break;
                }
                let (_, r) = d.inbox[slot].pop_front().unwrap();
                if !is_empty_report(&r) {
                    d.inbox_live[slot] -= 1;
                }
                d.ledger.receive(slot, &r);
            }
            let duration = d.ledger.allocate(slot);
            let grant = d.state.advance(source, duration);
            let start = self.clocks[source.index()].source_to_global(dest_node, grant.start);

            let quiet_ok = self.no_contention
                && duration == TimeSpan::ZERO
                && grant.number - self.dests[di].next_account < LOOKAHEAD
                && start < self.next_arrival_to(di)
                && self.dest_quiet(di);
            if quiet_ok {
                // Nothing can reach this source's report before it is
                // emitted: the grant only carries an empty report.
                self.check_feasible(&grant, g_global, start, pi)?;
                self.visit(pi, g_global);
                let edge = start + self.pairs[pi].fwd;
                self.resolve(
                    di,
                    Resolved {
                        number: grant.number,
                        edge,
                        duration,
                        used: TimeSpan::ZERO,
                        deficit: TimeSpan::ZERO,
                        data_edge: edge,
                        on_time: true,
                    },
                )?;
                let next = self.dests[di].state.next_epoch();
                g_global = self.clocks[dest_node.index()].destination_to_global(next);
                if g_global > self.horizon {
                    return Ok(());
                }
                continue;
            }

            self.issue(grant, g_global, start, pi)?;
            let next = self.dests[di].state.next_epoch();
            let next_global = self.clocks[dest_node.index()].destination_to_global(next);
            if next_global <= self.horizon {
                self.queue.push(next_global, Event::Formulate(di as u16));
            }
            return Ok(());
        }
    }

    /// Earliest pending traffic arrival on any pair of destination `di`.
    fn next_arrival_to(&self, di: usize) -> TimePoint {
        self.dests[di]
            .pairs
            .iter()
            .filter_map(|&p| self.pairs[p].next_arrival.map(|(t, _)| t))
            .min()
            .unwrap_or(TimePoint(i64::MAX))
    }

    fn dest_quiet(&self, di: usize) -> bool {
        let d = &self.dests[di];
        d.pairs.iter().enumerate().all(|(slot, &p)| {
            let e = d.ledger.entry(slot);
            self.pairs[p].queue.is_quiet()
                && e.pending == TimeSpan::ZERO
                && e.backlogged == 0
                && d.inbox_live[slot] == 0
        })
    }

    fn check_feasible(&mut self, grant: &Grant, g_global: TimePoint, start: TimePoint, pi: usize) -> Result<TimePoint> {
        let jitter = self.cfg.grant_jitter.sample(self.cfg.tau, &mut self.jitter_rng);
        let arrival = g_global + self.pairs[pi].back + jitter;
        if arrival > start {
            return Err(violation(
                g_global,
                format!("grant {} to {} arrives at {arrival}, after its start {start}", grant.number, grant.source),
            ));
        }
        self.checks.feasible_grants += 1;
        Ok(arrival)
    }

    fn visit(&mut self, pi: usize, at: TimePoint) {
        let p = &mut self.pairs[pi];
        if let Some(prev) = p.last_visit {
            if prev >= self.warmup_at {
                self.cycles.push((at - prev).as_micros_f64());
            }
        }
        p.last_visit = Some(at);
    }

    fn issue(&mut self, grant: Grant, g_global: TimePoint, start: TimePoint, pi: usize) -> Result<()> {
        let arrival = self.check_feasible(&grant, g_global, start, pi)?;
        self.visit(pi, g_global);
        let pg = PendingGrant {
            grant,
            arrival,
            start,
            window_end: start + grant.duration + self.cfg.delta_r,
        };
        self.queue.push(start, Event::GrantReady(pg));
        Ok(())
    }

    fn drive(&mut self, src: usize, now: TimePoint) -> Result<()> {
        loop {
            let decision = self.sources[src].pool.poll(now);
            match decision {
                None => break,
                Some(PoolDecision::Serve { grant: pg, .. }) => {
                    let active = self.sources[src].pool.active(now);
                    self.checks.max_active_transmitters = self.checks.max_active_transmitters.max(active);
                    if active > self.cfg.transmitters {
                        return Err(violation(now, format!("{active} transmitters busy at n{src}")));
                    }
                    self.serve(pg, now)?;
                }
                Some(PoolDecision::Expired(pg)) => {
                    let pi = self.pair_of(pg.grant.destination, pg.grant.source);
                    let d = pg.grant.duration;
                    self.pairs[pi].queue.record_deficit(d, TimeSpan::ZERO)?;
                    self.checks.conserved_grants += 1;
                    let edge = pg.start + self.pairs[pi].fwd;
                    let di = self.pairs[pi].dest;
                    self.resolve(
                        di,
                        Resolved {
                            number: pg.grant.number,
                            edge,
                            duration: d,
                            used: TimeSpan::ZERO,
                            deficit: d,
                            data_edge: edge,
                            on_time: false,
                        },
                    )?;
                }
            }
        }
        let s = &mut self.sources[src];
        if s.pool.waiting() > 0 {
            if let Some(t) = s.pool.next_free(now) {
                if s.wake_at.is_none_or(|w| w > t || w < now) {
                    s.wake_at = Some(t);
                    self.queue.push(t, Event::Wake(src as u16));
                }
            }
        }
        Ok(())
    }

    fn pair_of(&self, dest: NodeId, src: NodeId) -> usize {
        self.pair_index[dest.index()][src.index()] as usize
    }

    fn serve(&mut self, pg: PendingGrant, now: TimePoint) -> Result<()> {
        let pi = self.pair_of(pg.grant.destination, pg.grant.source);
        let quantum = self.cfg.quantum_bytes;
        let guard = self.cfg.retune_guard;
        let warmup_at = self.warmup_at;
        let service = serve_grant(&mut self.pairs[pi].queue, pg, now, quantum, guard).map_err(|e| match e {
            Error::Invariant { what, .. } => violation(now, what),
            other => other,
        })?;
        self.checks.conserved_grants += 1;

        let data_end = pg.data_end();
        let data_begin = data_end - service.usable;
        let burst = &service.burst;
        if data_begin < pg.start || data_begin + burst.used > data_end {
            return Err(violation(now, format!("burst for grant {} leaves its window", pg.grant.number)));
        }
        self.checks.bursts_in_window += 1;

        let fwd = self.pairs[pi].fwd;
        let mut completed_flow = false;
        for f in &burst.fragments {
            if !f.completes {
                continue;
            }
            let at = data_begin + f.end_offset + fwd;
            match f.payload {
                Payload::Packet { born } => {
                    let delay = at - born;
                    if delay < fwd {
                        return Err(violation(now, format!("packet delay {delay} below propagation {fwd}")));
                    }
                    if born >= warmup_at {
                        self.nb_delay.push(delay.as_millis_f64());
                    }
                }
                Payload::Flow { born, size, .. } => {
                    completed_flow = true;
                    if born >= warmup_at {
                        let secs = (at - born).as_secs_f64();
                        let bits = size as f64 * 8.0;
                        self.flow_bits += bits;
                        self.flow_secs += secs;
                        self.flow_rate.push(bits / secs / 1e6);
                    }
                }
            }
        }
        if completed_flow {
            let count = self.pairs[pi].queue.backlogged_count();
            let p = &mut self.pairs[pi];
            p.flows.update(now, count, warmup_at, &mut self.hist);
        }

        let edge = pg.start + fwd;
        let di = self.pairs[pi].dest;
        self.resolve(
            di,
            Resolved {
                number: pg.grant.number,
                edge,
                duration: pg.grant.duration,
                used: burst.used,
                deficit: service.deficit,
                data_edge: data_begin + fwd,
                on_time: now == pg.start,
            },
        )?;

        if data_end > now {
            self.queue.push(data_end, Event::Report(pi as u32));
        } else {
            self.emit_report(pi, now);
        }
        Ok(())
    }

    fn emit_report(&mut self, pi: usize, now: TimePoint) {
        let p = &mut self.pairs[pi];
        let report = p.queue.build_report(now);
        let at = now + p.fwd;
        let d = &mut self.dests[p.dest];
        if !is_empty_report(&report) {
            d.inbox_live[p.slot] += 1;
        }
        d.inbox[p.slot].push_back((at, report));
    }

    fn arrive(&mut self, pi: usize, now: TimePoint) {
        let in_window = now >= self.warmup_at;
        let p = &mut self.pairs[pi];
        let Some((t, arrival)) = p.next_arrival.take() else { return };
        debug_assert_eq!(t, now);
        match arrival {
            Arrival::Packet { bytes } => {
                p.queue.push_packet(now, bytes);
                if in_window {
                    p.window_nb_bytes += bytes as u64;
                }
            }
            Arrival::Flow { size } => {
                p.queue.push_flow(self.next_flow_id, now, size);
                self.next_flow_id += 1;
                if in_window {
                    p.window_flow_bytes += size;
                }
                let count = p.queue.backlogged_count();
                p.flows.update(now, count, self.warmup_at, &mut self.hist);
            }
        }
        p.next_arrival = p.traffic.next();
        if let Some((t, _)) = p.next_arrival {
            if t <= self.horizon {
                self.queue.push(t.max(now), Event::Traffic(pi as u32));
            }
        }
    }

    fn resolve(&mut self, di: usize, r: Resolved) -> Result<()> {
        let delta_r = self.cfg.delta_r;
        let warmup_at = self.warmup_at;
        let d = &mut self.dests[di];
        let slot = (r.number & RING_MASK) as usize;
        if d.ring[slot].is_some() || r.number < d.next_account {
            return Err(violation(r.edge, format!("grant {} resolved twice or out of range", r.number)));
        }
        d.ring[slot] = Some(r);
        loop {
            let at = (d.next_account & RING_MASK) as usize;
            let Some(cur) = d.ring[at].take() else { break };
            if let Some(prev) = d.last_accounted {
                let expected = prev.edge + prev.duration + delta_r;
                if cur.edge != expected {
                    return Err(violation(
                        cur.edge,
                        format!("window {} at {} does not abut previous end {expected}: collision or gap", cur.number, cur.edge),
                    ));
                }
                self.checks.windows_abutting += 1;
                let saturated = prev.on_time && prev.duration > TimeSpan::ZERO && prev.used == prev.duration;
                if saturated && cur.on_time && cur.used > TimeSpan::ZERO {
                    let gap = cur.data_edge - (prev.data_edge + prev.used);
                    if gap != delta_r {
                        return Err(violation(cur.edge, format!("saturated inter-burst gap {gap} differs from Δ_R")));
                    }
                    self.checks.saturated_gaps += 1;
                }
            }
            if cur.edge >= warmup_at {
                let first = *d.first_edge.get_or_insert(cur.edge);
                d.channel.busy_ns += cur.used.as_nanos();
                d.channel.idle_ns += (cur.duration - cur.used).as_nanos();
                d.channel.overhead_ns += delta_r.as_nanos();
                d.channel.elapsed_ns = (cur.edge + cur.duration + delta_r - first).as_nanos();
                d.granted += cur.duration;
                d.lost += cur.deficit;
            }
            d.last_accounted = Some(cur);
            d.next_account += 1;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<MetricsReport> {
        let horizon = self.horizon;
        for p in &mut self.pairs {
            let c = p.queue.backlogged_count();
            p.flows.update(horizon, c, self.warmup_at, &mut self.hist);
        }
        let mut channel = ChannelAccounting::default();
        let mut granted = TimeSpan::ZERO;
        let mut lost = TimeSpan::ZERO;
        for d in &self.dests {
            if !d.channel.balanced() {
                return Err(violation(
                    horizon,
                    format!("channel of {} not balanced: {:?}", d.node, d.channel),
                ));
            }
            channel.add(&d.channel);
            granted += d.granted;
            lost += d.lost;
        }
        let window_s = (horizon - self.warmup_at).as_secs_f64();
        let cap_bytes = self.cfg.rate.bits_per_sec() as f64 / 8.0 * window_s * self.dests.len() as f64;
        let nb: u64 = self.pairs.iter().map(|p| p.window_nb_bytes).sum();
        let bl: u64 = self.pairs.iter().map(|p| p.window_flow_bytes).sum();
        let offsets: Vec<f64> = self.dests.iter().map(|d| d.state.offset().as_micros_f64()).collect();
        let blocked_fraction = if granted > TimeSpan::ZERO {
            lost.as_nanos() as f64 / granted.as_nanos() as f64
        } else {
            0.0
        };
        let nb_offered = self.cfg.traffic.pairs.iter().any(|p| p.nonbacklogged > 0.0);
        let dist = self.hist.distribution();
        Ok(MetricsReport {
            seed: self.cfg.seed,
            horizon_s: self.cfg.horizon.as_secs_f64(),
            warmup_s: self.warmup_at.as_secs_f64(),
            offset_us: offsets.iter().cloned().fold(0.0, f64::max),
            mean_offset_us: offsets.iter().sum::<f64>() / offsets.len() as f64,
            nb_delay_samples: self.nb_delay.count,
            mean_nb_delay_ms: self.nb_delay.mean(),
            max_nb_delay_ms: (self.nb_delay.count > 0).then_some(self.nb_delay.max),
            flows_completed: self.flow_rate.count,
            mean_throughput_mbps: (self.flow_secs > 0.0).then(|| self.flow_bits / self.flow_secs / 1e6),
            mean_flow_rate_mbps: self.flow_rate.mean(),
            mean_flow_count: self.hist.mean(),
            flow_count_distribution: dist,
            flow_count_watermark: self.pairs.iter().map(|p| p.flows.peak).max().unwrap_or(0),
            flow_count_trace: self.trace,
            mean_cycle_us: self.cycles.mean(),
            cycle_samples: self.cycles.count,
            blocked_fraction,
            effective_capacity: 1.0 - blocked_fraction,
            channel,
            offered_load: (nb + bl) as f64 / cap_bytes,
            offered_backlogged: bl as f64 / cap_bytes,
            offered_nonbacklogged: nb as f64 / cap_bytes,
            unfinished_flows: self.pairs.iter().map(|p| p.queue.backlogged_count() as u64).sum(),
            queued_packets: self.pairs.iter().map(|p| p.queue.queued_packets() as u64).sum(),
            low_confidence: nb_offered && self.nb_delay.count < 10_000,
            checks: self.checks,
            events: self.events,
        })
    }
}
