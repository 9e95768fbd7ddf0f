//! Event loop tying paths, multipath connections, their window controllers
//! and the in-kernel client emulation together.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline_cc::{BaselineAlgorithm, BaselineState};
use crate::control_plane::{encode_frame, ClientSubflow, DelayLine, Frame, FrameDecoder, MetricReport};
use crate::mptcp_core::{
    estimate_stale, on_ack, on_loss, on_recovery_complete, probe_tick, select_subflow, start_phase_tick,
    AccountingFault, AckSample, AllocationStats, ConnectionState, LifecycleConfig, LossKind, Mode, ProbeResult,
    StartOutcome, SubflowState,
};
use crate::netsim::{EnqueueOutcome, PathModel, SimClock, SimTime, MSS_BYTES};

/// What a packet carries through a path queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketTag {
    pub conn: u32,
    pub sub: u32,
    pub seq: u64,
    pub data_seq: u64,
    pub size: u32,
}

pub type SimPath = PathModel<PacketTag>;

#[derive(Debug)]
enum Event {
    Departure { path: usize },
    Ack { tag: PacketTag },
    RtoCheck { conn: usize, sub: usize },
    AppTick { conn: usize },
    Start { conn: usize },
    ProbeEnd { conn: usize, sub: usize },
    ClientFrame { conn: usize, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub mss: u32,
    /// Seconds.
    pub min_rto: f64,
    pub dupthresh: u64,
    pub lifecycle: LifecycleConfig,
    pub block_on_fast_recovery: bool,
    pub probe_enabled: bool,
    /// Seconds.
    pub bw_window: f64,
    pub agent_initial_cwnd: f64,
    pub baseline_initial_cwnd: f64,
    /// One-way control-loop latency in seconds.
    pub control_delay: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let lifecycle = LifecycleConfig::default();
        WorldConfig {
            mss: MSS_BYTES,
            min_rto: 0.2,
            dupthresh: 3,
            lifecycle,
            block_on_fast_recovery: false,
            probe_enabled: true,
            bw_window: lifecycle.estimate_ttl.as_secs(),
            agent_initial_cwnd: 4.0,
            baseline_initial_cwnd: 10.0,
            control_delay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    /// Directive-driven windows with a start phase and RTT probes.
    Agent,
    Fixed(Vec<f64>),
    Baseline(BaselineAlgorithm),
}

#[derive(Debug, Clone, PartialEq)]
enum Controller {
    Agent { clients: Vec<ClientSubflow> },
    Fixed(Vec<f64>),
    Baseline(BaselineState),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AppSource {
    Bulk,
    /// Constant bit rate.
    Rate {
        bps: f64,
    },
    /// Finite transfer.
    Flow {
        bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionSpec {
    /// One subflow per listed path.
    pub paths: Vec<usize>,
    pub controller: ControllerSpec,
    pub app: AppSource,
    /// Seconds.
    pub start: f64,
}

/// Per-subflow counters since the last [`World::take_interval`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntervalStats {
    /// Unique application bytes delivered.
    pub goodput_bytes: u64,
    pub rtt_sum: f64,
    pub rtt_samples: u64,
    pub loss_events: u64,
    pub sent_packets: u64,
}

impl IntervalStats {
    pub fn mean_rtt(&self) -> Option<f64> {
        (self.rtt_samples > 0).then(|| self.rtt_sum / self.rtt_samples as f64)
    }
}

#[derive(Debug, Clone, Copy)]
struct SentPacket {
    data_seq: u64,
    size: u32,
    sent_at: SimTime,
    delivered_at_send: u64,
    delivered_time_at_send: SimTime,
}

#[derive(Debug, Clone)]
struct SubflowTx {
    path: usize,
    next_seq: u64,
    outstanding: BTreeMap<u64, SentPacket>,
    retx: VecDeque<(u64, u32)>,
    recovery_point: Option<u64>,
    rto_deadline: Option<SimTime>,
    rto_pending: bool,
    backoff: u32,
    delivered_time: SimTime,
    handed_off: bool,
    interval: IntervalStats,
    loss_events: u64,
}

/// Data sequence numbers already delivered: a cumulative point plus the
/// out-of-order remainder.
#[derive(Debug, Clone, Default)]
struct DeliveredSet {
    below: u64,
    above: BTreeSet<u64>,
}

impl DeliveredSet {
    fn insert(&mut self, seq: u64) -> bool {
        if seq < self.below || !self.above.insert(seq) {
            return false;
        }
        while self.above.remove(&self.below) {
            self.below += 1;
        }
        true
    }

    fn contiguous(&self) -> u64 {
        self.below
    }
}

/// One multipath (or single-path) connection.
#[derive(Debug, Clone)]
pub struct Connection {
    pub id: usize,
    pub state: ConnectionState,
    tx: Vec<SubflowTx>,
    controller: Controller,
    app: AppSource,
    next_data_seq: u64,
    total_packets: Option<u64>,
    delivered: DeliveredSet,
    delivered_bytes: u64,
    alloc: AllocationStats,
    start_time: SimTime,
    finish_time: Option<SimTime>,
    app_tick_pending: bool,
    started: bool,
}

impl Connection {
    pub fn subflows(&self) -> usize {
        self.state.subflows.len()
    }

    pub fn subflow(&self, i: usize) -> &SubflowState {
        &self.state.subflows[i]
    }

    pub fn path_of(&self, i: usize) -> usize {
        self.tx[i].path
    }

    /// Unique application bytes delivered so far.
    pub fn delivered_bytes(&self) -> u64 {
        self.delivered_bytes
    }

    pub fn start_time(&self) -> SimTime {
        self.start_time
    }

    pub fn finish_time(&self) -> Option<SimTime> {
        self.finish_time
    }

    pub fn allocation(&self) -> &AllocationStats {
        &self.alloc
    }

    pub fn loss_events(&self, i: usize) -> u64 {
        self.tx[i].loss_events
    }

    /// Whether every subflow has left the start phase.
    pub fn handed_off(&self) -> bool {
        self.tx.iter().all(|t| t.handed_off)
    }

    pub fn client(&self, i: usize) -> Option<&ClientSubflow> {
        match &self.controller {
            Controller::Agent { clients } => clients.get(i),
            _ => None,
        }
    }

    pub fn is_agent(&self) -> bool {
        matches!(self.controller, Controller::Agent { .. })
    }

    fn packet_size(&self, data_seq: u64, mss: u32) -> u32 {
        match self.app {
            AppSource::Flow { bytes } => {
                let full = bytes / mss as u64;
                if data_seq < full {
                    mss
                } else {
                    (bytes - full * mss as u64) as u32
                }
            }
            _ => mss,
        }
    }
}

/// The whole simulated network.
pub struct World {
    clock: SimClock<Event>,
    paths: Vec<SimPath>,
    conns: Vec<Connection>,
    rng: ChaCha8Rng,
    cfg: WorldConfig,
    outbox: DelayLine<Vec<u8>>,
    decoder: FrameDecoder,
    fault: Option<AccountingFault>,
    reporting: bool,
}

impl World {
    pub fn new(paths: Vec<SimPath>, cfg: WorldConfig, seed: u64) -> Self {
        let delay = SimTime::from_secs(cfg.control_delay);
        World {
            clock: SimClock::new(seed),
            paths,
            conns: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
            outbox: DelayLine::new(delay),
            decoder: FrameDecoder::default(),
            fault: None,
            reporting: true,
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn paths(&self) -> &[SimPath] {
        &self.paths
    }

    pub fn connection(&self, id: usize) -> &Connection {
        &self.conns[id]
    }

    pub fn connections(&self) -> &[Connection] {
        &self.conns
    }

    pub fn frame_decoder(&self) -> &FrameDecoder {
        &self.decoder
    }

    /// Turns per-ACK metric frames from agent clients on or off.
    pub fn set_reporting(&mut self, on: bool) {
        self.reporting = on;
    }

    pub fn add_connection(&mut self, spec: ConnectionSpec) -> usize {
        assert!(!spec.paths.is_empty(), "connection without paths");
        let id = self.conns.len();
        let start = SimTime::from_secs(spec.start);
        let m = spec.paths.len();
        let (controller, initial, starting) = match spec.controller {
            ControllerSpec::Agent => (
                Controller::Agent {
                    clients: (0..m)
                        .map(|_| ClientSubflow::new(crate::pomdp_env::EXPFLAG_PERIOD))
                        .collect(),
                },
                vec![self.cfg.agent_initial_cwnd; m],
                true,
            ),
            ControllerSpec::Fixed(w) => {
                assert_eq!(w.len(), m, "one fixed window per subflow");
                (Controller::Fixed(w.clone()), w, false)
            }
            ControllerSpec::Baseline(alg) => (
                Controller::Baseline(BaselineState::new(alg, m, self.cfg.baseline_initial_cwnd)),
                vec![self.cfg.baseline_initial_cwnd; m],
                false,
            ),
        };
        let subflows = initial
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let mut s = if starting {
                    SubflowState::starting(i, w)
                } else {
                    SubflowState::new(i, w)
                };
                s.block_on_fast_recovery = self.cfg.block_on_fast_recovery;
                s.bw_window = SimTime::from_secs(self.cfg.bw_window);
                s
            })
            .collect();
        let tx = spec
            .paths
            .iter()
            .map(|&p| {
                assert!(p < self.paths.len(), "unknown path {p}");
                SubflowTx {
                    path: p,
                    next_seq: 0,
                    outstanding: BTreeMap::new(),
                    retx: VecDeque::new(),
                    recovery_point: None,
                    rto_deadline: None,
                    rto_pending: false,
                    backoff: 0,
                    delivered_time: start,
                    handed_off: !starting,
                    interval: IntervalStats::default(),
                    loss_events: 0,
                }
            })
            .collect();
        let total_packets = match spec.app {
            AppSource::Flow { bytes } => Some(bytes.div_ceil(self.cfg.mss as u64)),
            _ => None,
        };
        self.conns.push(Connection {
            id,
            state: ConnectionState::new(subflows),
            tx,
            controller,
            app: spec.app,
            next_data_seq: 0,
            total_packets,
            delivered: DeliveredSet::default(),
            delivered_bytes: 0,
            alloc: AllocationStats::new(m),
            start_time: start,
            finish_time: None,
            app_tick_pending: false,
            started: false,
        });
        if let AppSource::Rate { bps } = spec.app {
            self.conns[id].state.total_arrival_rate = bps;
        }
        self.clock.schedule(start, Event::Start { conn: id });
        id
    }

    /// Pins subflow `sub` of a fixed-window connection to `cwnd`.
    pub fn set_fixed_cwnd(&mut self, conn: usize, sub: usize, cwnd: f64) {
        let c = &mut self.conns[conn];
        match &mut c.controller {
            Controller::Fixed(w) => w[sub] = cwnd,
            _ => panic!("connection {conn} is not fixed-window"),
        }
        c.state.subflows[sub].set_cwnd(cwnd);
        self.try_send(conn);
    }

    /// Sends a frame towards a connection's client; it arrives after the
    /// configured control delay.
    pub fn send_client_frame(&mut self, conn: usize, bytes: Vec<u8>) {
        let at = self.clock.now() + SimTime::from_secs(self.cfg.control_delay);
        self.clock.schedule(at, Event::ClientFrame { conn, bytes });
    }

    /// Client-to-proxy traffic that has arrived by now.
    pub fn drain_reports(&mut self) -> Vec<u8> {
        let mut out = Vec::new();
        for (_, b) in self.outbox.drain_ready(self.clock.now()) {
            out.extend_from_slice(&b);
        }
        out
    }

    /// Per-subflow counters since the last [`World::take_interval`].
    pub fn interval(&self, conn: usize) -> Vec<IntervalStats> {
        self.conns[conn].tx.iter().map(|t| t.interval).collect()
    }

    /// Returns and resets per-subflow interval counters.
    pub fn take_interval(&mut self, conn: usize) -> Vec<IntervalStats> {
        self.conns[conn]
            .tx
            .iter_mut()
            .map(|t| std::mem::take(&mut t.interval))
            .collect()
    }

    /// Returns and resets the connection's scheduler allocation counts.
    pub fn take_allocation(&mut self, conn: usize) -> AllocationStats {
        let a = &mut self.conns[conn].alloc;
        let out = a.clone();
        a.reset();
        out
    }

    /// Dispatches every event up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<(), AccountingFault> {
        while let Some((_, ev)) = self.clock.pop_until(until) {
            self.dispatch(ev);
            if let Some(f) = self.fault.take() {
                return Err(f);
            }
        }
        self.clock.set_now(until);
        Ok(())
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Departure { path } => self.on_departure(path),
            Event::Ack { tag } => self.on_ack_event(tag),
            Event::RtoCheck { conn, sub } => self.on_rto_check(conn, sub),
            Event::AppTick { conn } => {
                self.conns[conn].app_tick_pending = false;
                self.try_send(conn);
            }
            Event::Start { conn } => {
                self.conns[conn].started = true;
                self.try_send(conn);
            }
            Event::ProbeEnd { conn, sub } => self.on_probe_end(conn, sub),
            Event::ClientFrame { conn, bytes } => self.on_client_frame(conn, &bytes),
        }
    }

    fn on_departure(&mut self, p: usize) {
        let now = self.clock.now();
        let path = &mut self.paths[p];
        let Some((pkt, arrival)) = path.complete_departure(now) else {
            return;
        };
        let ack_at = arrival + path.prop_delay_at(now);
        if let Some(next) = path.head_finish_time(now) {
            self.clock.schedule(next, Event::Departure { path: p });
        }
        self.clock.schedule(ack_at, Event::Ack { tag: pkt.payload });
    }

    fn on_ack_event(&mut self, tag: PacketTag) {
        let now = self.clock.now();
        let (ci, i) = (tag.conn as usize, tag.sub as usize);
        let dupthresh = self.cfg.dupthresh;
        let lifecycle = self.cfg.lifecycle;
        let conn = &mut self.conns[ci];
        let fresh = conn.delivered.insert(tag.data_seq);
        if fresh {
            conn.delivered_bytes += tag.size as u64;
            conn.tx[i].interval.goodput_bytes += tag.size as u64;
            if conn.total_packets.is_some_and(|t| conn.delivered.contiguous() >= t) && conn.finish_time.is_none() {
                conn.finish_time = Some(now);
            }
        }
        let tx = &mut conn.tx[i];
        let Some(sent) = tx.outstanding.remove(&tag.seq) else {
            // Late copy of a packet already declared lost.
            return;
        };
        let st = &mut conn.state.subflows[i];
        let rtt = (now - sent.sent_at).as_secs();
        let elapsed = (now - sent.delivered_time_at_send).as_secs();
        let rate = (elapsed > 0.0)
            .then(|| (st.delivered_bytes + sent.size as u64 - sent.delivered_at_send) as f64 * 8.0 / elapsed);
        let sample = AckSample {
            acked: 1,
            rtt,
            delivered: sent.size as u64,
            rate_bps: rate,
        };
        let report = match on_ack(st, &sample, now) {
            Ok(r) => r,
            Err(f) => {
                self.fault = Some(f);
                return;
            }
        };
        tx.delivered_time = now;
        tx.interval.rtt_sum += rtt;
        tx.interval.rtt_samples += 1;

        // Anything sent `dupthresh` or more packets earlier is lost.
        let cutoff = (tag.seq + 1).saturating_sub(dupthresh);
        let lost: Vec<u64> = tx.outstanding.range(..cutoff).map(|(&s, _)| s).collect();
        let mut new_episode = false;
        for s in &lost {
            let p = tx.outstanding.remove(s).expect("listed above");
            st.in_flight -= 1;
            tx.retx.push_back((p.data_seq, p.size));
            if !tx.recovery_point.is_some_and(|rp| *s <= rp) {
                new_episode = true;
            }
        }
        if new_episode {
            Self::loss_event(conn, i, LossKind::DuplicateAcks, now);
        }
        let tx = &mut conn.tx[i];
        let st = &mut conn.state.subflows[i];
        if tx.recovery_point.is_some_and(|rp| tag.seq >= rp) {
            tx.recovery_point = None;
            on_recovery_complete(st);
        }
        tx.backoff = 0;
        tx.rto_deadline = if tx.outstanding.is_empty() {
            None
        } else {
            Some(now + SimTime::from_secs(st.rto(self.cfg.min_rto)))
        };
        debug_assert_eq!(st.in_flight as usize, tx.outstanding.len());

        let in_recovery = tx.recovery_point.is_some();
        let mut probe_until = None;
        match &mut conn.controller {
            Controller::Agent { clients } => {
                match st.mode {
                    Mode::Start => {
                        if start_phase_tick(st, 1, &lifecycle) == StartOutcome::HandoffToAgent {
                            tx.handed_off = true;
                        }
                    }
                    Mode::Normal => {
                        clients[i].grow_on_ack(st);
                        if self.cfg.probe_enabled && estimate_stale(st, now, &lifecycle) {
                            if let ProbeResult::Started { until } = probe_tick(st, now, &lifecycle) {
                                probe_until = Some(until);
                            }
                        }
                    }
                    Mode::Probe | Mode::Recovery => {}
                }
                if self.reporting {
                    let c = &mut clients[i];
                    c.report_seq += 1;
                    let m = MetricReport {
                        conn_id: ci as u32,
                        subflow_id: i as u32,
                        seq: c.report_seq,
                        timestamp_us: now.as_micros(),
                        delivered_bytes: report.delivered_bytes,
                        rtt_us: (report.rtt * 1e6).round() as u64,
                        cwnd: st.window(),
                        min_rtt_us: (report.min_rtt * 1e6).round() as u64,
                        bw_estimate_bps: report.bw_estimate.round() as u64,
                        mode: st.mode.as_str().to_string(),
                        expflag: c.expflag,
                    };
                    self.outbox.push(now, encode_frame(&Frame::Metric(m)));
                }
            }
            Controller::Fixed(_) => {}
            Controller::Baseline(b) => {
                if !in_recovery && st.mode != Mode::Recovery {
                    let rtts: Vec<f64> = conn.state.subflows.iter().map(|s| s.srtt_or_zero()).collect();
                    let w = b.on_ack(i, 1, now, &rtts);
                    conn.state.subflows[i].set_cwnd(w);
                }
            }
        }
        if let Some(until) = probe_until {
            self.clock.schedule(until, Event::ProbeEnd { conn: ci, sub: i });
        }
        self.try_send(ci);
    }

    fn loss_event(conn: &mut Connection, i: usize, kind: LossKind, now: SimTime) {
        let st = &mut conn.state.subflows[i];
        on_loss(st, kind, now);
        match &mut conn.controller {
            Controller::Agent { .. } => {}
            Controller::Fixed(w) => st.set_cwnd(w[i]),
            Controller::Baseline(b) => st.set_cwnd(b.on_loss(i)),
        }
        let tx = &mut conn.tx[i];
        tx.recovery_point = Some(tx.next_seq.saturating_sub(1));
        tx.interval.loss_events += 1;
        tx.loss_events += 1;
    }

    fn on_rto_check(&mut self, ci: usize, i: usize) {
        let now = self.clock.now();
        let min_rto = self.cfg.min_rto;
        let conn = &mut self.conns[ci];
        let tx = &mut conn.tx[i];
        tx.rto_pending = false;
        let Some(deadline) = tx.rto_deadline else {
            return;
        };
        if tx.outstanding.is_empty() {
            tx.rto_deadline = None;
            return;
        }
        if now < deadline {
            tx.rto_pending = true;
            self.clock.schedule(deadline, Event::RtoCheck { conn: ci, sub: i });
            return;
        }
        let lost: Vec<SentPacket> = std::mem::take(&mut tx.outstanding).into_values().collect();
        let st = &mut conn.state.subflows[i];
        st.in_flight = 0;
        for p in lost.iter().rev() {
            tx.retx.push_front((p.data_seq, p.size));
        }
        Self::loss_event(conn, i, LossKind::Timeout, now);
        let tx = &mut conn.tx[i];
        tx.backoff = (tx.backoff + 1).min(6);
        let rto = conn.state.subflows[i].rto(min_rto) * f64::from(1u32 << tx.backoff);
        tx.rto_deadline = Some(now + SimTime::from_secs(rto));
        self.try_send(ci);
    }

    fn on_probe_end(&mut self, ci: usize, i: usize) {
        let now = self.clock.now();
        let lifecycle = self.cfg.lifecycle;
        let conn = &mut self.conns[ci];
        let st = &mut conn.state.subflows[i];
        if st.mode != Mode::Probe {
            return;
        }
        probe_tick(st, now, &lifecycle);
        if let Controller::Agent { clients } = &conn.controller {
            clients[i].enforce_cap(st);
        }
        self.try_send(ci);
    }

    fn on_client_frame(&mut self, ci: usize, bytes: &[u8]) {
        let frames = self.decoder.decode_stream(bytes);
        let conn = &mut self.conns[ci];
        let Controller::Agent { clients } = &mut conn.controller else {
            return;
        };
        for f in frames {
            let Frame::Directive(d) = f else { continue };
            if d.conn_id as usize != ci {
                log::warn!("client {ci} ignored directive for connection {}", d.conn_id);
                continue;
            }
            match d.subflow_id {
                Some(s) => {
                    let s = s as usize;
                    if let (Some(c), Some(&t)) = (clients.get_mut(s), d.target_cwnd.first()) {
                        c.apply_directive(&mut conn.state.subflows[s], d.decision_seq, t);
                    }
                }
                None => {
                    for (s, &t) in d.target_cwnd.iter().enumerate().take(clients.len()) {
                        clients[s].apply_directive(&mut conn.state.subflows[s], d.decision_seq, t);
                    }
                }
            }
        }
        self.try_send(ci);
    }

    fn app_ready(conn: &Connection, now: SimTime, mss: u32) -> Result<bool, Option<SimTime>> {
        match conn.app {
            AppSource::Bulk => Ok(true),
            AppSource::Flow { .. } => {
                if conn.next_data_seq < conn.total_packets.unwrap_or(0) {
                    Ok(true)
                } else {
                    Err(None)
                }
            }
            AppSource::Rate { bps } => {
                let per_pkt = mss as f64 * 8.0 / bps;
                let due = conn.start_time + SimTime::from_secs(conn.next_data_seq as f64 * per_pkt);
                if due <= now {
                    Ok(true)
                } else {
                    Err(Some(due))
                }
            }
        }
    }

    fn try_send(&mut self, ci: usize) {
        let now = self.clock.now();
        if !self.conns[ci].started {
            return;
        }
        for i in 0..self.conns[ci].subflows() {
            loop {
                let conn = &self.conns[ci];
                let st = &conn.state.subflows[i];
                let Some(&(data_seq, size)) = conn.tx[i].retx.front() else {
                    break;
                };
                if st.in_flight >= st.window() {
                    break;
                }
                self.conns[ci].tx[i].retx.pop_front();
                self.transmit(ci, i, data_seq, size);
            }
        }
        let mss = self.cfg.mss;
        loop {
            let conn = &self.conns[ci];
            match Self::app_ready(conn, now, mss) {
                Ok(true) => {}
                Ok(false) | Err(None) => break,
                Err(Some(due)) => {
                    if !conn.app_tick_pending {
                        self.conns[ci].app_tick_pending = true;
                        self.clock.schedule(due, Event::AppTick { conn: ci });
                    }
                    break;
                }
            }
            let Some(j) = select_subflow(&conn.state) else {
                break;
            };
            let conn = &mut self.conns[ci];
            conn.state.subflows[j].queued += 1;
            conn.alloc.record(j);
            let data_seq = conn.next_data_seq;
            conn.next_data_seq += 1;
            let size = conn.packet_size(data_seq, mss);
            conn.state.subflows[j].queued -= 1;
            self.transmit(ci, j, data_seq, size);
        }
    }

    fn transmit(&mut self, ci: usize, i: usize, data_seq: u64, size: u32) {
        let now = self.clock.now();
        let conn = &mut self.conns[ci];
        let tx = &mut conn.tx[i];
        let st = &mut conn.state.subflows[i];
        let seq = tx.next_seq;
        tx.next_seq += 1;
        tx.outstanding.insert(
            seq,
            SentPacket {
                data_seq,
                size,
                sent_at: now,
                delivered_at_send: st.delivered_bytes,
                delivered_time_at_send: tx.delivered_time,
            },
        );
        st.in_flight += 1;
        tx.interval.sent_packets += 1;
        let tag = PacketTag {
            conn: ci as u32,
            sub: i as u32,
            seq,
            data_seq,
            size,
        };
        let path = &mut self.paths[tx.path];
        if let EnqueueOutcome::Enqueued { position: 0 } = path.enqueue_packet(size, now, &mut self.rng, tag) {
            let done = path.head_finish_time(now).expect("just enqueued");
            self.clock.schedule(done, Event::Departure { path: tx.path });
        }
        if tx.rto_deadline.is_none() {
            let rto = st.rto(self.cfg.min_rto) * f64::from(1u32 << tx.backoff);
            tx.rto_deadline = Some(now + SimTime::from_secs(rto));
        }
        if !tx.rto_pending {
            tx.rto_pending = true;
            let at = tx.rto_deadline.expect("set above");
            self.clock.schedule(at, Event::RtoCheck { conn: ci, sub: i });
        }
    }
}
