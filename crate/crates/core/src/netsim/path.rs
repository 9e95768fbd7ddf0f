use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::time::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("{what} schedule is empty")]
    EmptySchedule { what: &'static str },
    #[error("{what} schedule start times must be strictly increasing (entry {index})")]
    NotIncreasing { what: &'static str, index: usize },
    #[error("capacity must be positive, got {rate} b/s at entry {index}")]
    NonPositiveRate { rate: f64, index: usize },
    #[error("propagation delay must be non-negative, got {delay}")]
    NegativeDelay { delay: f64 },
    #[error("loss rate {0} outside [0, 1]")]
    LossRate(f64),
    #[error("queue capacity must be at least one packet")]
    ZeroQueue,
}

/// Piecewise-constant link rate in bits per second.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitySchedule {
    points: Vec<(SimTime, f64)>,
}

impl CapacitySchedule {
    /// `points` are `(start_seconds, rate_bps)`. The first rate also applies
    /// before the first start time.
    pub fn new(points: &[(f64, f64)]) -> Result<Self, PathError> {
        if points.is_empty() {
            return Err(PathError::EmptySchedule { what: "capacity" });
        }
        let mut out = Vec::with_capacity(points.len());
        for (index, &(start, rate)) in points.iter().enumerate() {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(PathError::NonPositiveRate { rate, index });
            }
            if index > 0 && start <= points[index - 1].0 {
                return Err(PathError::NotIncreasing {
                    what: "capacity",
                    index,
                });
            }
            out.push((SimTime::from_secs(start.max(0.0)), rate));
        }
        Ok(CapacitySchedule { points: out })
    }

    pub fn constant(rate_bps: f64) -> Self {
        CapacitySchedule::new(&[(0.0, rate_bps)]).expect("positive rate")
    }

    pub fn points(&self) -> &[(SimTime, f64)] {
        &self.points
    }

    fn segment(&self, t: SimTime) -> usize {
        self.points.partition_point(|&(s, _)| s <= t).saturating_sub(1)
    }

    pub fn rate_at(&self, t: SimTime) -> f64 {
        self.points[self.segment(t)].1
    }

    /// Time at which `bits` finish transmitting when service starts at
    /// `start`, integrating across rate changes.
    pub fn finish_time(&self, start: SimTime, bits: f64) -> SimTime {
        if bits <= 0.0 {
            return start;
        }
        let mut idx = self.segment(start);
        let mut t = start.nanos() as f64;
        let mut left = bits;
        loop {
            let rate = self.points[idx].1;
            let Some(&(next, _)) = self.points.get(idx + 1) else {
                t += left / rate * 1e9;
                break;
            };
            let span = next.nanos() as f64 - t;
            let cap = rate * span * 1e-9;
            if left <= cap {
                t += left / rate * 1e9;
                break;
            }
            left -= cap;
            t = next.nanos() as f64;
            idx += 1;
        }
        SimTime(t.round() as u64)
    }

    /// Bits the schedule can carry over `[from, to)`.
    pub fn capacity_bits(&self, from: SimTime, to: SimTime) -> f64 {
        if to <= from {
            return 0.0;
        }
        let mut idx = self.segment(from);
        let mut t = from;
        let mut bits = 0.0;
        while t < to {
            let end = self.points.get(idx + 1).map_or(to, |p| p.0.min(to));
            bits += self.points[idx].1 * (end - t).as_secs();
            t = end;
            idx += 1;
        }
        bits
    }
}

/// Piecewise-constant one-way propagation delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySchedule {
    points: Vec<(SimTime, SimTime)>,
}

impl DelaySchedule {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, PathError> {
        if points.is_empty() {
            return Err(PathError::EmptySchedule { what: "delay" });
        }
        let mut out = Vec::with_capacity(points.len());
        for (index, &(start, delay)) in points.iter().enumerate() {
            if !(delay >= 0.0 && delay.is_finite()) {
                return Err(PathError::NegativeDelay { delay });
            }
            if index > 0 && start <= points[index - 1].0 {
                return Err(PathError::NotIncreasing { what: "delay", index });
            }
            out.push((SimTime::from_secs(start.max(0.0)), SimTime::from_secs(delay)));
        }
        Ok(DelaySchedule { points: out })
    }

    pub fn constant(delay_s: f64) -> Result<Self, PathError> {
        DelaySchedule::new(&[(0.0, delay_s)])
    }

    pub fn at(&self, t: SimTime) -> SimTime {
        let i = self.points.partition_point(|&(s, _)| s <= t).saturating_sub(1);
        self.points[i].1
    }

    pub fn min_delay(&self) -> SimTime {
        self.points.iter().map(|p| p.1).min().expect("non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedPacket<P> {
    pub packet_id: u64,
    pub size_bytes: u32,
    pub enqueue_time: SimTime,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    /// Accepted with `position` packets ahead of it.
    Enqueued {
        position: usize,
    },
    DroppedLoss,
    DroppedOverflow,
}

/// Packet counters; `offered = departed + dropped_loss + dropped_overflow + queued`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PathCounters {
    pub offered: u64,
    pub departed: u64,
    pub dropped_loss: u64,
    pub dropped_overflow: u64,
    pub departed_bytes: u64,
}

/// Serialisable description of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    /// `(start seconds, bits per second)` pairs.
    pub capacity: Vec<(f64, f64)>,
    /// `(start seconds, one-way seconds)` pairs.
    pub delay: Vec<(f64, f64)>,
    pub queue_packets: usize,
    #[serde(default)]
    pub loss_rate: f64,
}

impl PathSpec {
    pub fn constant(rate_bps: f64, one_way_s: f64, queue_packets: usize, loss_rate: f64) -> Self {
        PathSpec {
            capacity: vec![(0.0, rate_bps)],
            delay: vec![(0.0, one_way_s)],
            queue_packets,
            loss_rate,
        }
    }

    pub fn build<P>(&self, path_id: usize) -> Result<PathModel<P>, PathError> {
        PathModel::new(
            path_id,
            CapacitySchedule::new(&self.capacity)?,
            DelaySchedule::new(&self.delay)?,
            self.queue_packets,
            self.loss_rate,
        )
    }

    /// Smallest round-trip propagation delay over the schedule.
    pub fn base_rtt(&self) -> f64 {
        2.0 * self.delay.iter().map(|d| d.1).fold(f64::INFINITY, f64::min)
    }

    pub fn min_rate(&self) -> f64 {
        self.capacity.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)
    }

    /// Time-averaged rate over `[0, horizon]` seconds.
    pub fn mean_rate(&self, horizon: f64) -> f64 {
        match CapacitySchedule::new(&self.capacity) {
            Ok(c) if horizon > 0.0 => c.capacity_bits(SimTime::ZERO, SimTime::from_secs(horizon)) / horizon,
            _ => self.min_rate(),
        }
    }
}

/// One forward path: Bernoulli loss on entry, a droptail FIFO served at the
/// scheduled rate, then propagation. The packet at the head of the queue is
/// the one in service.
#[derive(Debug, Clone)]
pub struct PathModel<P = ()> {
    pub path_id: usize,
    pub capacity: CapacitySchedule,
    pub prop_delay: DelaySchedule,
    pub queue_capacity: usize,
    pub loss_rate: f64,
    queue: VecDeque<QueuedPacket<P>>,
    counters: PathCounters,
    next_packet_id: u64,
    last_arrival: SimTime,
}

impl<P> PathModel<P> {
    pub fn new(
        path_id: usize,
        capacity: CapacitySchedule,
        prop_delay: DelaySchedule,
        queue_capacity: usize,
        loss_rate: f64,
    ) -> Result<Self, PathError> {
        if !(0.0..=1.0).contains(&loss_rate) {
            return Err(PathError::LossRate(loss_rate));
        }
        if queue_capacity == 0 {
            return Err(PathError::ZeroQueue);
        }
        Ok(PathModel {
            path_id,
            capacity,
            prop_delay,
            queue_capacity,
            loss_rate,
            queue: VecDeque::new(),
            counters: PathCounters::default(),
            next_packet_id: 0,
            last_arrival: SimTime::ZERO,
        })
    }

    /// Constant-rate, constant-delay path.
    pub fn simple(
        path_id: usize,
        rate_bps: f64,
        prop_delay_s: f64,
        queue_capacity: usize,
        loss_rate: f64,
    ) -> Result<Self, PathError> {
        let cap = CapacitySchedule::new(&[(0.0, rate_bps)])?;
        PathModel::new(
            path_id,
            cap,
            DelaySchedule::constant(prop_delay_s)?,
            queue_capacity,
            loss_rate,
        )
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queue.iter().map(|p| p.size_bytes as u64).sum()
    }

    pub fn counters(&self) -> PathCounters {
        self.counters
    }

    pub fn rate_at(&self, t: SimTime) -> f64 {
        self.capacity.rate_at(t)
    }

    pub fn prop_delay_at(&self, t: SimTime) -> SimTime {
        self.prop_delay.at(t)
    }

    /// Loss draw first, then the droptail check.
    pub fn enqueue_packet<R: Rng + ?Sized>(
        &mut self,
        size_bytes: u32,
        now: SimTime,
        rng: &mut R,
        payload: P,
    ) -> EnqueueOutcome {
        assert!(size_bytes > 0, "packet size must be positive");
        self.counters.offered += 1;
        if self.loss_rate > 0.0 && rng.gen::<f64>() < self.loss_rate {
            self.counters.dropped_loss += 1;
            return EnqueueOutcome::DroppedLoss;
        }
        if self.queue.len() >= self.queue_capacity {
            self.counters.dropped_overflow += 1;
            return EnqueueOutcome::DroppedOverflow;
        }
        let position = self.queue.len();
        self.queue.push_back(QueuedPacket {
            packet_id: self.next_packet_id,
            size_bytes,
            enqueue_time: now,
            payload,
        });
        self.next_packet_id += 1;
        EnqueueOutcome::Enqueued { position }
    }

    /// Completion time of a packet of `pkt_size` bytes with `position`
    /// queued packets ahead of it, if the backlog starts service at `now`.
    pub fn departure_time(&self, position: usize, pkt_size: u32, now: SimTime) -> SimTime {
        let backlog: u64 = self.queue.iter().take(position).map(|p| p.size_bytes as u64).sum();
        self.capacity.finish_time(now, (backlog + pkt_size as u64) as f64 * 8.0)
    }

    /// Queueing + service + propagation for a packet arriving at `now`.
    pub fn one_way_latency(&self, pkt_size: u32, now: SimTime) -> SimTime {
        let depart = self.departure_time(self.queue.len(), pkt_size, now);
        depart - now + self.prop_delay_at(depart)
    }

    /// Finish time of the head packet when its service starts at `now`.
    pub fn head_finish_time(&self, now: SimTime) -> Option<SimTime> {
        let head = self.queue.front()?;
        Some(self.capacity.finish_time(now, head.size_bytes as f64 * 8.0))
    }

    /// Removes the head packet after its transmission completes at `now` and
    /// returns it with its arrival time at the far end. Arrivals never
    /// overtake earlier ones even when the propagation delay shrinks.
    pub fn complete_departure(&mut self, now: SimTime) -> Option<(QueuedPacket<P>, SimTime)> {
        let pkt = self.queue.pop_front()?;
        self.counters.departed += 1;
        self.counters.departed_bytes += pkt.size_bytes as u64;
        let arrival = (now + self.prop_delay_at(now)).max(self.last_arrival);
        self.last_arrival = arrival;
        Some((pkt, arrival))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const MS: f64 = 1e-3;

    fn path(rate: f64, prop: f64, cap: usize, loss: f64) -> PathModel {
        PathModel::simple(0, rate, prop, cap, loss).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn full_queue_overflows() {
        let mut p = path(12e6, 0.0, 2, 0.0);
        let mut r = rng();
        assert_eq!(
            p.enqueue_packet(1500, SimTime::ZERO, &mut r, ()),
            EnqueueOutcome::Enqueued { position: 0 }
        );
        assert_eq!(
            p.enqueue_packet(1500, SimTime::ZERO, &mut r, ()),
            EnqueueOutcome::Enqueued { position: 1 }
        );
        assert_eq!(
            p.enqueue_packet(1500, SimTime::ZERO, &mut r, ()),
            EnqueueOutcome::DroppedOverflow
        );
    }

    #[test]
    fn certain_loss_always_drops() {
        let mut p = path(12e6, 0.0, 10, 1.0);
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(
                p.enqueue_packet(1500, SimTime::ZERO, &mut r, ()),
                EnqueueOutcome::DroppedLoss
            );
        }
        assert_eq!(p.queue_len(), 0);
    }

    #[test]
    fn single_packet_service_time() {
        let p = path(12e6, 0.0, 100, 0.0);
        let now = SimTime::from_secs(0.5);
        // 1500·8 / 12e6 = 1 ms
        assert_eq!(p.departure_time(0, 1500, now), now + SimTime::from_millis(1.0));
    }

    #[test]
    fn backlog_adds_service_time() {
        let mut p = path(12e6, 0.0, 100, 0.0);
        let mut r = rng();
        for _ in 0..10 {
            p.enqueue_packet(1500, SimTime::ZERO, &mut r, ());
        }
        // 11 · 1500 · 8 / 12e6 = 11 ms
        assert_eq!(p.departure_time(10, 1500, SimTime::ZERO), SimTime::from_millis(11.0));
    }

    #[test]
    fn one_way_latency_is_service_plus_propagation() {
        let p = path(12e6, 2.0 * MS, 100, 0.0);
        assert_eq!(p.one_way_latency(1500, SimTime::ZERO), SimTime::from_millis(3.0));
    }

    #[test]
    fn service_integrates_across_rate_change() {
        // 6 Mb/s for the first 0.5 ms then 12 Mb/s: 3000 bits, then 9000 bits
        // at the faster rate take 0.75 ms.
        let cap = CapacitySchedule::new(&[(0.0, 6e6), (0.5e-3, 12e6)]).unwrap();
        assert_eq!(cap.finish_time(SimTime::ZERO, 12_000.0), SimTime::from_millis(1.25));
        assert_eq!(cap.capacity_bits(SimTime::ZERO, SimTime::from_millis(1.0)), 9_000.0);
    }

    #[test]
    fn schedule_validation() {
        assert!(CapacitySchedule::new(&[]).is_err());
        assert!(CapacitySchedule::new(&[(0.0, 1e6), (0.0, 2e6)]).is_err());
        assert!(CapacitySchedule::new(&[(0.0, 0.0)]).is_err());
        assert!(DelaySchedule::new(&[(0.0, -1.0)]).is_err());
        assert!(PathModel::<()>::simple(0, 1e6, 0.0, 10, 1.5).is_err());
    }

    #[test]
    fn arrivals_stay_in_order_when_delay_drops() {
        let delay = DelaySchedule::new(&[(0.0, 5.0 * MS), (1.0 * MS, 1.0 * MS)]).unwrap();
        let mut p: PathModel = PathModel::new(0, CapacitySchedule::constant(1e9), delay, 10, 0.0).unwrap();
        let mut r = rng();
        p.enqueue_packet(100, SimTime::ZERO, &mut r, ());
        p.enqueue_packet(100, SimTime::ZERO, &mut r, ());
        let (_, a1) = p.complete_departure(SimTime::from_millis(0.5)).unwrap();
        let (_, a2) = p.complete_departure(SimTime::from_millis(1.5)).unwrap();
        assert!(a2 >= a1);
    }
}
