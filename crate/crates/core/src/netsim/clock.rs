use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::time::SimTime;

struct Scheduled<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed so the max-heap pops the earliest (time, insertion) pair.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Event queue with a monotone clock. Events at equal times are dispatched
/// in insertion order.
pub struct SimClock<E> {
    now: SimTime,
    next_seq: u64,
    rng_seed: u64,
    queue: BinaryHeap<Scheduled<E>>,
}

impl<E> SimClock<E> {
    pub fn new(rng_seed: u64) -> Self {
        SimClock {
            now: SimTime::ZERO,
            next_seq: 0,
            rng_seed,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Schedules `event` at absolute time `at` (clamped to now).
    pub fn schedule(&mut self, at: SimTime, event: E) {
        let at = at.max(self.now);
        self.queue.push(Scheduled {
            at,
            seq: self.next_seq,
            event,
        });
        self.next_seq += 1;
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) {
        self.schedule(self.now + delay, event);
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|s| s.at)
    }

    /// Pops the next event if it is due at or before `until`, moving the
    /// clock to its timestamp.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        if self.queue.peek()?.at > until {
            return None;
        }
        let s = self.queue.pop()?;
        self.now = s.at;
        Some((s.at, s.event))
    }

    /// Sets the clock forward without dispatching anything.
    pub fn set_now(&mut self, t: SimTime) {
        assert!(t >= self.now, "clock cannot move backwards");
        self.now = t;
    }

    /// Drains every event due at or before `until` in dispatch order and
    /// leaves the clock at `until`.
    pub fn advance(&mut self, until: SimTime) -> Vec<(SimTime, E)> {
        assert!(until >= self.now, "advance target {until} is before now {}", self.now);
        let mut out = Vec::new();
        while let Some(ev) = self.pop_until(until) {
            out.push(ev);
        }
        self.now = until;
        out
    }
}
