use std::collections::VecDeque;

use crate::netsim::SimTime;

/// Order-preserving channel that releases each item exactly `delay` after
/// it was sent.
#[derive(Debug, Clone)]
pub struct DelayLine<T> {
    delay: SimTime,
    items: VecDeque<(SimTime, T)>,
}

impl<T> DelayLine<T> {
    pub fn new(delay: SimTime) -> Self {
        DelayLine {
            delay,
            items: VecDeque::new(),
        }
    }

    pub fn delay(&self) -> SimTime {
        self.delay
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Queues `item` sent at `now`; returns its delivery time.
    pub fn push(&mut self, now: SimTime, item: T) -> SimTime {
        let at = now + self.delay;
        debug_assert!(self.items.back().map_or(true, |(t, _)| *t <= at));
        self.items.push_back((at, item));
        at
    }

    pub fn next_ready(&self) -> Option<SimTime> {
        self.items.front().map(|(t, _)| *t)
    }

    /// Removes everything deliverable at or before `now`, with delivery times.
    pub fn drain_ready(&mut self, now: SimTime) -> Vec<(SimTime, T)> {
        let n = self.items.partition_point(|(t, _)| *t <= now);
        self.items.drain(..n).collect()
    }
}
