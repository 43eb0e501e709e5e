//! Ordered, latency-bearing RIC to DU message link.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct E2Link<T> {
    pub latency_ms: u64,
    in_flight: VecDeque<(u64, T)>,
    last_due_ms: u64,
}

impl<T> E2Link<T> {
    pub fn new(latency_ms: u64) -> Self {
        Self {
            latency_ms,
            in_flight: VecDeque::new(),
            last_due_ms: 0,
        }
    }

    /// Sends at `now_ms`; the message lands `latency_ms + extra_ms` later but
    /// never before an earlier message.
    pub fn send(&mut self, now_ms: u64, extra_ms: u64, msg: T) -> u64 {
        let due = (now_ms + self.latency_ms + extra_ms).max(self.last_due_ms);
        self.last_due_ms = due;
        self.in_flight.push_back((due, msg));
        due
    }

    /// Newest message due at or before `now_ms`; older ones are superseded.
    pub fn deliver(&mut self, now_ms: u64) -> Option<T> {
        let mut latest = None;
        while self.in_flight.front().is_some_and(|(due, _)| *due <= now_ms) {
            latest = self.in_flight.pop_front().map(|(_, m)| m);
        }
        latest
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }
}
