//! Traffic sources and per-UE downlink queues.

use std::collections::VecDeque;

use crate::domain::UeProfile;

/// Constant-rate packet source following a UE's traffic pattern. Fractional
/// bytes are carried over so long-run arrivals match the offered rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSource {
    profile: UeProfile,
    pub packet_size_bytes: u64,
    carry_bytes: f64,
}

impl TrafficSource {
    pub fn new(profile: UeProfile, packet_size_bytes: u64) -> Self {
        assert!(packet_size_bytes > 0);
        Self {
            profile,
            packet_size_bytes,
            carry_bytes: 0.0,
        }
    }

    pub fn profile(&self) -> &UeProfile {
        &self.profile
    }

    /// Whole-packet bytes arriving during the subframe starting at `t_ms`.
    pub fn arrivals(&mut self, t_ms: u64, subframe_ms: u32) -> u64 {
        let rate = self.profile.offered_rate_bps(t_ms);
        self.carry_bytes += rate * f64::from(subframe_ms) * 1e-3 / 8.0;
        let packets = (self.carry_bytes / self.packet_size_bytes as f64).floor();
        self.carry_bytes -= packets * self.packet_size_bytes as f64;
        packets as u64 * self.packet_size_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Chunk {
    arrival_ms: u64,
    bytes: u64,
    failed_once: bool,
}

/// Bytes leaving the head of the queue in one transport block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dequeued {
    pub bytes: u64,
    /// Sum over delivered bytes of their sojourn time.
    pub byte_ms: f64,
}

/// FIFO of same-arrival byte chunks with a drop-tail size limit.
#[derive(Debug, Clone, PartialEq)]
pub struct UeQueue {
    chunks: VecDeque<Chunk>,
    bytes: u64,
    limit_bytes: u64,
}

impl UeQueue {
    pub fn new(limit_bytes: u64) -> Self {
        Self {
            chunks: VecDeque::new(),
            bytes: 0,
            limit_bytes,
        }
    }

    /// Bytes already queued above a lowered limit stay queued.
    pub fn set_limit(&mut self, limit_bytes: u64) {
        self.limit_bytes = limit_bytes;
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    pub fn is_empty(&self) -> bool {
        self.bytes == 0
    }

    pub fn head_arrival_ms(&self) -> Option<u64> {
        self.chunks.front().map(|c| c.arrival_ms)
    }

    /// The head bytes already failed once and wait for their retransmission.
    pub fn retx_pending(&self) -> bool {
        self.chunks.front().is_some_and(|c| c.failed_once)
    }

    /// Enqueues up to the size limit; returns the bytes dropped at the tail.
    pub fn push(&mut self, arrival_ms: u64, bytes: u64) -> u64 {
        let accepted = bytes.min(self.limit_bytes.saturating_sub(self.bytes));
        if accepted > 0 {
            debug_assert!(self.chunks.back().map_or(true, |c| c.arrival_ms <= arrival_ms));
            self.chunks.push_back(Chunk {
                arrival_ms,
                bytes: accepted,
                failed_once: false,
            });
            self.bytes += accepted;
        }
        bytes - accepted
    }

    /// Removes `bytes` from the head, delivered at the end of `now_end_ms`.
    pub fn dequeue(&mut self, bytes: u64, now_end_ms: u64) -> Dequeued {
        let mut left = bytes.min(self.bytes);
        let mut out = Dequeued::default();
        while left > 0 {
            let head = self.chunks.front_mut().expect("byte count out of sync");
            let take = head.bytes.min(left);
            out.bytes += take;
            out.byte_ms += take as f64 * now_end_ms.saturating_sub(head.arrival_ms) as f64;
            head.bytes -= take;
            left -= take;
            if head.bytes == 0 {
                self.chunks.pop_front();
            }
        }
        self.bytes -= out.bytes;
        out
    }

    /// Applies a failed transport block covering the head `bytes`: bytes on
    /// their first attempt stay queued for one retransmission, bytes that
    /// already failed are dropped. Returns the dropped byte count.
    pub fn fail(&mut self, bytes: u64) -> u64 {
        let mut left = bytes.min(self.bytes);
        let mut dropped = 0;
        let mut idx = 0;
        while left > 0 && idx < self.chunks.len() {
            let chunk = self.chunks[idx];
            let take = chunk.bytes.min(left);
            left -= take;
            if chunk.failed_once {
                dropped += take;
                if take == chunk.bytes {
                    self.chunks.remove(idx);
                } else {
                    self.chunks[idx].bytes -= take;
                    idx += 1;
                }
            } else {
                if take < chunk.bytes {
                    self.chunks[idx].bytes -= take;
                    self.chunks.insert(
                        idx,
                        Chunk {
                            arrival_ms: chunk.arrival_ms,
                            bytes: take,
                            failed_once: true,
                        },
                    );
                } else {
                    self.chunks[idx].failed_once = true;
                }
                idx += 1;
            }
        }
        self.bytes -= dropped;
        dropped
    }

    /// Arrival times are non-decreasing from head to tail.
    pub fn is_ordered(&self) -> bool {
        self.chunks
            .iter()
            .zip(self.chunks.iter().skip(1))
            .all(|(a, b)| a.arrival_ms <= b.arrival_ms)
    }
}
