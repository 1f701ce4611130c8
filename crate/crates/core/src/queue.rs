//! Bounded FIFO packet buffers.
//!
//! Packets are stored run-length encoded: consecutive packets from the same
//! source with the same arrival tick and kind share one [`Run`]. FIFO order is
//! preserved exactly; a run is indistinguishable from its expanded packets.

use std::collections::VecDeque;

use crate::model::{FlowId, PacketKind, PacketRecord, Tick};

/// Round-trip time of the buffer sizing rule, in ticks (200 ms at 10 ms ticks).
pub const DEFAULT_BUFFER_DELAY_TICKS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub source: FlowId,
    pub arrival: Tick,
    pub kind: PacketKind,
    pub count: u32,
}

impl Run {
    pub fn packet(&self) -> PacketRecord {
        PacketRecord::new(self.source, self.arrival, self.kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    DroppedFull,
}

#[derive(Debug, Clone, Default)]
pub struct PacketQueue {
    runs: VecDeque<Run>,
    len: u64,
    capacity: u64,
    accepted: u64,
    dropped: u64,
}

impl PacketQueue {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn free(&self) -> u64 {
        self.capacity.saturating_sub(self.len)
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.capacity
    }

    /// Lifetime count of packets accepted.
    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Lifetime count of packets dropped because the buffer was full.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn enqueue(&mut self, pkt: PacketRecord) -> EnqueueOutcome {
        if self.push_run(pkt.source, pkt.arrival, pkt.kind, 1) == 1 {
            EnqueueOutcome::Accepted
        } else {
            EnqueueOutcome::DroppedFull
        }
    }

    /// Appends up to `count` packets; the excess is dropped. Returns the number
    /// accepted.
    pub fn push_run(&mut self, source: FlowId, arrival: Tick, kind: PacketKind, count: u32) -> u32 {
        let accept = u64::from(count).min(self.free()) as u32;
        self.dropped += u64::from(count - accept);
        if accept == 0 {
            return 0;
        }
        self.accepted += u64::from(accept);
        self.len += u64::from(accept);
        match self.runs.back_mut() {
            Some(last) if last.source == source && last.arrival == arrival && last.kind == kind => {
                last.count += accept;
            }
            _ => self.runs.push_back(Run {
                source,
                arrival,
                kind,
                count: accept,
            }),
        }
        accept
    }

    /// Removes up to `n` packets from the head, reporting each (possibly split)
    /// run to `deliver`. Returns the number removed.
    pub fn pop_n(&mut self, n: u64, mut deliver: impl FnMut(Run)) -> u64 {
        let mut left = n;
        while left > 0 {
            let Some(head) = self.runs.front_mut() else { break };
            let take = u64::from(head.count).min(left) as u32;
            let mut piece = *head;
            piece.count = take;
            head.count -= take;
            if head.count == 0 {
                self.runs.pop_front();
            }
            left -= u64::from(take);
            deliver(piece);
        }
        let removed = n - left;
        self.len -= removed;
        removed
    }

    pub fn pop_packets(&mut self, n: u64) -> Vec<PacketRecord> {
        let mut out = Vec::new();
        self.pop_n(n, |run| {
            out.extend(std::iter::repeat_n(run.packet(), run.count as usize));
        });
        out
    }

    pub fn iter_runs(&self) -> impl Iterator<Item = &Run> {
        self.runs.iter()
    }
}

/// The shared FIFO service queue of the congestion layer, drained at the
/// layer bandwidth.
#[derive(Debug, Clone)]
pub struct CongestionQueue {
    pub buffer: PacketQueue,
    drain_rate: f64,
    credit: f64,
}

impl CongestionQueue {
    pub fn new(capacity: u64, drain_rate: f64) -> Self {
        Self {
            buffer: PacketQueue::new(capacity),
            drain_rate,
            credit: 0.0,
        }
    }

    /// Capacity of one bandwidth-delay product at `drain_rate`.
    pub fn with_default_capacity(drain_rate: f64) -> Self {
        let cap = (drain_rate * f64::from(DEFAULT_BUFFER_DELAY_TICKS)).ceil().max(1.0) as u64;
        Self::new(cap, drain_rate)
    }

    pub fn drain_rate(&self) -> f64 {
        self.drain_rate
    }

    /// Serves up to `drain_rate * budget_ticks` packets in FIFO order.
    /// Fractional service carries over between calls while the queue stays
    /// backlogged.
    pub fn drain(&mut self, budget_ticks: u32) -> Vec<PacketRecord> {
        let mut out = Vec::new();
        self.drain_with(budget_ticks, |run| {
            out.extend(std::iter::repeat_n(run.packet(), run.count as usize));
        });
        out
    }

    pub fn drain_with(&mut self, budget_ticks: u32, deliver: impl FnMut(Run)) -> u64 {
        self.credit += self.drain_rate * f64::from(budget_ticks);
        let whole = self.credit.floor();
        let served = self.buffer.pop_n(whole as u64, deliver);
        self.credit -= served as f64;
        if self.buffer.is_empty() {
            self.credit = 0.0;
        }
        served
    }
}
