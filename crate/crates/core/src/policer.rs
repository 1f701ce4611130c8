//! Congestion-accountability rate limiting.
//!
//! Every admitted source gets a rate limiting window: the number of packets it
//! may push into the shared service queue per detection period. When a packet
//! arrives more than one detection period after the start of its source's
//! current period, the finished period is judged first:
//!
//! ```text
//! recent      = dropped / received            (0 when nothing was received)
//! packet_loss = lambda * loss_rate + (1 - lambda) * recent
//! loss_rate   = packet_loss
//! window      = window / 2                    if packet_loss > L_th and received > fair share
//!             = window / window_total * B     otherwise
//! ```
//!
//! and then the counters restart with the new packet as the first of the new
//! period. Senders that keep transmitting through losses are halved every
//! period; everyone else shares the bandwidth in proportion to their windows.

use std::fmt::Write as _;

use crate::model::{Admission, FlowEntry, FlowId, FlowTable, PacketKind, PacketRecord, PolicerParams, Tick};
use crate::queue::{CongestionQueue, PacketQueue};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketOutcome {
    Enqueued,
    DroppedByWindow,
    DroppedByQueue,
    /// Unknown source, or an unverified SYN that found the SYN queue full.
    Denied,
    SynQueued,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionOutcome {
    pub flow: FlowId,
    pub old_window: f64,
    pub new_window: f64,
    pub packet_loss: f64,
    pub halved: bool,
}

/// Per-outcome packet counts for a burst of identical packets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BurstOutcome {
    pub enqueued: u32,
    pub window_drops: u32,
    pub queue_drops: u32,
    pub denied: u32,
    pub syn_queued: u32,
}

impl BurstOutcome {
    pub fn total(&self) -> u32 {
        self.enqueued + self.window_drops + self.queue_drops + self.denied + self.syn_queued
    }
}

/// Judges the finished period of `source` and updates its window and loss
/// rate. Counters are left untouched; see [`rollover_period`].
pub fn rate_limiting_decision(
    table: &mut FlowTable,
    params: &PolicerParams,
    source: FlowId,
) -> Option<DecisionOutcome> {
    let window_total = table.window_total();
    let entry = table.entry_mut(source)?;
    let recent = if entry.received == 0 {
        0.0
    } else {
        f64::from(entry.dropped) / f64::from(entry.received)
    };
    let packet_loss = params.lambda * entry.loss_rate + (1.0 - params.lambda) * recent;
    entry.loss_rate = packet_loss.clamp(0.0, 1.0);
    let window = f64::from(entry.window);
    let halved = packet_loss > params.loss_threshold && f64::from(entry.received) > params.fair_share;
    let target = if halved {
        window / 2.0
    } else if window_total > 0.0 {
        window / window_total * params.bandwidth
    } else {
        params.fair_share
    };
    let (old_window, new_window) = table.set_window(source, target)?;
    Some(DecisionOutcome {
        flow: source,
        old_window,
        new_window,
        packet_loss,
        halved,
    })
}

/// Starts a new detection period for `source` at `t0`: one decision over the
/// finished period, then the period restarts with zeroed counters. Exactly one
/// decision runs no matter how many whole periods passed idle.
pub fn rollover_period(
    table: &mut FlowTable,
    params: &PolicerParams,
    source: FlowId,
    t0: Tick,
) -> Option<DecisionOutcome> {
    let outcome = rate_limiting_decision(table, params, source)?;
    let entry = table.entry_mut(source)?;
    entry.period_start = t0;
    entry.received = 0;
    entry.dropped = 0;
    Some(outcome)
}

fn period_expired(entry: &FlowEntry, params: &PolicerParams, now: Tick) -> bool {
    u64::from(now) > u64::from(entry.period_start) + u64::from(params.detection_period)
}

/// The congestion-layer policer: flow table, parameters and the bounded SYN
/// queue for unverified sources.
#[derive(Debug, Clone)]
pub struct Policer {
    pub table: FlowTable,
    pub params: PolicerParams,
    syn_queue: CongestionQueue,
    log: Option<Vec<(Tick, DecisionOutcome)>>,
}

impl Policer {
    pub fn new(params: PolicerParams, table: FlowTable) -> Result<Self> {
        params.validate()?;
        let syn_rate = params.syn_budget_fraction * params.bandwidth_per_tick();
        Ok(Self {
            table,
            params,
            syn_queue: CongestionQueue::with_default_capacity(syn_rate),
            log: None,
        })
    }

    /// Records every decision for [`Policer::decision_log_csv`].
    pub fn enable_decision_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn decisions(&self) -> &[(Tick, DecisionOutcome)] {
        self.log.as_deref().unwrap_or(&[])
    }

    /// `t,flow,old_W,new_W,packetLoss,halved`
    pub fn decision_log_csv(&self) -> String {
        let mut out = String::from("t,flow,old_W,new_W,packetLoss,halved\n");
        for (t, d) in self.decisions() {
            let _ = writeln!(
                out,
                "{t},{},{},{},{},{}",
                d.flow.0, d.old_window, d.new_window, d.packet_loss, d.halved
            );
        }
        out
    }

    pub fn syn_queue(&self) -> &CongestionQueue {
        &self.syn_queue
    }

    /// Serves the SYN queue at its bandwidth budget.
    pub fn drain_syn(&mut self, budget_ticks: u32) -> Vec<PacketRecord> {
        self.syn_queue.drain(budget_ticks)
    }

    /// A handshake from `source` completed: it becomes a verified, admitted
    /// sender.
    pub fn complete_handshake(&mut self, source: FlowId, now: Tick) -> Result<Admission> {
        self.table.allow(source);
        self.table.admit_flow(&mut self.params, source, now)
    }

    pub fn admit_flow(&mut self, source: FlowId, now: Tick) -> Result<Admission> {
        self.table.admit_flow(&mut self.params, source, now)
    }

    pub fn admit_batch(&mut self, sources: impl IntoIterator<Item = FlowId>, now: Tick) -> usize {
        self.table.admit_batch(&mut self.params, sources, now)
    }

    pub fn evict_idle(&mut self, now: Tick, idle_periods: u32) -> usize {
        self.table.evict_idle(&mut self.params, now, idle_periods)
    }

    /// Forgets all admitted senders (the allowlist is kept).
    pub fn reset(&mut self) {
        self.table.clear_entries();
        self.params.fair_share = self.params.bandwidth;
    }

    pub fn rollover_period(&mut self, source: FlowId, t0: Tick) -> Option<DecisionOutcome> {
        let d = rollover_period(&mut self.table, &self.params, source, t0)?;
        if let Some(log) = self.log.as_mut() {
            log.push((t0, d));
        }
        Some(d)
    }

    /// Resolves the entry for an arriving packet: admits allowlisted sources,
    /// and runs the period rollover before the packet is counted.
    fn prepare(&mut self, source: FlowId, arrival: Tick) -> bool {
        match self.table.get(source) {
            Some(entry) => {
                if period_expired(entry, &self.params, arrival) {
                    self.rollover_period(source, arrival);
                }
                true
            }
            None => self.table.admit_flow(&mut self.params, source, arrival).is_ok(),
        }
    }

    /// Polices one packet into the service queue `q`.
    pub fn process_packet(&mut self, q: &mut PacketQueue, pkt: PacketRecord) -> PacketOutcome {
        if !self.prepare(pkt.source, pkt.arrival) {
            return self.unverified(pkt, 1).into_single();
        }
        let entry = self.table.entry_mut(pkt.source).expect("entry prepared");
        entry.received = entry.received.saturating_add(1);
        if entry.received > entry.allowance() {
            entry.dropped += 1;
            return PacketOutcome::DroppedByWindow;
        }
        match q.enqueue(pkt) {
            crate::queue::EnqueueOutcome::Accepted => PacketOutcome::Enqueued,
            crate::queue::EnqueueOutcome::DroppedFull => {
                entry.dropped += 1;
                PacketOutcome::DroppedByQueue
            }
        }
    }

    /// Polices `count` packets from `source` that all arrive at `arrival`.
    /// Equivalent to `count` calls to [`Policer::process_packet`].
    pub fn process_burst(
        &mut self,
        q: &mut PacketQueue,
        source: FlowId,
        arrival: Tick,
        kind: PacketKind,
        count: u32,
    ) -> BurstOutcome {
        if count == 0 {
            return BurstOutcome::default();
        }
        if !self.prepare(source, arrival) {
            return self.unverified(PacketRecord::new(source, arrival, kind), count);
        }
        let entry = self.table.entry_mut(source).expect("entry prepared");
        let allowance = entry.allowance();
        let within = allowance.saturating_sub(entry.received).min(count);
        entry.received = entry.received.saturating_add(count);
        let enqueued = q.push_run(source, arrival, kind, within);
        let window_drops = count - within;
        let queue_drops = within - enqueued;
        entry.dropped += window_drops + queue_drops;
        BurstOutcome {
            enqueued,
            window_drops,
            queue_drops,
            ..BurstOutcome::default()
        }
    }

    fn unverified(&mut self, pkt: PacketRecord, count: u32) -> BurstOutcome {
        if pkt.kind == PacketKind::Syn {
            let queued = self.syn_queue.buffer.push_run(pkt.source, pkt.arrival, pkt.kind, count);
            BurstOutcome {
                syn_queued: queued,
                denied: count - queued,
                ..BurstOutcome::default()
            }
        } else {
            BurstOutcome {
                denied: count,
                ..BurstOutcome::default()
            }
        }
    }
}

impl BurstOutcome {
    fn into_single(self) -> PacketOutcome {
        if self.syn_queued == 1 {
            PacketOutcome::SynQueued
        } else {
            PacketOutcome::Denied
        }
    }
}
