//! Static flood classification and the weighted fair queuing link.
//!
//! Packets are routed to named queues by an ordered rule list. Victim-defined
//! rules (premium clients, blocked protocols) are evaluated before the static
//! amplification-protocol rules; anything unmatched lands in the default queue,
//! which is also where the congestion policer admits traffic.
//!
//! The link serves the queues with per-queue deficit counters against the
//! fluid weighted fair share: each tick the fluid allocation is computed by
//! water-filling over the current backlogs, and each queue is served the
//! integer part of its allocation plus carried deficit. The link therefore never
//! idles while a queue is backlogged, and a continuously backlogged queue falls
//! at most one packet behind `weight * capacity * ticks`.

use serde::{Deserialize, Serialize};

use crate::model::{FlowId, PacketKind, PacketRecord};
use crate::queue::{EnqueueOutcome, PacketQueue, Run, DEFAULT_BUFFER_DELAY_TICKS};
use crate::ValidationError;

/// Service ports commonly abused for reflection and amplification.
pub const AMPLIFICATION_PORTS: [(u16, &str); 7] = [
    (123, "ntp"),
    (53, "dns"),
    (1900, "ssdp"),
    (161, "snmp"),
    (19, "chargen"),
    (17, "qotd"),
    (520, "ripv1"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Match {
    Any,
    AnyUdp,
    UdpPort(u16),
    Syn,
    Sources(Vec<FlowId>),
}

impl Match {
    pub fn matches(&self, pkt: &PacketRecord) -> bool {
        match self {
            Match::Any => true,
            Match::AnyUdp => matches!(pkt.kind, PacketKind::UdpService(_)),
            Match::UdpPort(p) => pkt.kind == PacketKind::UdpService(*p),
            Match::Syn => pkt.kind == PacketKind::Syn,
            Match::Sources(list) => list.contains(&pkt.source),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[default]
    Queue,
    Block,
}

/// Which defense layer a rule belongs to. Victim rules are always in force;
/// flood rules only while the defense is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleLayer {
    Victim,
    #[default]
    Flood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRule {
    #[serde(rename = "match")]
    pub matcher: Match,
    /// Target queue; ignored for `Block`.
    #[serde(default)]
    pub queue: String,
    #[serde(default)]
    pub action: Action,
    #[serde(default)]
    pub layer: RuleLayer,
}

impl ClassifierRule {
    pub fn queue(matcher: Match, queue: &str, layer: RuleLayer) -> Self {
        Self {
            matcher,
            queue: queue.to_string(),
            action: Action::Queue,
            layer,
        }
    }

    pub fn block(matcher: Match, layer: RuleLayer) -> Self {
        Self {
            matcher,
            queue: String::new(),
            action: Action::Block,
            layer,
        }
    }
}

/// Flood rules steering every amplification protocol into `queue`.
pub fn amplification_rules(queue: &str) -> Vec<ClassifierRule> {
    AMPLIFICATION_PORTS
        .iter()
        .map(|(port, _)| ClassifierRule::queue(Match::UdpPort(*port), queue, RuleLayer::Flood))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub name: String,
    pub weight: f64,
    /// Packets; defaults to 200 ms of service at the queue's weighted rate.
    #[serde(default)]
    pub buffer_capacity: Option<u64>,
    #[serde(default)]
    pub dedicated: bool,
}

impl QueueSpec {
    pub fn new(name: &str, weight: f64) -> Self {
        Self {
            name: name.to_string(),
            weight,
            buffer_capacity: None,
            dedicated: false,
        }
    }

    pub fn dedicated(mut self) -> Self {
        self.dedicated = true;
        self
    }

    pub fn buffer_for(&self, link_capacity: u64) -> u64 {
        self.buffer_capacity.unwrap_or_else(|| {
            (self.weight * link_capacity as f64 * f64::from(DEFAULT_BUFFER_DELAY_TICKS))
                .ceil()
                .max(1.0) as u64
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub queues: Vec<QueueSpec>,
    #[serde(default)]
    pub rules: Vec<ClassifierRule>,
    /// Queue for unmatched traffic; the congestion layer lives here.
    pub default_queue: String,
}

impl SchedulerConfig {
    /// Two queues, regular traffic and UDP floods, with the amplification rules.
    pub fn tcp_udp(tcp_weight: f64) -> Self {
        let mut rules = amplification_rules("udp");
        rules.push(ClassifierRule::queue(Match::AnyUdp, "udp", RuleLayer::Flood));
        Self {
            queues: vec![
                QueueSpec::new("tcp", tcp_weight),
                QueueSpec::new("udp", 1.0 - tcp_weight),
            ],
            rules,
            default_queue: "tcp".into(),
        }
    }

    pub fn single(name: &str) -> Self {
        Self {
            queues: vec![QueueSpec::new(name, 1.0)],
            rules: Vec::new(),
            default_queue: name.into(),
        }
    }

    pub fn queue_index(&self, name: &str) -> Option<usize> {
        self.queues.iter().position(|q| q.name == name)
    }

    pub fn default_weight(&self) -> f64 {
        self.queue_index(&self.default_queue)
            .map(|i| self.queues[i].weight)
            .unwrap_or(0.0)
    }

    pub fn validate(&self, v: &mut ValidationError) {
        v.check(!self.queues.is_empty(), || "scheduler.queues must not be empty".into());
        let sum: f64 = self.queues.iter().map(|q| q.weight).sum();
        v.check((sum - 1.0).abs() <= 1e-9, || {
            format!("QueueSpec weights must sum to 1 (±1e-9), got {sum}")
        });
        for q in &self.queues {
            v.check(q.weight > 0.0 && q.weight <= 1.0, || {
                format!("QueueSpec `{}` weight must lie in (0,1], got {}", q.name, q.weight)
            });
        }
        for (i, q) in self.queues.iter().enumerate() {
            v.check(!self.queues[..i].iter().any(|o| o.name == q.name), || {
                format!("QueueSpec name `{}` is duplicated", q.name)
            });
        }
        v.check(self.queue_index(&self.default_queue).is_some(), || {
            format!("scheduler.default_queue `{}` names no queue", self.default_queue)
        });
        for (i, r) in self.rules.iter().enumerate() {
            if r.action == Action::Queue {
                v.check(self.queue_index(&r.queue).is_some(), || {
                    format!("ClassifierRule #{i} targets unknown queue `{}`", r.queue)
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target<'a> {
    Queue(&'a str),
    Block,
}

/// First matching rule wins; unmatched packets go to `default_queue`.
/// With `flood_layer` off only victim rules are consulted.
pub fn classify<'a>(
    rules: &'a [ClassifierRule],
    default_queue: &'a str,
    pkt: &PacketRecord,
    flood_layer: bool,
) -> Target<'a> {
    let victim = rules.iter().filter(|r| r.layer == RuleLayer::Victim);
    let flood = rules.iter().filter(|r| flood_layer && r.layer == RuleLayer::Flood);
    match victim.chain(flood).find(|r| r.matcher.matches(pkt)) {
        Some(r) if r.action == Action::Block => Target::Block,
        Some(r) => Target::Queue(&r.queue),
        None => Target::Queue(default_queue),
    }
}

/// Fluid weighted max-min allocation of `capacity` over `backlog`.
pub fn water_fill(weights: &[f64], backlog: &[u64], capacity: f64) -> Vec<f64> {
    let mut alloc = vec![0.0; weights.len()];
    let mut active: Vec<usize> = (0..weights.len()).filter(|&i| backlog[i] > 0).collect();
    let mut remaining = capacity;
    while !active.is_empty() && remaining > 0.0 {
        let wsum: f64 = active.iter().map(|&i| weights[i]).sum();
        let satisfied: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| (backlog[i] as f64) <= weights[i] / wsum * remaining)
            .collect();
        if satisfied.is_empty() {
            for &i in &active {
                alloc[i] = weights[i] / wsum * remaining;
            }
            break;
        }
        for &i in &satisfied {
            alloc[i] = backlog[i] as f64;
            remaining -= backlog[i] as f64;
        }
        active.retain(|i| !satisfied.contains(i));
    }
    alloc
}

#[derive(Debug, Clone)]
pub struct WfqScheduler {
    specs: Vec<QueueSpec>,
    queues: Vec<PacketQueue>,
    deficit: Vec<f64>,
    link_capacity: u64,
}

impl WfqScheduler {
    pub fn new(config: &SchedulerConfig, link_capacity: u64) -> Self {
        assert!(link_capacity >= 1, "link capacity must be at least one packet per tick");
        Self {
            specs: config.queues.clone(),
            queues: config
                .queues
                .iter()
                .map(|q| PacketQueue::new(q.buffer_for(link_capacity)))
                .collect(),
            deficit: vec![0.0; config.queues.len()],
            link_capacity,
        }
    }

    pub fn link_capacity(&self) -> u64 {
        self.link_capacity
    }

    pub fn specs(&self) -> &[QueueSpec] {
        &self.specs
    }

    pub fn queue(&self, i: usize) -> &PacketQueue {
        &self.queues[i]
    }

    pub fn queue_mut(&mut self, i: usize) -> &mut PacketQueue {
        &mut self.queues[i]
    }

    pub fn backlog(&self) -> u64 {
        self.queues.iter().map(PacketQueue::len).sum()
    }

    pub fn enqueue(&mut self, i: usize, pkt: PacketRecord) -> EnqueueOutcome {
        self.queues[i].enqueue(pkt)
    }

    /// Serves one tick. Every transmitted run is reported to `deliver` with its
    /// queue index; returns the packets served per queue.
    pub fn schedule_tick(&mut self, mut deliver: impl FnMut(usize, Run)) -> Vec<u64> {
        let backlog: Vec<u64> = self.queues.iter().map(PacketQueue::len).collect();
        let weights: Vec<f64> = self.specs.iter().map(|s| s.weight).collect();
        let fluid = water_fill(&weights, &backlog, self.link_capacity as f64);
        let target = self.link_capacity.min(backlog.iter().sum());

        let mut entitled: Vec<f64> = fluid.iter().zip(&self.deficit).map(|(f, d)| f + d).collect();
        let mut serve: Vec<u64> = entitled
            .iter()
            .zip(&backlog)
            .map(|(e, &b)| (e.max(0.0).floor() as u64).min(b))
            .collect();
        let mut total: u64 = serve.iter().sum();

        // Settle rounding so the link sends exactly `target` packets.
        while total < target {
            let pick = (0..serve.len())
                .filter(|&i| serve[i] < backlog[i])
                .max_by(|&a, &b| {
                    let ra = entitled[a] - serve[a] as f64;
                    let rb = entitled[b] - serve[b] as f64;
                    ra.total_cmp(&rb).then(b.cmp(&a))
                })
                .expect("backlog remains while below target");
            serve[pick] += 1;
            total += 1;
        }
        while total > target {
            let pick = (0..serve.len())
                .filter(|&i| serve[i] > 0)
                .min_by(|&a, &b| {
                    let ra = entitled[a] - serve[a] as f64;
                    let rb = entitled[b] - serve[b] as f64;
                    ra.total_cmp(&rb).then(b.cmp(&a))
                })
                .expect("some queue is served while above target");
            serve[pick] -= 1;
            total -= 1;
        }

        for (i, q) in self.queues.iter_mut().enumerate() {
            q.pop_n(serve[i], |run| deliver(i, run));
            entitled[i] -= serve[i] as f64;
            self.deficit[i] = if q.is_empty() { 0.0 } else { entitled[i] };
        }
        serve
    }
}
