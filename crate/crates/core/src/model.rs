//! Flow table, per-sender policing state and policer tunables.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, ValidationError};

/// Simulated time in ticks.
pub type Tick = u32;

/// Every packet is normalized to a full-size 1.5 KB frame.
pub const PACKET_BYTES: u32 = 1500;

/// Entries that see no traffic for this many detection periods are evicted.
pub const DEFAULT_EVICTION_PERIODS: u32 = 10;

/// A source address. All traffic from one source is policed as a single unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", Ipv4Addr::from(self.0))
    }
}

impl FromStr for FlowId {
    type Err = Error;

    /// Accepts dotted-quad (`10.0.0.7`) or a plain 32-bit integer.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(addr) = s.parse::<Ipv4Addr>() {
            return Ok(FlowId(u32::from(addr)));
        }
        s.parse::<u32>().map(FlowId).map_err(|_| Error::Parse {
            input: s.to_string(),
            reason: "expected dotted-quad or 32-bit integer".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Regular,
    Syn,
    /// UDP traffic tagged with its service port (123 for NTP, 53 for DNS, ...).
    UdpService(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketRecord {
    pub source: FlowId,
    pub arrival: Tick,
    pub kind: PacketKind,
}

impl PacketRecord {
    pub fn new(source: FlowId, arrival: Tick, kind: PacketKind) -> Self {
        Self { source, arrival, kind }
    }

    pub fn regular(source: u32, arrival: Tick) -> Self {
        Self::new(FlowId(source), arrival, PacketKind::Regular)
    }

    pub const fn size(&self) -> u32 {
        PACKET_BYTES
    }
}

/// Policing state for one source.
///
/// The layout is the 24-byte semantic payload of an entry; the source address
/// is the table key and is not repeated here.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowEntry {
    /// Arrival time of the first packet of the current detection period.
    pub period_start: Tick,
    /// Packets allowed per detection period. Fractional; enforced as floor.
    pub window: f32,
    /// Packets received in the current period.
    pub received: u32,
    /// Packets dropped in the current period.
    pub dropped: u32,
    /// Smoothed loss rate.
    pub loss_rate: f64,
}

impl FlowEntry {
    pub const PAYLOAD_BYTES: usize = std::mem::size_of::<FlowEntry>();

    /// Integer number of packets the window admits per period.
    pub fn allowance(&self) -> u32 {
        let w = self.window.max(0.0).floor();
        if w >= u32::MAX as f32 {
            u32::MAX
        } else {
            w as u32
        }
    }

    /// Little-endian packed encoding of the payload.
    pub fn to_bytes(&self) -> [u8; Self::PAYLOAD_BYTES] {
        let mut out = [0u8; Self::PAYLOAD_BYTES];
        out[0..4].copy_from_slice(&self.period_start.to_le_bytes());
        out[4..8].copy_from_slice(&self.window.to_le_bytes());
        out[8..12].copy_from_slice(&self.received.to_le_bytes());
        out[12..16].copy_from_slice(&self.dropped.to_le_bytes());
        out[16..24].copy_from_slice(&self.loss_rate.to_le_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; Self::PAYLOAD_BYTES]) -> Self {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        Self {
            period_start: u32_at(0),
            window: f32::from_le_bytes(b[4..8].try_into().unwrap()),
            received: u32_at(8),
            dropped: u32_at(12),
            loss_rate: f64::from_le_bytes(b[16..24].try_into().unwrap()),
        }
    }
}

/// Tunables of the congestion-accountability rate limiter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicerParams {
    /// Detection period length in ticks.
    pub detection_period: Tick,
    /// Weight given to previous losses when smoothing.
    pub lambda: f64,
    /// Loss rate above which a heavy sender is halved.
    pub loss_threshold: f64,
    /// Congestion-layer bandwidth in packets per detection period.
    pub bandwidth: f64,
    /// Per-sender fair share in packets per period. Maintained by the table.
    #[serde(default)]
    pub fair_share: f64,
    /// Share of `bandwidth` reserved for SYNs from unverified sources.
    pub syn_budget_fraction: f64,
}

impl PolicerParams {
    pub const DEFAULT_DETECTION_PERIOD: Tick = 500;
    pub const DEFAULT_LAMBDA: f64 = 0.5;
    pub const DEFAULT_LOSS_THRESHOLD: f64 = 0.05;
    pub const DEFAULT_SYN_BUDGET_FRACTION: f64 = 0.05;

    pub fn new(bandwidth: f64) -> Self {
        Self {
            detection_period: Self::DEFAULT_DETECTION_PERIOD,
            lambda: Self::DEFAULT_LAMBDA,
            loss_threshold: Self::DEFAULT_LOSS_THRESHOLD,
            bandwidth,
            fair_share: bandwidth,
            syn_budget_fraction: Self::DEFAULT_SYN_BUDGET_FRACTION,
        }
    }

    pub fn with_detection_period(mut self, ticks: Tick) -> Self {
        self.detection_period = ticks;
        self
    }

    /// Bandwidth in packets per tick.
    pub fn bandwidth_per_tick(&self) -> f64 {
        self.bandwidth / f64::from(self.detection_period)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = ValidationError::new();
        v.check(self.lambda > 0.0 && self.lambda < 1.0, || {
            format!("policer.lambda must lie in (0,1), got {}", self.lambda)
        });
        v.check(self.loss_threshold > 0.0 && self.loss_threshold < 1.0, || {
            format!("policer.loss_threshold must lie in (0,1), got {}", self.loss_threshold)
        });
        v.check(self.detection_period > 0, || {
            "policer.detection_period must be > 0".into()
        });
        v.check(self.bandwidth > 0.0 && self.bandwidth.is_finite(), || {
            format!("policer bandwidth must be > 0, got {}", self.bandwidth)
        });
        v.check((0.0..=1.0).contains(&self.syn_budget_fraction), || {
            format!(
                "policer.syn_budget_fraction must lie in [0,1], got {}",
                self.syn_budget_fraction
            )
        });
        v.into_result()
    }
}

/// Packets of `PACKET_BYTES` that fit in one period at `bits_per_second`.
pub fn packets_per_period(bits_per_second: f64, period_seconds: f64) -> f64 {
    (bits_per_second * period_seconds / f64::from(PACKET_BYTES * 8)).floor()
}

/// Parses an allowlist: one source per line, `#` starts a comment.
pub fn parse_allowlist(text: &str) -> Result<Vec<FlowId>> {
    text.lines()
        .map(|line| line.split('#').next().unwrap_or("").trim())
        .filter(|line| !line.is_empty())
        .map(FlowId::from_str)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    Admitted(FlowEntry),
    AlreadyPresent,
}

/// Per-sender state for every admitted source plus the running window sum.
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    entries: FxHashMap<FlowId, FlowEntry>,
    window_total: f64,
    allowlist: FxHashSet<FlowId>,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_allowlist(sources: impl IntoIterator<Item = FlowId>) -> Self {
        let mut t = Self::new();
        t.allowlist.extend(sources);
        t
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            entries: FxHashMap::with_capacity_and_hasher(n, Default::default()),
            window_total: 0.0,
            allowlist: FxHashSet::with_capacity_and_hasher(n, Default::default()),
        }
    }

    pub fn allow(&mut self, source: FlowId) {
        self.allowlist.insert(source);
    }

    pub fn is_allowed(&self, source: FlowId) -> bool {
        self.allowlist.contains(&source)
    }

    pub fn allowlist_len(&self) -> usize {
        self.allowlist.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn window_total(&self) -> f64 {
        self.window_total
    }

    pub fn get(&self, source: FlowId) -> Option<&FlowEntry> {
        self.entries.get(&source)
    }

    pub fn contains(&self, source: FlowId) -> bool {
        self.entries.contains_key(&source)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FlowId, &FlowEntry)> {
        self.entries.iter()
    }

    /// Full re-sum of every entry's window, for invariant checks.
    pub fn resum_windows(&self) -> f64 {
        self.entries.values().map(|e| f64::from(e.window)).sum()
    }

    pub(crate) fn entry_mut(&mut self, source: FlowId) -> Option<&mut FlowEntry> {
        self.entries.get_mut(&source)
    }

    /// Stores a new window for `source` and applies the delta to the total.
    /// Returns the previous and stored window values.
    pub(crate) fn set_window(&mut self, source: FlowId, window: f64) -> Option<(f64, f64)> {
        let entry = self.entries.get_mut(&source)?;
        let old = f64::from(entry.window);
        entry.window = window.max(0.0) as f32;
        let new = f64::from(entry.window);
        self.window_total += new - old;
        if self.window_total < 0.0 {
            self.window_total = 0.0;
        }
        Some((old, new))
    }

    /// Admits `source` with the fair share computed for the enlarged table.
    pub fn admit_flow(&mut self, params: &mut PolicerParams, source: FlowId, now: Tick) -> Result<Admission> {
        if !self.allowlist.contains(&source) {
            return Err(Error::NotAllowlisted(source.0));
        }
        if self.entries.contains_key(&source) {
            return Ok(Admission::AlreadyPresent);
        }
        params.fair_share = params.bandwidth / (self.entries.len() + 1) as f64;
        let entry = self.insert_fresh(source, now, params.fair_share);
        Ok(Admission::Admitted(entry))
    }

    /// Admits a batch of sources at once, all starting at the fair share of the
    /// final table size. Sources that are not allowlisted or already present are
    /// skipped. Returns the number admitted.
    pub fn admit_batch(
        &mut self,
        params: &mut PolicerParams,
        sources: impl IntoIterator<Item = FlowId>,
        now: Tick,
    ) -> usize {
        let fresh: Vec<FlowId> = sources
            .into_iter()
            .filter(|s| self.allowlist.contains(s) && !self.entries.contains_key(s))
            .collect::<FxHashSet<_>>()
            .into_iter()
            .collect();
        if fresh.is_empty() {
            return 0;
        }
        let mut fresh = fresh;
        fresh.sort_unstable();
        params.fair_share = params.bandwidth / (self.entries.len() + fresh.len()) as f64;
        for s in &fresh {
            self.insert_fresh(*s, now, params.fair_share);
        }
        fresh.len()
    }

    fn insert_fresh(&mut self, source: FlowId, now: Tick, window: f64) -> FlowEntry {
        let entry = FlowEntry {
            period_start: now,
            window: window as f32,
            ..FlowEntry::default()
        };
        self.window_total += f64::from(entry.window);
        self.entries.insert(source, entry);
        entry
    }

    /// `B / N` in packets per period, stored into `params`.
    pub fn recompute_fair_share(&self, params: &mut PolicerParams) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(Error::EmptyTable);
        }
        params.fair_share = params.bandwidth / self.entries.len() as f64;
        Ok(params.fair_share)
    }

    /// Removes entries whose current period started more than `idle_periods`
    /// detection periods before `now`. Recomputes the fair share if anything
    /// was removed and the table is not empty. Returns the evicted count.
    pub fn evict_idle(&mut self, params: &mut PolicerParams, now: Tick, idle_periods: u32) -> usize {
        let horizon = u64::from(params.detection_period) * u64::from(idle_periods);
        let before = self.entries.len();
        self.entries
            .retain(|_, e| u64::from(now.saturating_sub(e.period_start)) <= horizon);
        let evicted = before - self.entries.len();
        if evicted > 0 {
            // Re-sum instead of subtracting to avoid drift after mass removal.
            self.window_total = self.resum_windows();
            let _ = self.recompute_fair_share(params);
        }
        evicted
    }

    pub fn clear_entries(&mut self) {
        self.entries.clear();
        self.window_total = 0.0;
    }
}

/// A flow table split by source address into independent shards. Each shard
/// keeps its own window sum; the global sum is taken on read.
#[derive(Debug, Clone)]
pub struct ShardedFlowTable {
    shards: Vec<FlowTable>,
}

impl ShardedFlowTable {
    pub fn new(shards: usize) -> Self {
        assert!(shards > 0, "at least one shard");
        Self {
            shards: (0..shards).map(|_| FlowTable::new()).collect(),
        }
    }

    pub fn shard_index(&self, source: FlowId) -> usize {
        source.0 as usize % self.shards.len()
    }

    pub fn shard(&self, source: FlowId) -> &FlowTable {
        &self.shards[self.shard_index(source)]
    }

    pub fn shard_mut(&mut self, source: FlowId) -> &mut FlowTable {
        let i = self.shard_index(source);
        &mut self.shards[i]
    }

    pub fn shards_mut(&mut self) -> &mut [FlowTable] {
        &mut self.shards
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(FlowTable::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_total(&self) -> f64 {
        self.shards.iter().map(FlowTable::window_total).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: u32) -> FlowTable {
        FlowTable::with_allowlist((0..n).map(FlowId))
    }

    #[test]
    fn entry_payload_is_24_bytes() {
        assert_eq!(FlowEntry::PAYLOAD_BYTES, 24);
        let e = FlowEntry {
            period_start: 7,
            window: 12.5,
            received: 3,
            dropped: 1,
            loss_rate: 0.25,
        };
        assert_eq!(FlowEntry::from_bytes(&e.to_bytes()), e);
    }

    #[test]
    fn first_admission_gets_full_bandwidth() {
        let mut t = table(10);
        let mut p = PolicerParams::new(1000.0);
        let a = t.admit_flow(&mut p, FlowId(0), 0).unwrap();
        let Admission::Admitted(e) = a else { panic!() };
        assert_eq!(e.window, 1000.0);
        assert_eq!(t.window_total(), 1000.0);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn tenth_admission_uses_updated_count() {
        let mut t = table(10);
        let mut p = PolicerParams::new(1000.0);
        for i in 0..9 {
            t.admit_flow(&mut p, FlowId(i), 0).unwrap();
        }
        let Admission::Admitted(e) = t.admit_flow(&mut p, FlowId(9), 0).unwrap() else {
            panic!()
        };
        assert_eq!(e.window, 100.0);
        assert_eq!(t.len(), 10);
        assert!((t.window_total() - t.resum_windows()).abs() < 1e-9);
    }

    #[test]
    fn unlisted_source_is_rejected_and_table_unchanged() {
        let mut t = table(2);
        let mut p = PolicerParams::new(1000.0);
        assert!(matches!(
            t.admit_flow(&mut p, FlowId(99), 0),
            Err(Error::NotAllowlisted(99))
        ));
        assert!(t.is_empty());
        assert_eq!(t.window_total(), 0.0);
    }

    #[test]
    fn duplicate_admission_is_a_noop() {
        let mut t = table(2);
        let mut p = PolicerParams::new(1000.0);
        t.admit_flow(&mut p, FlowId(1), 0).unwrap();
        assert_eq!(t.admit_flow(&mut p, FlowId(1), 5).unwrap(), Admission::AlreadyPresent);
        assert_eq!(t.len(), 1);
        assert_eq!(t.window_total(), 1000.0);
    }

    #[test]
    fn fair_share_examples() {
        let mut t = table(4);
        let mut p = PolicerParams::new(1000.0);
        assert!(matches!(t.recompute_fair_share(&mut p), Err(Error::EmptyTable)));
        t.admit_flow(&mut p, FlowId(0), 0).unwrap();
        assert_eq!(t.recompute_fair_share(&mut p).unwrap(), 1000.0);
        for i in 1..4 {
            t.admit_flow(&mut p, FlowId(i), 0).unwrap();
        }
        assert_eq!(t.recompute_fair_share(&mut p).unwrap(), 250.0);
    }

    #[test]
    fn ten_gigabit_fair_share() {
        let b = packets_per_period(10e9, 5.0);
        assert_eq!(b, 4_166_666.0);
        let share = b / 600_000.0;
        assert!((share - 6.944_443_3).abs() < 1e-6);
    }

    #[test]
    fn batch_admission_uses_final_count() {
        let mut t = table(8);
        let mut p = PolicerParams::new(800.0);
        let n = t.admit_batch(&mut p, (0..8).map(FlowId).chain([FlowId(3), FlowId(100)]), 0);
        assert_eq!(n, 8);
        assert!(t.iter().all(|(_, e)| e.window == 100.0));
        assert_eq!(t.window_total(), 800.0);
    }

    #[test]
    fn idle_entries_are_evicted() {
        let mut t = table(3);
        let mut p = PolicerParams::new(900.0);
        t.admit_batch(&mut p, [FlowId(0), FlowId(1)], 0);
        t.admit_flow(&mut p, FlowId(2), 4000).unwrap();
        let evicted = t.evict_idle(&mut p, 5001, DEFAULT_EVICTION_PERIODS);
        assert_eq!(evicted, 2);
        assert_eq!(t.len(), 1);
        assert_eq!(p.fair_share, 900.0);
        assert!((t.window_total() - t.resum_windows()).abs() < 1e-9);
    }

    #[test]
    fn allowlist_parsing() {
        let text = "# victim's clients\n10.0.0.1\n  42 # plain integer\n\n192.168.1.255\n";
        let ids = parse_allowlist(text).unwrap();
        assert_eq!(ids, vec![FlowId(0x0A00_0001), FlowId(42), FlowId(0xC0A8_01FF)]);
        assert!(parse_allowlist("10.0.0.300").is_err());
        assert_eq!(FlowId(0x0A00_0001).to_string(), "10.0.0.1");
    }

    #[test]
    fn params_validation_collects_every_problem() {
        let mut p = PolicerParams::new(0.0);
        p.lambda = 1.0;
        p.loss_threshold = 0.0;
        let err = p.validate().unwrap_err();
        assert_eq!(err.problems.len(), 3);
    }

    #[test]
    fn sharded_total_sums_shards() {
        let mut s = ShardedFlowTable::new(4);
        let mut p = PolicerParams::new(100.0);
        for i in 0..16 {
            let shard = s.shard_mut(FlowId(i));
            shard.allow(FlowId(i));
            shard.admit_flow(&mut p, FlowId(i), 0).unwrap();
        }
        assert_eq!(s.len(), 16);
        let resum: f64 = s.shards_mut().iter().map(|t| t.resum_windows()).sum();
        assert!((s.window_total() - resum).abs() < 1e-9);
    }
}
