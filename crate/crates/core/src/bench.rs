//! Per-packet policing cost against flow-table size.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{FlowEntry, FlowId, FlowTable, PacketRecord, PolicerParams, Tick};
use crate::policer::Policer;
use crate::queue::PacketQueue;
use crate::Result;

pub const DEFAULT_SIZES: [u64; 2] = [1_000_000, 10_000_000];
pub const MIN_OPS: u64 = 1_000_000;
pub const BATCH: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub table_size: u64,
    pub ops: u64,
    pub median_ns: f64,
    pub p99_ns: f64,
    /// Semantic payload of all entries.
    pub payload_bytes: u64,
    /// Estimated bytes held by the table and allowlist containers.
    pub container_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub table_size: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub bytes_per_entry: usize,
    pub points: Vec<BenchPoint>,
    pub skipped: Vec<SkippedPoint>,
    /// Median latency of the largest measured size over the smallest.
    pub size_ratio: Option<f64>,
    pub size_independent: Option<bool>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Rough resident size of a table with `n` entries plus its allowlist.
/// Hash tables grow to a power of two buckets at 7/8 load, one control byte each.
pub fn estimate_bytes(n: u64) -> u64 {
    let buckets = ((n as f64 * 8.0 / 7.0).ceil() as u64).max(1).next_power_of_two();
    let entry = std::mem::size_of::<(FlowId, FlowEntry)>() as u64 + 1;
    let allow = std::mem::size_of::<FlowId>() as u64 + 1;
    // The batch admission keeps a deduplicated copy of the sources while filling.
    buckets * (entry + 2 * allow)
}

/// `MemAvailable` from /proc/meminfo, in bytes.
pub fn available_memory() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    text.lines()
        .find(|l| l.starts_with("MemAvailable:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|kb| kb.parse::<u64>().ok())
        .map(|kb| kb * 1024)
}

/// Parses sizes such as `1e6,10000000,1e8`.
pub fn parse_sizes(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|v| *v >= 1.0 && v.fract() == 0.0)
                .map(|v| v as u64)
                .ok_or_else(|| crate::Error::Parse {
                    input: p.to_string(),
                    reason: "expected a positive integer table size".into(),
                })
        })
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

/// Fills a table with `n` flows and times `ops` random-source packets.
pub fn measure(n: u64, ops: u64, seed: u64) -> Result<BenchPoint> {
    let n32 =
        u32::try_from(n).map_err(|_| crate::Error::InvalidParameter(format!("table size {n} exceeds 32-bit ids")))?;
    let params = PolicerParams::new(n as f64 * 10.0);
    let mut policer = Policer::new(params, FlowTable::with_allowlist((0..n32).map(FlowId)))?;
    policer.admit_batch((0..n32).map(FlowId), 0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = PacketQueue::new(u64::MAX);
    let batches = ops.div_ceil(BATCH as u64) as usize;
    let mut samples = Vec::with_capacity(batches);
    let mut sources = vec![0u32; BATCH];
    for b in 0..batches {
        let t = b as Tick;
        sources.iter_mut().for_each(|s| *s = rng.gen_range(0..n32));
        let start = Instant::now();
        for &s in &sources {
            std::hint::black_box(policer.process_packet(&mut q, PacketRecord::regular(s, t)));
        }
        samples.push(start.elapsed().as_nanos() as f64 / BATCH as f64);
        q.pop_n(q.len(), |_| {});
    }
    samples.sort_by(f64::total_cmp);
    Ok(BenchPoint {
        table_size: n,
        ops: (batches * BATCH) as u64,
        median_ns: percentile(&samples, 0.5),
        p99_ns: percentile(&samples, 0.99),
        payload_bytes: n * FlowEntry::PAYLOAD_BYTES as u64,
        container_bytes: estimate_bytes(n),
    })
}

/// Runs every size that fits in memory. `ops` is raised to at least
/// [`MIN_OPS`].
pub fn run_bench(sizes: &[u64], ops: u64, seed: u64) -> Result<BenchReport> {
    let ops = ops.max(MIN_OPS);
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &n in sizes {
        let need = estimate_bytes(n);
        let avail = available_memory();
        log::info!(
            "table size {n}: estimated {:.1} MiB, available {}",
            need as f64 / 1048576.0,
            avail.map_or("unknown".into(), |a| format!("{:.1} MiB", a as f64 / 1048576.0))
        );
        if let Some(a) = avail {
            if need > a / 10 * 8 {
                let reason = format!("needs ~{need} bytes, {a} available");
                log::warn!("skipping table size {n}: {reason}");
                skipped.push(SkippedPoint { table_size: n, reason });
                continue;
            }
        }
        points.push(measure(n, ops, seed)?);
    }
    let size_ratio = match (points.first(), points.last()) {
        (Some(a), Some(b)) if points.len() > 1 => Some(b.median_ns / a.median_ns),
        _ => None,
    };
    Ok(BenchReport {
        bytes_per_entry: FlowEntry::PAYLOAD_BYTES,
        points,
        skipped,
        size_ratio,
        size_independent: size_ratio.map(|r| r <= 2.0),
    })
}
