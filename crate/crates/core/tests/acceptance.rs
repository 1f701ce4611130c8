//! End-to-end acceptance: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

mod common;

use std::collections::BTreeMap;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::water_fill_oracle;
use trilayer::bench;
use trilayer::presets::{self, PresetPoint};
use trilayer::scheduler::{QueueSpec, SchedulerConfig, WfqScheduler};
use trilayer::sim::{run, Summary};
use trilayer::{
    FlowEntry, FlowId, FlowTable, PacketKind, PacketOutcome, PacketQueue, PacketRecord, Policer, PolicerParams,
};

struct Verdict {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

/// Runs every point of a preset in parallel.
fn run_preset(name: &str) -> (Vec<(PresetPoint, Summary)>, Duration) {
    let start = Instant::now();
    let points = presets::expand(name).unwrap();
    let handles: Vec<_> = points
        .into_iter()
        .map(|p| {
            thread::spawn(move || {
                let out = run(&p.config).unwrap();
                (p, out.summary)
            })
        })
        .collect();
    let results = handles.into_iter().map(|h| h.join().unwrap()).collect();
    (results, start.elapsed())
}

fn at_least_fair(s: &Summary) -> bool {
    s.verdicts.legit_at_least_fair == Some(true)
}

fn criterion_1() -> Verdict {
    let (runs, took) = run_preset("fig5a");
    let s = &runs[0].1;
    let c = s.link_capacity as f64;
    let demand = 0.7 * c;
    let legit_ok = s.goodput.legit >= 0.95 * demand;
    let udp_ok = (s.goodput.udp - 0.3 * c).abs() <= 0.05 * c;
    let time_ok = took < Duration::from_secs(60);
    Verdict {
        id: 1,
        name: "flood filtering with weighted queues",
        pass: legit_ok && udp_ok && time_ok && s.verdicts.conservation,
        detail: format!(
            "legit {:.2}/tick vs demand {demand:.0}, udp {:.2}/tick vs {:.0}±{:.0}, {:.1}s",
            s.goodput.legit,
            s.goodput.udp,
            0.3 * c,
            0.05 * c,
            took.as_secs_f64()
        ),
    }
}

fn criterion_2() -> Verdict {
    let (runs, _) = run_preset("fig5b");
    let s = &runs[0].1;
    let demand = runs[0].0.config.population.legit.demand * f64::from(runs[0].0.config.population.n_legit);
    Verdict {
        id: 2,
        name: "flat-rate attackers halved out",
        pass: s.attack_share < 0.01 && s.goodput.legit >= 0.95 * demand && s.verdicts.conservation,
        detail: format!(
            "attack share {:.4} of B, legit {:.2}/tick vs demand {demand:.0}",
            s.attack_share, s.goodput.legit
        ),
    }
}

fn criterion_3() -> Verdict {
    let (runs, _) = run_preset("fig5c");
    let (p, s) = &runs[0];
    let weights: Vec<f64> = p.config.scheduler.queues.iter().map(|q| q.weight).collect();
    let premium_demand = p
        .config
        .population
        .groups
        .iter()
        .filter(|g| g.class == trilayer::traffic::TrafficClass::Premium)
        .map(|g| f64::from(g.count) * g.template.demand)
        .sum::<f64>();
    let c = s.link_capacity as f64;
    let shape_ok = weights == [0.2, 0.7, 0.1] && (premium_demand - 0.2 * c).abs() < 1e-9;
    Verdict {
        id: 3,
        name: "premium queue isolation",
        pass: shape_ok && s.drops_by_class.premium == 0.0 && s.goodput.premium > 0.0 && s.verdicts.conservation,
        detail: format!(
            "weights {weights:?}, premium demand {premium_demand:.0}/tick, premium drops {} over the run",
            s.drops_by_class.premium
        ),
    }
}

fn criterion_4() -> Verdict {
    let (runs, took) = run_preset("fig6a");
    let mut failures = Vec::new();
    // Gain by off ratio, ordered by attacker count.
    let mut gains: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (p, s) in &runs {
        let param = |k: &str| p.params.iter().find(|(n, _)| *n == k).map(|(_, v)| *v).unwrap();
        if !at_least_fair(s) {
            failures.push(format!(
                "{} legit {:.3} < fair {:.3}",
                p.label,
                s.legit_per_sender,
                s.bounds.unwrap().fair
            ));
        }
        if s.attack_share >= 0.01 {
            failures.push(format!("{} attack share {:.4}", p.label, s.attack_share));
        }
        if !s.verdicts.conservation {
            failures.push(format!("{} conservation", p.label));
        }
        gains
            .entry(format!("{}", param("off_ratio")))
            .or_default()
            .push((param("n_attack"), s.legit_gain.unwrap()));
    }
    for (r, mut g) in gains {
        g.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !g.windows(2).all(|w| w[1].1 > w[0].1) {
            failures.push(format!("R={r} gains not increasing with N_A: {g:?}"));
        }
    }
    let time_ok = took < Duration::from_secs(600);
    if !time_ok {
        failures.push(format!("took {:.0}s", took.as_secs_f64()));
    }
    let min_gain = runs
        .iter()
        .map(|(_, s)| s.legit_gain.unwrap())
        .fold(f64::INFINITY, f64::min);
    Verdict {
        id: 4,
        name: "on-off attack sweep",
        pass: failures.is_empty() && runs.len() == 12,
        detail: if failures.is_empty() {
            format!(
                "{} points, min legit/fair {min_gain:.2}, max attack share {:.5}, {:.1}s",
                runs.len(),
                runs.iter().map(|(_, s)| s.attack_share).fold(0.0, f64::max),
                took.as_secs_f64()
            )
        } else {
            failures.join("; ")
        },
    }
}

fn criterion_5() -> Verdict {
    let (runs, _) = run_preset("fig6b");
    let parts: Vec<String> = runs
        .iter()
        .map(|(p, s)| format!("{} {:.2}/{:.2}", p.label, s.legit_per_sender, s.bounds.unwrap().fair))
        .collect();
    Verdict {
        id: 5,
        name: "aggressiveness sweep",
        pass: runs.len() == 3 && runs.iter().all(|(_, s)| at_least_fair(s) && s.verdicts.conservation),
        detail: format!("legit/fair per point: {}", parts.join(", ")),
    }
}

fn criterion_6() -> Verdict {
    let (runs, _) = run_preset("fig6c");
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for (p, s) in &runs {
        let b = s.bounds.unwrap();
        if p.label.ends_with("oracle") {
            let worst = s.worst_period_attack.unwrap();
            notes.push(format!(
                "oracle worst period {worst:.1}/tick vs cap {:.1} + one-period allowance",
                b.attacker_cap
            ));
            if s.verdicts.attacker_within_cap_every_period != Some(true) {
                failures.push("oracle exceeds the cap".to_string());
            }
        } else {
            let dev = s.attack_per_sender / b.fair - 1.0;
            notes.push(format!(
                "compliant attacker {:+.1}% of fair, legit {:.3} vs fair {:.3}",
                100.0 * dev,
                s.legit_per_sender,
                b.fair
            ));
            if dev.abs() > 0.10 {
                failures.push(format!("compliant attacker {:+.1}% of fair", 100.0 * dev));
            }
            if !at_least_fair(s) {
                failures.push(format!(
                    "compliant legit {:.3} < 0.98 x {:.3}",
                    s.legit_per_sender, b.fair
                ));
            }
        }
    }
    Verdict {
        id: 6,
        name: "fair-share bounds",
        pass: failures.is_empty() && runs.len() == 2,
        detail: if failures.is_empty() {
            notes.join("; ")
        } else {
            format!("{}; {}", failures.join("; "), notes.join("; "))
        },
    }
}

fn criterion_7() -> Verdict {
    let report = bench::run_bench(&bench::DEFAULT_SIZES, bench::MIN_OPS, 0).unwrap();
    let payload_ok = FlowEntry::PAYLOAD_BYTES == 24 && report.bytes_per_entry == 24;
    let small = report.points.iter().find(|p| p.table_size == 1_000_000);
    let latency_ok = small.is_some_and(|p| p.median_ns < 1000.0);
    let ratio_ok = report.size_independent == Some(true) && report.points.len() == 2;
    let medians: Vec<String> = report
        .points
        .iter()
        .map(|p| format!("{}: {:.1} ns", p.table_size, p.median_ns))
        .collect();
    let skipped: Vec<String> = report
        .skipped
        .iter()
        .map(|s| format!("{} skipped ({})", s.table_size, s.reason))
        .collect();
    Verdict {
        id: 7,
        name: "per-packet cost independent of table size",
        pass: payload_ok && latency_ok && ratio_ok,
        detail: format!(
            "entry {} bytes, medians [{}]{}, ratio {}",
            FlowEntry::PAYLOAD_BYTES,
            medians.join(", "),
            if skipped.is_empty() {
                String::new()
            } else {
                format!(" {}", skipped.join(", "))
            },
            report.size_ratio.map_or("n/a".into(), |r| format!("{r:.2}"))
        ),
    }
}

fn window_sum_holds() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = PolicerParams::new(20_000.0).with_detection_period(40);
    let mut p = Policer::new(params, FlowTable::with_allowlist((1..=200).map(FlowId))).unwrap();
    let mut q = PacketQueue::new(5000);
    let mut t = 0;
    for _ in 0..100_000 {
        match rng.gen_range(0..20) {
            0..=15 => {
                p.process_burst(
                    &mut q,
                    FlowId(rng.gen_range(1..=210)),
                    t,
                    PacketKind::Regular,
                    rng.gen_range(1..300),
                );
            }
            16 | 17 => {
                q.pop_n(rng.gen_range(0..3000), |_| {});
            }
            18 => t += rng.gen_range(1..30),
            _ => {
                p.evict_idle(t, 2);
            }
        }
        if (p.table.window_total() - p.table.resum_windows()).abs() > 1e-6 * p.table.resum_windows().max(1.0) {
            return false;
        }
    }
    true
}

fn smoothing_closed_form_holds() -> bool {
    let lambda = 0.3;
    let mut params = PolicerParams::new(100.0).with_detection_period(10);
    params.lambda = lambda;
    params.loss_threshold = 0.999;
    let mut p = Policer::new(params, FlowTable::with_allowlist([FlowId(1)])).unwrap();
    p.admit_flow(FlowId(1), 0).unwrap();
    let mut q = PacketQueue::new(u64::MAX);
    // Window 100, 125 packets per period: constant recent loss r, so after
    // k judged periods L_k = r (1 - lambda^k).
    let r = 25.0 / 125.0;
    for k in 0..12u32 {
        p.process_burst(&mut q, FlowId(1), k * 11, PacketKind::Regular, 125);
        let got = p.table.get(FlowId(1)).unwrap().loss_rate;
        let want = r * (1.0 - lambda.powi(k as i32));
        if (got - want).abs() > 1e-9 {
            return false;
        }
    }
    true
}

fn wfq_holds() -> bool {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=5);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0)).collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let queues = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| QueueSpec {
                buffer_capacity: Some(1 << 40),
                ..QueueSpec::new(&format!("q{i}"), w)
            })
            .collect();
        let cfg = SchedulerConfig {
            queues,
            rules: Vec::new(),
            default_queue: "q0".into(),
        };
        let cap = rng.gen_range(1..200u64);
        let mut wfq = WfqScheduler::new(&cfg, cap);
        let mut lag = vec![0.0; n];
        for t in 0..500 {
            for (i, w) in weights.iter().enumerate() {
                let n_pkts = rng.gen_range(0..=(2.6 * w * cap as f64) as u64 + 1);
                for _ in 0..n_pkts {
                    wfq.enqueue(i, PacketRecord::regular(i as u32, t));
                }
            }
            let backlog: Vec<u64> = (0..n).map(|i| wfq.queue(i).len()).collect();
            let fluid = water_fill_oracle(&weights, &backlog, cap as f64);
            let served = wfq.schedule_tick(|_, _| {});
            if served.iter().sum::<u64>() != cap.min(backlog.iter().sum()) {
                return false;
            }
            for i in 0..n {
                lag[i] = if wfq.queue(i).is_empty() {
                    0.0
                } else {
                    lag[i] + fluid[i] - served[i] as f64
                };
                if lag[i].abs() >= 1.0 + 1e-6 {
                    return false;
                }
            }
        }
    }
    true
}

fn rollover_order_holds() -> bool {
    let params = PolicerParams::new(5.0).with_detection_period(10);
    let mut p = Policer::new(params, FlowTable::with_allowlist([FlowId(1)])).unwrap();
    p.admit_flow(FlowId(1), 0).unwrap();
    let mut q = PacketQueue::new(100);
    let pkt = |t| PacketRecord::regular(1, t);
    let filled = (0..5).all(|_| p.process_packet(&mut q, pkt(3)) == PacketOutcome::Enqueued);
    // t = 10 is still inside the period, so it is over the window.
    let inside = p.process_packet(&mut q, pkt(10)) == PacketOutcome::DroppedByWindow;
    // t = 11 rolls over first and is counted as the new period's first packet.
    let fresh = p.process_packet(&mut q, pkt(11)) == PacketOutcome::Enqueued;
    let e = p.table.get(FlowId(1)).unwrap();
    filled && inside && fresh && e.received == 1 && e.dropped == 0 && e.period_start == 11
}

fn determinism_holds() -> bool {
    let mut cfg = presets::fig5b();
    cfg.duration = 4000;
    cfg.record_decisions = true;
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    a.series.to_csv() == b.series.to_csv()
        && a.summary.to_json() == b.summary.to_json()
        && a.decision_log == b.decision_log
}

fn conservation_on_every_run() -> (bool, usize) {
    let mut rows = 0;
    for name in ["baseline", "fig5a", "fig5b", "fig5c"] {
        for p in presets::expand(name).unwrap() {
            let out = run(&p.config).unwrap();
            rows += out.series.rows.len();
            if !out.series.conservation_violations().is_empty() {
                return (false, rows);
            }
        }
    }
    (true, rows)
}

fn criterion_8() -> Verdict {
    let checks = [
        ("window sum", window_sum_holds()),
        ("loss smoothing", smoothing_closed_form_holds()),
        ("wfq vs water-fill", wfq_holds()),
        ("rollover order", rollover_order_holds()),
        ("determinism", determinism_holds()),
    ];
    let (conserved, rows) = conservation_on_every_run();
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let pass = failed.is_empty() && conserved;
    Verdict {
        id: 8,
        name: "property suites",
        pass,
        detail: if pass {
            format!("all checks hold, conservation over {rows} rows")
        } else {
            format!("failed: {failed:?}, conservation {conserved}")
        },
    }
}

#[test]
fn acceptance() {
    let heavy: Vec<thread::JoinHandle<Verdict>> = vec![
        thread::spawn(criterion_4),
        thread::spawn(criterion_5),
        thread::spawn(criterion_6),
        thread::spawn(criterion_8),
    ];
    let mut verdicts = vec![criterion_1(), criterion_2(), criterion_3()];
    verdicts.extend(heavy.into_iter().map(|h| h.join().unwrap()));
    // Timing is measured with the machine otherwise quiet.
    verdicts.push(criterion_7());
    verdicts.sort_by_key(|v| v.id);

    for v in &verdicts {
        println!(
            "criterion {} {}: {} ({})",
            v.id,
            v.name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
