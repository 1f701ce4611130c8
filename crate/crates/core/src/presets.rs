//! Named experiment setups at desk scale.
//!
//! Testbed presets (`fig5*`, `baseline`) use a 100 packets/tick link.
//! Strategic-attack presets (`fig6*`) use 1000 packets/tick, i.e. the
//! 10 Gbps / 100K-sender setting scaled down 1000x in both link and
//! population so per-sender shares keep their ratios.

use std::fmt::Write as _;

use crate::model::{FlowId, PacketKind, Tick};
use crate::scheduler::{ClassifierRule, Match, QueueSpec, RuleLayer, SchedulerConfig};
use crate::sim::{ActivationConfig, ScenarioConfig, Summary};
use crate::traffic::{
    PopulationSpec, RateDistribution, SenderGroup, SenderKind, SenderTemplate, TrafficClass, FIRST_SENDER,
};
use crate::{Error, Result};

pub const NAMES: [&str; 7] = ["baseline", "fig5a", "fig5b", "fig5c", "fig6a", "fig6b", "fig6c"];

pub const TESTBED_LINK: u64 = 100;
pub const SWEEP_LINK: u64 = 1000;
/// Population scale of the strategic-attack presets relative to the paper's.
pub const SCALE_DOWN: f64 = 1000.0;

pub const FIG6A_OFF_RATIOS: [f64; 4] = [0.0, 2.0, 6.0, 18.0];
pub const FIG6A_ATTACK_MULTIPLES: [u32; 3] = [1, 5, 10];
pub const FIG6B_AGGRESSIVENESS: [f64; 3] = [0.9, 2.0, 4.0];

/// One runnable point of a preset.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetPoint {
    pub label: String,
    /// Swept parameters, for the sweep summary.
    pub params: Vec<(&'static str, f64)>,
    pub config: ScenarioConfig,
}

impl PresetPoint {
    fn single(config: ScenarioConfig) -> Vec<Self> {
        vec![Self {
            label: config.name.clone(),
            params: Vec::new(),
            config,
        }]
    }
}

/// Expands `name` into its scenario points.
pub fn expand(name: &str) -> Result<Vec<PresetPoint>> {
    let points = match name {
        "baseline" => PresetPoint::single(baseline()),
        "fig5a" => PresetPoint::single(fig5a()),
        "fig5b" => PresetPoint::single(fig5b()),
        "fig5c" => PresetPoint::single(fig5c()),
        "fig6a" => fig6a(),
        "fig6b" => fig6b(),
        "fig6c" => fig6c(),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(points)
}

fn aimd(demand: f64) -> SenderTemplate {
    SenderTemplate::new(SenderKind::LegitAimd, demand)
}

fn population(n_legit: u32, legit_demand: f64) -> PopulationSpec {
    PopulationSpec {
        n_legit,
        n_attack: 0,
        aggressiveness: 0.0,
        rate_distribution: RateDistribution::Uniform,
        legit: aimd(legit_demand),
        attack: SenderTemplate::new(SenderKind::FlatRate, 0.0),
        groups: Vec::new(),
    }
}

/// `count` reflectors each flooding at `rate` packets/tick from `port`.
fn udp_flood(count: u32, rate: f64, port: u16) -> SenderGroup {
    let mut t = SenderTemplate::new(SenderKind::FlatRate, rate);
    t.packet = PacketKind::UdpService(port);
    t.allowlisted = false;
    SenderGroup {
        count,
        class: TrafficClass::Udp,
        template: t,
    }
}

fn periods(n: u32) -> Tick {
    n * crate::model::PolicerParams::DEFAULT_DETECTION_PERIOD
}

/// Legitimate senders only, well under capacity.
pub fn baseline() -> ScenarioConfig {
    let pop = population(10, 0.07 * TESTBED_LINK as f64);
    ScenarioConfig::new("baseline", periods(6), TESTBED_LINK, SchedulerConfig::tcp_udp(0.9), pop)
}

/// Amplification floods at six times the link rate against TCP clients at
/// 70% of capacity; the flood filter engages at 10 s.
pub fn fig5a() -> ScenarioConfig {
    let c = TESTBED_LINK as f64;
    let mut pop = population(10, 0.07 * c);
    pop.groups.push(udp_flood(6, c, 123));
    let mut cfg = ScenarioConfig::new("fig5a", periods(8), TESTBED_LINK, SchedulerConfig::tcp_udp(0.9), pop);
    cfg.activation.activate_at = Some(1000);
    cfg
}

/// Six flat-rate senders that passed authentication against one TCP client.
pub fn fig5b() -> ScenarioConfig {
    let c = TESTBED_LINK as f64;
    let mut pop = population(1, 0.5 * c);
    pop.n_attack = 6;
    pop.aggressiveness = 6.0;
    let mut cfg = ScenarioConfig::new("fig5b", periods(30), TESTBED_LINK, SchedulerConfig::tcp_udp(0.9), pop);
    cfg.activation.release_ticks = None;
    cfg
}

/// Premium clients with a dedicated 20% queue next to common clients, flat
/// attackers and amplification floods.
pub fn fig5c() -> ScenarioConfig {
    let c = TESTBED_LINK as f64;
    let n_premium = 4u32;
    let mut pop = population(10, 0.06 * c);
    pop.n_attack = 3;
    pop.aggressiveness = 3.0;
    let mut premium = SenderTemplate::new(SenderKind::FlatRate, 0.2 * c / f64::from(n_premium));
    premium.class = Some(TrafficClass::Premium);
    pop.groups.push(SenderGroup {
        count: n_premium,
        class: TrafficClass::Premium,
        template: premium,
    });
    pop.groups.push(udp_flood(6, c, 1900));

    let first_premium = FIRST_SENDER + pop.n_legit + pop.n_attack;
    let premium_ids = (0..n_premium).map(|i| FlowId(first_premium + i)).collect();
    let mut rules = vec![ClassifierRule::queue(
        Match::Sources(premium_ids),
        "premium",
        RuleLayer::Victim,
    )];
    rules.extend(crate::scheduler::amplification_rules("udp"));
    rules.push(ClassifierRule::queue(Match::AnyUdp, "udp", RuleLayer::Flood));
    let scheduler = SchedulerConfig {
        queues: vec![
            QueueSpec::new("premium", 0.2).dedicated(),
            QueueSpec::new("common", 0.7),
            QueueSpec::new("udp", 0.1),
        ],
        rules,
        default_queue: "common".into(),
    };
    let mut cfg = ScenarioConfig::new("fig5c", periods(30), TESTBED_LINK, scheduler, pop);
    cfg.activation.release_ticks = None;
    cfg
}

/// Standard deviation in packets/tick for attacker rates drawn around `mean`.
/// The paper's deviation of 1 is read in kbps at its own scale, so the
/// relative spread is kept: `1 kbps / (A_f * 10 Gbps / N_A_paper)`.
pub fn sweep_std(mean: f64, n_attack: u32, aggressiveness: f64) -> f64 {
    let n_attack_paper = f64::from(n_attack) * SCALE_DOWN;
    mean * n_attack_paper / (aggressiveness * 1e7)
}

fn sweep_config(
    name: String,
    n_legit: u32,
    n_attack: u32,
    af: f64,
    attack: SenderTemplate,
    duration: Tick,
) -> ScenarioConfig {
    let c = SWEEP_LINK as f64;
    let mean = af * c / f64::from(n_attack.max(1));
    let pop = PopulationSpec {
        n_legit,
        n_attack,
        aggressiveness: af,
        rate_distribution: RateDistribution::Gaussian {
            std: sweep_std(mean, n_attack, af),
        },
        legit: aimd(0.9 * c / f64::from(n_legit)),
        attack,
        groups: Vec::new(),
    };
    let mut cfg = ScenarioConfig::new(&name, duration, SWEEP_LINK, SchedulerConfig::single("link"), pop);
    cfg.activation = ActivationConfig {
        release_ticks: None,
        ..ActivationConfig::default()
    };
    cfg
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

/// On-off attackers: R_off/on in {0, 2, 6, 18} against N_A in {1, 5, 10} x N_L.
pub fn fig6a() -> Vec<PresetPoint> {
    let n_legit = 100;
    let on_len = periods(1);
    let mut out = Vec::new();
    for &r in &FIG6A_OFF_RATIOS {
        for &m in &FIG6A_ATTACK_MULTIPLES {
            let n_attack = m * n_legit;
            let mut shrew = SenderTemplate::new(SenderKind::OnOffShrew, 0.0);
            shrew.on_len = on_len;
            shrew.off_ratio = r;
            let cycle = (1.0 + r) * f64::from(on_len);
            let duration = periods(30).max((10.0 * cycle) as Tick);
            let mut cfg = sweep_config(
                format!("fig6a_R{}_NA{}", fmt_num(r), n_attack),
                n_legit,
                n_attack,
                2.0,
                shrew,
                duration,
            );
            // Entries must outlive the longest off-period.
            cfg.policer.eviction_periods = Some(20);
            out.push(PresetPoint {
                label: cfg.name.clone(),
                params: vec![("off_ratio", r), ("n_attack", f64::from(n_attack))],
                config: cfg,
            });
        }
    }
    out
}

/// Flat-rate attackers with aggressiveness A_f in {0.9, 2, 4}, N_L:N_A = 1:5.
pub fn fig6b() -> Vec<PresetPoint> {
    FIG6B_AGGRESSIVENESS
        .iter()
        .map(|&af| {
            let cfg = sweep_config(
                format!("fig6b_Af{}", fmt_num(af)),
                100,
                500,
                af,
                SenderTemplate::new(SenderKind::FlatRate, 0.0),
                periods(30),
            );
            PresetPoint {
                label: cfg.name.clone(),
                params: vec![("aggressiveness", af)],
                config: cfg,
            }
        })
        .collect()
}

/// Attackers that follow the rate limits: AIMD-compliant and the oracle that
/// knows its own window.
pub fn fig6c() -> Vec<PresetPoint> {
    [("compliant", SenderKind::CompliantAimd), ("oracle", SenderKind::Oracle)]
        .into_iter()
        .map(|(tag, kind)| {
            let mut cfg = sweep_config(
                format!("fig6c_{tag}"),
                50,
                500,
                2.0,
                SenderTemplate::new(kind, 0.0),
                periods(30),
            );
            // Senders that all back off on loss never push the loss rate over
            // the activation threshold; the victim switches policing on.
            cfg.activation.activate_at = Some(periods(1));
            PresetPoint {
                label: cfg.name.clone(),
                params: Vec::new(),
                config: cfg,
            }
        })
        .collect()
}

/// One CSV row per point with bounds and steady-state figures.
pub fn sweep_summary_csv(points: &[(PresetPoint, Summary)]) -> String {
    let mut keys: Vec<&str> = Vec::new();
    for (p, _) in points {
        for (k, _) in &p.params {
            if !keys.contains(k) {
                keys.push(k);
            }
        }
    }
    let mut out = String::from("point");
    for k in &keys {
        let _ = write!(out, ",{k}");
    }
    out.push_str(
        ",n_legit,n_attack,bandwidth,fair,attacker_cap,legit_floor,legit_per_sender,attack_per_sender,\
attack_share,legit_gain,utilization,legit_at_least_fair,attacker_within_cap,attacker_within_cap_every_period\n",
    );
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    let flag = |x: Option<bool>| x.map(|v| v.to_string()).unwrap_or_default();
    for (p, s) in points {
        out.push_str(&p.label);
        for k in &keys {
            let v = p.params.iter().find(|(pk, _)| pk == k).map(|(_, v)| *v);
            let _ = write!(out, ",{}", v.map(fmt_num).unwrap_or_default());
        }
        let _ = writeln!(
            out,
            ",{},{},{:.6},{},{},{},{:.6},{:.6},{:.6},{},{:.6},{},{},{}",
            s.n_legit,
            s.n_attack,
            s.bandwidth,
            opt(s.bounds.map(|b| b.fair)),
            opt(s.bounds.map(|b| b.attacker_cap)),
            opt(s.bounds.map(|b| b.legit_floor)),
            s.legit_per_sender,
            s.attack_per_sender,
            s.attack_share,
            opt(s.legit_gain),
            s.utilization,
            flag(s.verdicts.legit_at_least_fair),
            flag(s.verdicts.attacker_within_cap),
            flag(s.verdicts.attacker_within_cap_every_period),
        );
    }
    out
}
