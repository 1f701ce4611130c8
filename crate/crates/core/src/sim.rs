//! Deterministic tick-driven flow-level simulator.
//!
//! Topology: senders feed one policing box in front of the victim's link.
//! Each tick:
//!
//! 1. every sender decides how many packets to emit;
//! 2. packets are classified (victim rules always, flood rules while active);
//! 3. traffic for the default queue passes the congestion policer while
//!    active, everything else is enqueued directly;
//! 4. the weighted fair queuing link serves the queues;
//! 5. per-sender delivered/lost counts become next tick's feedback;
//! 6. one metrics row is appended.
//!
//! The policer's shared service queue is the scheduler's default queue, so the
//! policer bandwidth defaults to that queue's weighted share of the link.

use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::model::{FlowId, FlowTable, PacketKind, PacketRecord, PolicerParams, Tick};
use crate::policer::Policer;
use crate::scheduler::{classify, SchedulerConfig, Target, WfqScheduler};
use crate::traffic::{
    build_population, offered_load, Feedback, OracleView, PopulationSpec, SenderKind, SenderModel, SenderState,
    TrafficClass,
};
use crate::{Error, Result, ValidationError};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicerSettings {
    #[serde(default = "PolicerSettings::default_period")]
    pub detection_period: Tick,
    #[serde(default = "PolicerSettings::default_lambda")]
    pub lambda: f64,
    #[serde(default = "PolicerSettings::default_loss_threshold")]
    pub loss_threshold: f64,
    #[serde(default = "PolicerSettings::default_syn_fraction")]
    pub syn_budget_fraction: f64,
    /// Packets per detection period. Defaults to the default queue's weighted
    /// share of the link.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Idle periods before an entry is evicted; `null` disables eviction.
    #[serde(default = "PolicerSettings::default_eviction")]
    pub eviction_periods: Option<u32>,
}

impl PolicerSettings {
    fn default_period() -> Tick {
        PolicerParams::DEFAULT_DETECTION_PERIOD
    }
    fn default_lambda() -> f64 {
        PolicerParams::DEFAULT_LAMBDA
    }
    fn default_loss_threshold() -> f64 {
        PolicerParams::DEFAULT_LOSS_THRESHOLD
    }
    fn default_syn_fraction() -> f64 {
        PolicerParams::DEFAULT_SYN_BUDGET_FRACTION
    }
    fn default_eviction() -> Option<u32> {
        Some(crate::model::DEFAULT_EVICTION_PERIODS)
    }
}

impl Default for PolicerSettings {
    fn default() -> Self {
        Self {
            detection_period: Self::default_period(),
            lambda: Self::default_lambda(),
            loss_threshold: Self::default_loss_threshold(),
            syn_budget_fraction: Self::default_syn_fraction(),
            bandwidth: None,
            eviction_periods: Self::default_eviction(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    /// Threshold controller.
    #[default]
    Auto,
    /// Victim override: policing on for the whole run.
    ForceActive,
    /// Victim override: policing never engages.
    ForceIdle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationConfig {
    #[serde(default = "ActivationConfig::default_utilization")]
    pub utilization_threshold: f64,
    #[serde(default = "ActivationConfig::default_loss")]
    pub loss_threshold: f64,
    #[serde(default = "ActivationConfig::default_hold")]
    pub hold_ticks: u32,
    /// Calm ticks before releasing; `null` keeps policing on once engaged.
    #[serde(default = "ActivationConfig::default_release")]
    pub release_ticks: Option<u32>,
    /// Scheduled activation: the thresholds are ignored, policing engages at
    /// this tick and stays on.
    #[serde(default)]
    pub activate_at: Option<Tick>,
    #[serde(default)]
    pub mode: ActivationMode,
}

impl ActivationConfig {
    fn default_utilization() -> f64 {
        0.9
    }
    fn default_loss() -> f64 {
        0.05
    }
    fn default_hold() -> u32 {
        100
    }
    fn default_release() -> Option<u32> {
        Some(3000)
    }

    fn validate(&self, v: &mut ValidationError) {
        v.check(
            self.utilization_threshold > 0.0 && self.utilization_threshold <= 1.0,
            || {
                format!(
                    "activation.utilization_threshold must lie in (0,1], got {}",
                    self.utilization_threshold
                )
            },
        );
        v.check((0.0..1.0).contains(&self.loss_threshold), || {
            format!(
                "activation.loss_threshold must lie in [0,1), got {}",
                self.loss_threshold
            )
        });
        v.check(self.hold_ticks > 0, || "activation.hold_ticks must be > 0".into());
    }
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self {
            utilization_threshold: Self::default_utilization(),
            loss_threshold: Self::default_loss(),
            hold_ticks: Self::default_hold(),
            release_ticks: Self::default_release(),
            activate_at: None,
            mode: ActivationMode::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicerState {
    Idle,
    Active,
}

/// Threshold controller with hysteresis deciding when policing engages.
#[derive(Debug, Clone)]
pub struct ActivationController {
    cfg: ActivationConfig,
    state: PolicerState,
    streak: u32,
}

impl ActivationController {
    pub fn new(cfg: ActivationConfig) -> Self {
        let state = if cfg.mode == ActivationMode::ForceActive {
            PolicerState::Active
        } else {
            PolicerState::Idle
        };
        Self { cfg, state, streak: 0 }
    }

    pub fn state(&self) -> PolicerState {
        self.state
    }

    /// Feeds one tick of measurements observed at tick `t`.
    pub fn activation_step(&mut self, t: Tick, utilization: f64, loss: f64) -> PolicerState {
        match self.cfg.mode {
            ActivationMode::ForceActive => return PolicerState::Active,
            ActivationMode::ForceIdle => return PolicerState::Idle,
            ActivationMode::Auto => {}
        }
        if let Some(at) = self.cfg.activate_at {
            if t + 1 >= at {
                self.state = PolicerState::Active;
            }
            return self.state;
        }
        let congested = utilization > self.cfg.utilization_threshold && loss > self.cfg.loss_threshold;
        match self.state {
            PolicerState::Idle => {
                self.streak = if congested { self.streak + 1 } else { 0 };
                if self.streak >= self.cfg.hold_ticks {
                    self.state = PolicerState::Active;
                    self.streak = 0;
                }
            }
            PolicerState::Active => {
                let calm = utilization < self.cfg.utilization_threshold && loss < self.cfg.loss_threshold;
                if let Some(release) = self.cfg.release_ticks {
                    self.streak = if calm { self.streak + 1 } else { 0 };
                    if self.streak >= release {
                        self.state = PolicerState::Idle;
                        self.streak = 0;
                    }
                }
            }
        }
        self.state
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default = "ScenarioConfig::default_name")]
    pub name: String,
    pub duration: Tick,
    /// Simulated seconds per tick.
    #[serde(default = "ScenarioConfig::default_tick_seconds")]
    pub tick_seconds: f64,
    /// Link capacity in packets per tick.
    pub link_capacity: u64,
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub policer: PolicerSettings,
    pub population: PopulationSpec,
    #[serde(default)]
    pub activation: ActivationConfig,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of the run at the end treated as steady state.
    #[serde(default = "ScenarioConfig::default_steady")]
    pub steady_fraction: f64,
    /// Keep the per-decision log of the policer.
    #[serde(default)]
    pub record_decisions: bool,
}

impl ScenarioConfig {
    fn default_name() -> String {
        "scenario".into()
    }
    fn default_tick_seconds() -> f64 {
        0.01
    }
    fn default_steady() -> f64 {
        0.2
    }

    pub fn new(
        name: &str,
        duration: Tick,
        link_capacity: u64,
        scheduler: SchedulerConfig,
        population: PopulationSpec,
    ) -> Self {
        Self {
            version: SCENARIO_VERSION,
            name: name.into(),
            duration,
            tick_seconds: Self::default_tick_seconds(),
            link_capacity,
            scheduler,
            policer: PolicerSettings::default(),
            population,
            activation: ActivationConfig::default(),
            seed: 0,
            steady_fraction: Self::default_steady(),
            record_decisions: false,
        }
    }

    /// Congestion-layer bandwidth in packets per detection period.
    pub fn policer_bandwidth(&self) -> f64 {
        self.policer.bandwidth.unwrap_or_else(|| {
            self.scheduler.default_weight() * self.link_capacity as f64 * f64::from(self.policer.detection_period)
        })
    }

    pub fn policer_params(&self) -> PolicerParams {
        PolicerParams {
            detection_period: self.policer.detection_period,
            lambda: self.policer.lambda,
            loss_threshold: self.policer.loss_threshold,
            bandwidth: self.policer_bandwidth(),
            fair_share: self.policer_bandwidth(),
            syn_budget_fraction: self.policer.syn_budget_fraction,
        }
    }

    /// First tick of the steady-state window.
    pub fn steady_start(&self) -> Tick {
        let len = (f64::from(self.duration) * self.steady_fraction).round() as Tick;
        self.duration - len.clamp(1, self.duration.max(1))
    }

    /// Checks every invariant and reports all violations together.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = ValidationError::new();
        v.check(self.version == SCENARIO_VERSION, || {
            format!("version must be {SCENARIO_VERSION}, got {}", self.version)
        });
        v.check(self.duration > 0, || "duration must be > 0".into());
        v.check(self.tick_seconds > 0.0, || "tick_seconds must be > 0".into());
        v.check(self.link_capacity >= 1, || {
            "link_capacity must be >= 1 packet per tick".into()
        });
        v.check(self.steady_fraction > 0.0 && self.steady_fraction <= 1.0, || {
            format!("steady_fraction must lie in (0,1], got {}", self.steady_fraction)
        });
        self.scheduler.validate(&mut v);
        if let Err(e) = self.policer_params().validate() {
            v.problems.extend(e.problems);
        }
        if let Some(b) = self.policer.bandwidth {
            v.check(b > 0.0, || format!("policer.bandwidth must be > 0, got {b}"));
        }
        self.population.validate(&mut v);
        self.activation.validate(&mut v);
        v.into_result()
    }
}

/// Per-tick metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Row {
    pub t: Tick,
    pub offered: [u64; 4],
    pub goodput: [u64; 4],
    pub drop_window: u64,
    pub drop_queue: u64,
    pub drop_denied: u64,
    pub drop_filter: u64,
    pub queued: u64,
    pub utilization: f64,
    pub active: bool,
    pub w_r_total: f64,
    pub n_flows: u64,
}

impl Row {
    pub fn offered_total(&self) -> u64 {
        self.offered.iter().sum()
    }

    pub fn goodput_total(&self) -> u64 {
        self.goodput.iter().sum()
    }

    pub fn drops_total(&self) -> u64 {
        self.drop_window + self.drop_queue + self.drop_denied + self.drop_filter
    }

    pub fn class_goodput(&self, c: TrafficClass) -> u64 {
        self.goodput[c.index()]
    }

    pub fn class_offered(&self, c: TrafficClass) -> u64 {
        self.offered[c.index()]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    pub rows: Vec<Row>,
}

impl TimeSeries {
    pub const HEADER: &'static str = "t,offered_legit,offered_attack,offered_premium,offered_udp,\
goodput_legit,goodput_attack,goodput_premium,goodput_udp,\
drop_window,drop_queue,drop_denied,drop_filter,queued,utilization,active,w_r_total,n_flows";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{:.3},{}",
                r.t,
                r.offered[0],
                r.offered[1],
                r.offered[2],
                r.offered[3],
                r.goodput[0],
                r.goodput[1],
                r.goodput[2],
                r.goodput[3],
                r.drop_window,
                r.drop_queue,
                r.drop_denied,
                r.drop_filter,
                r.queued,
                r.utilization,
                u8::from(r.active),
                r.w_r_total,
                r.n_flows
            );
        }
        out
    }

    /// Ticks whose row breaks `offered = delivered + drops + Δqueued`.
    pub fn conservation_violations(&self) -> Vec<Tick> {
        let mut prev = 0i128;
        let mut bad = Vec::new();
        for r in &self.rows {
            let lhs = i128::from(r.offered_total());
            let rhs = i128::from(r.goodput_total()) + i128::from(r.drops_total()) + i128::from(r.queued) - prev;
            if lhs != rhs {
                bad.push(r.t);
            }
            prev = i128::from(r.queued);
        }
        bad
    }

    /// Mean per-tick goodput of `class` over `[from, to)`.
    pub fn mean_goodput(&self, class: TrafficClass, from: Tick, to: Tick) -> f64 {
        let rows = &self.rows[from as usize..to as usize];
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| r.class_goodput(class) as f64).sum::<f64>() / rows.len() as f64
    }
}

/// Lemma-1 / Theorem-1 reference quantities, in the unit of `bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Per-sender fair share `B / (N_L + N_A)`.
    pub fair: f64,
    /// Upper bound on what all attackers together obtain.
    pub attacker_cap: f64,
    /// `(1 + L_th)` times the fair share.
    pub legit_floor: f64,
}

pub fn fair_share_bound(n_legit: u64, n_attack: u64, bandwidth: f64, loss_threshold: f64) -> Result<Bounds> {
    let n = n_legit + n_attack;
    if n == 0 {
        return Err(Error::InvalidParameter("fair share needs at least one sender".into()));
    }
    let fair = bandwidth / n as f64;
    Ok(Bounds {
        fair,
        attacker_cap: (1.0 + loss_threshold) * n_attack as f64 * fair,
        legit_floor: (1.0 + loss_threshold) * fair,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassFigures {
    pub legit: f64,
    pub attack: f64,
    pub premium: f64,
    pub udp: f64,
}

impl ClassFigures {
    fn from_fn(f: impl Fn(TrafficClass) -> f64) -> Self {
        Self {
            legit: f(TrafficClass::Legit),
            attack: f(TrafficClass::Attack),
            premium: f(TrafficClass::Premium),
            udp: f(TrafficClass::Udp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    /// Every row conserves packets.
    pub conservation: bool,
    /// Mean legitimate per-sender goodput is at least the fair share (2% slack).
    pub legit_at_least_fair: Option<bool>,
    /// Steady-state attacker aggregate stays within the cap.
    pub attacker_within_cap: Option<bool>,
    /// Every full policing period keeps the attacker aggregate within the cap
    /// plus one fair window per attacker.
    pub attacker_within_cap_every_period: Option<bool>,
    /// Mean legitimate per-sender goodput reaches `(1 + L_th)` times fair.
    pub legit_above_floor: Option<bool>,
}

/// Steady-state aggregates of one run. Rates are packets per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub duration: Tick,
    pub steady_start: Tick,
    pub activated_at: Option<Tick>,
    pub link_capacity: u64,
    /// Congestion-layer bandwidth per tick.
    pub bandwidth: f64,
    pub n_legit: u64,
    pub n_attack: u64,
    pub bounds: Option<Bounds>,
    pub offered: ClassFigures,
    pub goodput: ClassFigures,
    pub legit_per_sender: f64,
    pub attack_per_sender: f64,
    /// Attacker aggregate as a fraction of the congestion-layer bandwidth.
    pub attack_share: f64,
    /// Legitimate per-sender goodput divided by the fair share.
    pub legit_gain: Option<f64>,
    pub utilization: f64,
    /// Largest attacker aggregate over any full policing period, per tick.
    pub worst_period_attack: Option<f64>,
    pub drops_window: u64,
    pub drops_queue: u64,
    pub drops_denied: u64,
    pub drops_filter: u64,
    /// Packets lost by each class over the whole run, any cause.
    pub drops_by_class: ClassFigures,
    pub verdicts: Verdicts,
}

impl Summary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: TimeSeries,
    pub summary: Summary,
    /// Total packets delivered per sender during the steady window.
    pub steady_delivered: Vec<(FlowId, TrafficClass, u64)>,
    pub decision_log: Option<String>,
}

#[derive(Debug, Clone, Copy)]
enum Route {
    Queue(usize),
    Block,
}

fn route_for(cfg: &ScenarioConfig, s: &SenderModel, flood_layer: bool) -> Route {
    let probe = PacketRecord::new(s.id, 0, s.packet);
    match classify(&cfg.scheduler.rules, &cfg.scheduler.default_queue, &probe, flood_layer) {
        Target::Block => Route::Block,
        Target::Queue(name) => Route::Queue(cfg.scheduler.queue_index(name).expect("validated target")),
    }
}

/// Runs `cfg` to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let senders = build_population(&cfg.population, cfg.link_capacity as f64, cfg.seed)?;
    let mut v = ValidationError::new();
    for s in &senders {
        s.validate(&mut v);
    }
    // Zero-rate attackers from clipped draws are legal.
    v.problems.retain(|p| !p.contains("demand must be > 0"));
    v.into_result()?;
    Ok(Engine::new(cfg, senders)?.run())
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    senders: Vec<SenderModel>,
    states: Vec<SenderState>,
    index: FxHashMap<FlowId, usize>,
    routes: Vec<[Route; 2]>,
    default_idx: usize,
    scheduler: WfqScheduler,
    policer: Policer,
    controller: ActivationController,
    feedback: Vec<Feedback>,
    delivered: Vec<u64>,
    lost: Vec<u64>,
    class_lost: [u64; 4],
    last_seen: Vec<Option<Tick>>,
    steady: Vec<u64>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ScenarioConfig, senders: Vec<SenderModel>) -> Result<Self> {
        let n = senders.len();
        let allow = senders.iter().filter(|s| s.allowlisted).map(|s| s.id);
        let mut policer = Policer::new(cfg.policer_params(), FlowTable::with_allowlist(allow))?;
        if cfg.record_decisions {
            policer.enable_decision_log();
        }
        Ok(Self {
            cfg,
            states: senders.iter().map(SenderState::new).collect(),
            index: senders.iter().enumerate().map(|(i, s)| (s.id, i)).collect(),
            routes: senders
                .iter()
                .map(|s| [route_for(cfg, s, false), route_for(cfg, s, true)])
                .collect(),
            default_idx: cfg
                .scheduler
                .queue_index(&cfg.scheduler.default_queue)
                .expect("validated"),
            scheduler: WfqScheduler::new(&cfg.scheduler, cfg.link_capacity),
            policer,
            controller: ActivationController::new(cfg.activation.clone()),
            feedback: vec![Feedback::default(); n],
            delivered: vec![0; n],
            lost: vec![0; n],
            class_lost: [0; 4],
            last_seen: vec![None; n],
            steady: vec![0; n],
            senders,
        })
    }

    fn run(mut self) -> SimOutput {
        let cfg = self.cfg;
        let dp = cfg.policer.detection_period;
        let view = OracleView {
            loss_threshold: cfg.policer.loss_threshold,
            detection_period: dp,
        };
        let steady_start = cfg.steady_start();
        let mut series = TimeSeries {
            rows: Vec::with_capacity(cfg.duration as usize),
        };
        let mut activated_at = None;
        if self.controller.state() == PolicerState::Active {
            activated_at = Some(0);
        }
        let n = self.senders.len();

        for t in 0..cfg.duration {
            let active = self.controller.state() == PolicerState::Active;
            let mut row = Row {
                t,
                active,
                ..Row::default()
            };

            // Rotate the service order so no sender is always first into the
            // shared queue.
            let start = if n == 0 { 0 } else { t as usize % n };
            for k in 0..n {
                let i = (start + k) % n;
                let s = &self.senders[i];
                let mut fb = self.feedback[i];
                if s.kind == SenderKind::Oracle && active {
                    fb.window = self.policer.table.get(s.id).map(|e| f64::from(e.window));
                }
                let count = offered_load(s, &mut self.states[i], t, fb, view);
                if count == 0 {
                    continue;
                }
                row.offered[s.class.index()] += u64::from(count);
                match self.routes[i][usize::from(active)] {
                    Route::Block => {
                        row.drop_filter += u64::from(count);
                        self.lost[i] += u64::from(count);
                    }
                    Route::Queue(q) if active && q == self.default_idx => {
                        let o = self
                            .policer
                            .process_burst(self.scheduler.queue_mut(q), s.id, t, s.packet, count);
                        row.drop_window += u64::from(o.window_drops);
                        row.drop_queue += u64::from(o.queue_drops);
                        row.drop_denied += u64::from(o.denied);
                        self.lost[i] += u64::from(o.window_drops + o.queue_drops + o.denied);
                    }
                    Route::Queue(q) => {
                        if q == self.default_idx {
                            self.last_seen[i] = Some(t);
                        }
                        let accepted = self.scheduler.queue_mut(q).push_run(s.id, t, s.packet, count);
                        row.drop_queue += u64::from(count - accepted);
                        self.lost[i] += u64::from(count - accepted);
                    }
                }
            }

            // Verified handshakes join the congestion layer.
            let syns = self.policer.drain_syn(1);
            for p in syns {
                let _ = self.policer.complete_handshake(p.source, t);
                let q = self.scheduler.queue_mut(self.default_idx);
                if q.push_run(p.source, p.arrival, PacketKind::Regular, 1) == 0 {
                    row.drop_queue += 1;
                    if let Some(&i) = self.index.get(&p.source) {
                        self.lost[i] += 1;
                    }
                }
            }

            let (senders, index, delivered) = (&self.senders, &self.index, &mut self.delivered);
            let served = self.scheduler.schedule_tick(|_, run| {
                let i = index[&run.source];
                delivered[i] += u64::from(run.count);
                row.goodput[senders[i].class.index()] += u64::from(run.count);
            });
            let served_total: u64 = served.iter().sum();

            for i in 0..n {
                if t >= steady_start {
                    self.steady[i] += self.delivered[i];
                }
                self.class_lost[self.senders[i].class.index()] += self.lost[i];
                self.feedback[i] = Feedback {
                    delivered: self.delivered[i],
                    lost: self.lost[i],
                    window: None,
                };
                self.delivered[i] = 0;
                self.lost[i] = 0;
            }

            row.queued = self.scheduler.backlog() + self.policer.syn_queue().buffer.len();
            row.utilization = served_total as f64 / cfg.link_capacity as f64;
            row.w_r_total = self.policer.table.window_total();
            row.n_flows = self.policer.table.len() as u64;
            let offered = row.offered_total();
            let loss = if offered == 0 {
                0.0
            } else {
                row.drops_total() as f64 / offered as f64
            };
            series.rows.push(row);

            let next = self.controller.activation_step(t, row.utilization, loss);
            let now = t + 1;
            match (active, next) {
                (false, PolicerState::Active) => {
                    log::info!("policing engaged at tick {now}");
                    activated_at.get_or_insert(now);
                    self.policer.reset();
                    let horizon = now.saturating_sub(dp);
                    let recent: Vec<FlowId> = self
                        .senders
                        .iter()
                        .zip(&self.last_seen)
                        .filter(|(_, seen)| seen.is_some_and(|s| s >= horizon))
                        .map(|(s, _)| s.id)
                        .collect();
                    self.policer.admit_batch(recent, now);
                }
                (true, PolicerState::Idle) => {
                    log::info!("policing released at tick {now}");
                    self.policer.reset();
                }
                (true, PolicerState::Active) => {
                    if let Some(periods) = cfg.policer.eviction_periods {
                        if now % dp == 0 {
                            self.policer.evict_idle(now, periods);
                        }
                    }
                }
                (false, PolicerState::Idle) => {}
            }
        }

        let summary = self.summarize(&series, activated_at);
        SimOutput {
            steady_delivered: self
                .senders
                .iter()
                .zip(&self.steady)
                .map(|(s, &d)| (s.id, s.class, d))
                .collect(),
            decision_log: cfg.record_decisions.then(|| self.policer.decision_log_csv()),
            summary,
            series,
        }
    }

    fn summarize(&self, series: &TimeSeries, activated_at: Option<Tick>) -> Summary {
        let cfg = self.cfg;
        let dp = cfg.policer.detection_period;
        let steady_start = cfg.steady_start();
        let steady_len = f64::from(cfg.duration - steady_start);
        let bandwidth = cfg.policer_bandwidth() / f64::from(dp);
        let count = |c: TrafficClass| self.senders.iter().filter(|s| s.class == c).count() as u64;
        let (n_legit, n_attack) = (count(TrafficClass::Legit), count(TrafficClass::Attack));
        let bounds = fair_share_bound(n_legit, n_attack, bandwidth, cfg.policer.loss_threshold).ok();

        let goodput = ClassFigures::from_fn(|c| series.mean_goodput(c, steady_start, cfg.duration));
        let offered = ClassFigures::from_fn(|c| {
            series.rows[steady_start as usize..]
                .iter()
                .map(|r| r.class_offered(c) as f64)
                .sum::<f64>()
                / steady_len
        });
        let per_sender = |c: TrafficClass| {
            let n = count(c);
            if n == 0 {
                return 0.0;
            }
            let total: u64 = self
                .senders
                .iter()
                .zip(&self.steady)
                .filter(|(s, _)| s.class == c)
                .map(|(_, &d)| d)
                .sum();
            total as f64 / steady_len / n as f64
        };
        let legit_per_sender = per_sender(TrafficClass::Legit);
        let attack_per_sender = per_sender(TrafficClass::Attack);
        let utilization = series.rows[steady_start as usize..]
            .iter()
            .map(|r| r.utilization)
            .sum::<f64>()
            / steady_len;

        // Full periods measured from activation.
        let worst_period_attack = activated_at.and_then(|a| {
            let mut worst: Option<f64> = None;
            let mut p = a;
            while p + dp <= cfg.duration {
                let sum: u64 = series.rows[p as usize..(p + dp) as usize]
                    .iter()
                    .map(|r| r.class_goodput(TrafficClass::Attack))
                    .sum();
                let rate = sum as f64 / f64::from(dp);
                worst = Some(worst.map_or(rate, |w: f64| w.max(rate)));
                p += dp;
            }
            worst
        });

        let has_legit = n_legit > 0;
        let verdicts = Verdicts {
            conservation: series.conservation_violations().is_empty(),
            legit_at_least_fair: bounds.filter(|_| has_legit).map(|b| legit_per_sender >= 0.98 * b.fair),
            attacker_within_cap: bounds
                .filter(|_| n_attack > 0)
                .map(|b| goodput.attack <= b.attacker_cap),
            attacker_within_cap_every_period: bounds
                .filter(|_| n_attack > 0)
                .and_then(|b| worst_period_attack.map(|w| w <= b.attacker_cap + n_attack as f64 * b.fair)),
            legit_above_floor: bounds.filter(|_| has_legit).map(|b| legit_per_sender >= b.legit_floor),
        };

        let total = |f: fn(&Row) -> u64| series.rows.iter().map(f).sum::<u64>();
        Summary {
            name: cfg.name.clone(),
            seed: cfg.seed,
            duration: cfg.duration,
            steady_start,
            activated_at,
            link_capacity: cfg.link_capacity,
            bandwidth,
            n_legit,
            n_attack,
            bounds,
            offered,
            goodput,
            legit_per_sender,
            attack_per_sender,
            attack_share: goodput.attack / bandwidth,
            legit_gain: bounds.filter(|_| has_legit).map(|b| legit_per_sender / b.fair),
            utilization,
            worst_period_attack,
            drops_window: total(|r| r.drop_window),
            drops_queue: total(|r| r.drop_queue),
            drops_denied: total(|r| r.drop_denied),
            drops_filter: total(|r| r.drop_filter),
            drops_by_class: ClassFigures::from_fn(|c| self.class_lost[c.index()] as f64),
            verdicts,
        }
    }
}
