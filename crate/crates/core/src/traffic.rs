//! Offered-load models for legitimate and adversarial senders.
//!
//! Senders are rate based: each tick a sender decides how many packets to
//! emit, accumulating fractional packets so long-run rates are exact. Loss
//! feedback arrives one tick late.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{FlowId, PacketKind, Tick};
use crate::{Error, Result, ValidationError};

/// First address handed out to generated senders (10.0.0.1).
pub const FIRST_SENDER: u32 = 0x0A00_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficClass {
    Legit,
    Attack,
    Premium,
    Udp,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 4] = [Self::Legit, Self::Attack, Self::Premium, Self::Udp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Legit => "legit",
            Self::Attack => "attack",
            Self::Premium => "premium",
            Self::Udp => "udp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenderKind {
    /// Loss-responsive sender with slow start and AIMD.
    LegitAimd,
    /// Constant rate, ignores losses.
    FlatRate,
    /// Flat rate during on-periods, silent during off-periods.
    OnOffShrew,
    /// An attacker that runs the same AIMD control as legitimate senders.
    CompliantAimd,
    /// Sends `(1 + L_th)` times its own window, read from the flow table.
    Oracle,
}

impl SenderKind {
    pub fn is_aimd(self) -> bool {
        matches!(self, Self::LegitAimd | Self::CompliantAimd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderModel {
    pub id: FlowId,
    pub class: TrafficClass,
    pub kind: SenderKind,
    /// Peak or target rate in packets per tick.
    pub demand: f64,
    /// Round-trip time in ticks (AIMD kinds).
    pub rtt: u32,
    /// Congestion window growth per round trip, in packets (AIMD kinds).
    pub ai_packets: f64,
    /// On-period length in ticks (shrew).
    pub on_len: u32,
    /// Off-period length divided by on-period length (shrew).
    pub off_ratio: f64,
    /// Start offset in ticks (shrew).
    pub phase: u32,
    pub packet: PacketKind,
    /// Whether the victim lists this source as admissible.
    pub allowlisted: bool,
}

impl SenderModel {
    pub fn new(id: FlowId, class: TrafficClass, kind: SenderKind, demand: f64) -> Self {
        Self {
            id,
            class,
            kind,
            demand,
            rtt: SenderTemplate::DEFAULT_RTT,
            ai_packets: 1.0,
            on_len: 500,
            off_ratio: 0.0,
            phase: 0,
            packet: PacketKind::Regular,
            allowlisted: true,
        }
    }

    pub fn validate(&self, v: &mut ValidationError) {
        v.check(self.demand > 0.0 && self.demand.is_finite(), || {
            format!("sender {} demand must be > 0, got {}", self.id, self.demand)
        });
        if self.kind == SenderKind::OnOffShrew {
            v.check(self.on_len > 0, || format!("sender {} on_len must be > 0", self.id));
            v.check(self.off_ratio >= 0.0, || {
                format!("sender {} off_ratio must be >= 0", self.id)
            });
        }
        if self.kind.is_aimd() {
            v.check(self.rtt > 0, || format!("sender {} rtt must be > 0", self.id));
        }
    }

    pub fn cycle_len(&self) -> u64 {
        u64::from(self.on_len) + (self.off_ratio * f64::from(self.on_len)).round() as u64
    }

    /// Whether a shrew sender is in an on-period at `t`.
    pub fn is_on(&self, t: Tick) -> bool {
        if t < self.phase {
            return false;
        }
        u64::from(t - self.phase) % self.cycle_len() < u64::from(self.on_len)
    }
}

/// What a sender observed for its previous tick.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Feedback {
    pub delivered: u64,
    pub lost: u64,
    /// The sender's own current window, visible only to the oracle.
    pub window: Option<f64>,
}

/// Parameters the oracle attacker needs to target its window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleView {
    pub loss_threshold: f64,
    pub detection_period: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenderState {
    pub rate: f64,
    ssthresh: f64,
    carry: f64,
    last_decrease: Option<Tick>,
    in_recovery: bool,
}

impl SenderState {
    pub fn new(model: &SenderModel) -> Self {
        let rate = if model.kind.is_aimd() {
            (Self::INITIAL_WINDOW / f64::from(model.rtt)).min(model.demand)
        } else {
            model.demand
        };
        Self {
            rate,
            ssthresh: f64::INFINITY,
            carry: 0.0,
            last_decrease: None,
            in_recovery: false,
        }
    }

    /// Initial congestion window in packets.
    pub const INITIAL_WINDOW: f64 = 10.0;

    /// Below one packet per round trip the sender is in timeout backoff; the
    /// retransmission timer doubles up to this many round trips.
    pub const MAX_BACKOFF_RTTS: f64 = 64.0;

    fn min_rate(model: &SenderModel) -> f64 {
        (1.0 / (f64::from(model.rtt) * Self::MAX_BACKOFF_RTTS)).min(model.demand)
    }

    fn aimd_update(&mut self, model: &SenderModel, t: Tick, fb: Feedback) {
        let rtt = f64::from(model.rtt);
        if fb.lost > 0 {
            if !self.in_recovery {
                self.ssthresh = (self.rate / 2.0).max(Self::min_rate(model));
            }
            if fb.delivered == 0 {
                // Nothing got through: timeout. Drop to one packet per rtt,
                // then keep backing off while the losses continue.
                self.rate = (self.rate / 2.0).min(1.0 / rtt);
            } else if self.last_decrease.is_none_or(|d| t.saturating_sub(d) >= model.rtt) {
                // Partial loss: fast recovery, one halving per rtt.
                self.rate /= 2.0;
            } else {
                return;
            }
            self.rate = self.rate.max(Self::min_rate(model));
            self.in_recovery = true;
            self.last_decrease = Some(t);
            return;
        }
        if fb.delivered > 0 && self.rate < 1.0 / rtt {
            // A retransmission got through: back to one packet per rtt.
            self.rate = (1.0 / rtt).min(model.demand);
        }
        if self.last_decrease.is_some_and(|d| t.saturating_sub(d) < model.rtt) {
            return;
        }
        self.in_recovery = false;
        if self.rate < self.ssthresh {
            self.rate = (self.rate * 2f64.powf(1.0 / rtt)).min(self.ssthresh.max(self.rate));
        } else {
            self.rate += model.ai_packets / (rtt * rtt);
        }
        self.rate = self.rate.min(model.demand);
    }

    fn emit(&mut self, rate: f64) -> u32 {
        self.carry += rate.max(0.0);
        // Tolerance keeps sums like 0.21 * 100 from landing just under 21.
        let n = (self.carry + 1e-9).floor();
        self.carry -= n;
        n as u32
    }
}

/// Packets `model` emits at tick `t`, given last tick's outcome.
pub fn offered_load(
    model: &SenderModel,
    state: &mut SenderState,
    t: Tick,
    feedback: Feedback,
    oracle: OracleView,
) -> u32 {
    match model.kind {
        SenderKind::LegitAimd | SenderKind::CompliantAimd => {
            state.aimd_update(model, t, feedback);
            let r = state.rate;
            state.emit(r)
        }
        SenderKind::FlatRate => state.emit(model.demand),
        SenderKind::OnOffShrew => {
            if model.is_on(t) {
                state.emit(model.demand)
            } else {
                0
            }
        }
        SenderKind::Oracle => {
            let rate = match feedback.window {
                Some(w) => (1.0 + oracle.loss_threshold) * w / f64::from(oracle.detection_period),
                None => model.demand,
            };
            state.rate = rate;
            state.emit(rate)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RateDistribution {
    Uniform,
    /// Normal around the per-attacker mean; `std` in packets per tick.
    Gaussian {
        std: f64,
    },
}

/// Behavior shared by a group of generated senders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderTemplate {
    pub kind: SenderKind,
    #[serde(default)]
    pub class: Option<TrafficClass>,
    /// Packets per tick per sender. Attackers derive theirs from the
    /// aggressiveness factor instead.
    #[serde(default)]
    pub demand: f64,
    #[serde(default = "SenderTemplate::default_rtt")]
    pub rtt: u32,
    #[serde(default = "SenderTemplate::default_ai")]
    pub ai_packets: f64,
    #[serde(default = "SenderTemplate::default_on_len")]
    pub on_len: u32,
    #[serde(default)]
    pub off_ratio: f64,
    #[serde(default)]
    pub phase: u32,
    /// Each sender's phase is offset by a uniform draw from `[0, phase_jitter)`.
    #[serde(default)]
    pub phase_jitter: u32,
    #[serde(default = "SenderTemplate::default_packet")]
    pub packet: PacketKind,
    #[serde(default = "SenderTemplate::default_allowlisted")]
    pub allowlisted: bool,
}

impl SenderTemplate {
    pub const DEFAULT_RTT: u32 = 10;

    fn default_rtt() -> u32 {
        Self::DEFAULT_RTT
    }
    fn default_ai() -> f64 {
        1.0
    }
    fn default_on_len() -> u32 {
        500
    }
    fn default_packet() -> PacketKind {
        PacketKind::Regular
    }
    fn default_allowlisted() -> bool {
        true
    }

    pub fn new(kind: SenderKind, demand: f64) -> Self {
        Self {
            kind,
            class: None,
            demand,
            rtt: Self::DEFAULT_RTT,
            ai_packets: 1.0,
            on_len: 500,
            off_ratio: 0.0,
            phase: 0,
            phase_jitter: 0,
            packet: PacketKind::Regular,
            allowlisted: true,
        }
    }

    fn instantiate(&self, id: FlowId, class: TrafficClass, demand: f64, phase: u32) -> SenderModel {
        SenderModel {
            id,
            class: self.class.unwrap_or(class),
            kind: self.kind,
            demand,
            rtt: self.rtt,
            ai_packets: self.ai_packets,
            on_len: self.on_len,
            off_ratio: self.off_ratio,
            phase,
            packet: self.packet,
            allowlisted: self.allowlisted,
        }
    }
}

/// A fixed group of identical senders (premium clients, UDP reflectors, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderGroup {
    pub count: u32,
    pub class: TrafficClass,
    pub template: SenderTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_legit: u32,
    pub n_attack: u32,
    /// Total attack volume divided by the link capacity.
    pub aggressiveness: f64,
    pub rate_distribution: RateDistribution,
    pub legit: SenderTemplate,
    pub attack: SenderTemplate,
    #[serde(default)]
    pub groups: Vec<SenderGroup>,
}

impl PopulationSpec {
    pub fn validate(&self, v: &mut ValidationError) {
        v.check(
            self.n_legit + self.n_attack + self.groups.iter().map(|g| g.count).sum::<u32>() >= 1,
            || "population must contain at least one sender".into(),
        );
        v.check(self.aggressiveness >= 0.0, || {
            format!("population.aggressiveness must be >= 0, got {}", self.aggressiveness)
        });
        v.check(!(self.aggressiveness > 0.0 && self.n_attack == 0), || {
            "population.aggressiveness > 0 requires n_attack > 0".into()
        });
        v.check(
            !(self.n_attack > 0 && self.aggressiveness <= 0.0 && self.attack.demand <= 0.0),
            || "attackers need aggressiveness > 0 or an explicit attack.demand".into(),
        );
        if let RateDistribution::Gaussian { std } = self.rate_distribution {
            v.check(std >= 0.0, || format!("gaussian std must be >= 0, got {std}"));
        }
        v.check(self.n_legit == 0 || self.legit.demand > 0.0, || {
            "legit.demand must be > 0".into()
        });
    }

    pub fn n_senders(&self) -> u32 {
        self.n_legit + self.n_attack + self.groups.iter().map(|g| g.count).sum::<u32>()
    }
}

/// Expands `spec` into concrete senders. Attack rates sum to
/// `aggressiveness * link_capacity`, split per `rate_distribution`, negative
/// draws clipped to zero.
pub fn build_population(spec: &PopulationSpec, link_capacity: f64, seed: u64) -> Result<Vec<SenderModel>> {
    let mut v = ValidationError::new();
    spec.validate(&mut v);
    v.into_result().map_err(Error::from)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = FIRST_SENDER;
    let mut out = Vec::with_capacity(spec.n_senders() as usize);
    let jitter = |rng: &mut ChaCha8Rng, t: &SenderTemplate| {
        t.phase
            + if t.phase_jitter > 0 {
                rng.gen_range(0..t.phase_jitter)
            } else {
                0
            }
    };

    for _ in 0..spec.n_legit {
        let phase = jitter(&mut rng, &spec.legit);
        out.push(
            spec.legit
                .instantiate(FlowId(next), TrafficClass::Legit, spec.legit.demand, phase),
        );
        next += 1;
    }

    if spec.n_attack > 0 {
        let n = f64::from(spec.n_attack);
        let total = if spec.aggressiveness > 0.0 {
            spec.aggressiveness * link_capacity
        } else {
            spec.attack.demand * n
        };
        let mean = total / n;
        let normal = match spec.rate_distribution {
            RateDistribution::Uniform => None,
            RateDistribution::Gaussian { std } => Some(
                Normal::new(mean, std)
                    .map_err(|e| Error::InvalidParameter(format!("gaussian rate distribution: {e}")))?,
            ),
        };
        for _ in 0..spec.n_attack {
            let rate = match &normal {
                None => mean,
                Some(d) => d.sample(&mut rng).max(0.0),
            };
            let phase = jitter(&mut rng, &spec.attack);
            // A zero-rate attacker still exists but never sends.
            let mut s = spec.attack.instantiate(FlowId(next), TrafficClass::Attack, rate, phase);
            if s.demand <= 0.0 {
                s.demand = f64::MIN_POSITIVE;
            }
            out.push(s);
            next += 1;
        }
    }

    for g in &spec.groups {
        for _ in 0..g.count {
            let phase = jitter(&mut rng, &g.template);
            out.push(g.template.instantiate(FlowId(next), g.class, g.template.demand, phase));
            next += 1;
        }
    }
    Ok(out)
}

/// Sum of attacker demands, for reporting the effect of clipping.
pub fn attack_total(senders: &[SenderModel]) -> f64 {
    senders
        .iter()
        .filter(|s| s.class == TrafficClass::Attack)
        .map(|s| s.demand)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const VIEW: OracleView = OracleView {
        loss_threshold: 0.05,
        detection_period: 500,
    };

    fn run(model: &SenderModel, ticks: Tick, fb: impl Fn(Tick) -> Feedback) -> Vec<u32> {
        let mut st = SenderState::new(model);
        (0..ticks)
            .map(|t| offered_load(model, &mut st, t, fb(t), VIEW))
            .collect()
    }

    #[test]
    fn shrew_schedule() {
        let mut m = SenderModel::new(FlowId(1), TrafficClass::Attack, SenderKind::OnOffShrew, 3.0);
        m.on_len = 500;
        m.off_ratio = 1.0;
        let out = run(&m, 1500, |_| Feedback::default());
        assert!(out[..500].iter().all(|&n| n == 3));
        assert!(out[500..1000].iter().all(|&n| n == 0));
        assert!(out[1000..].iter().all(|&n| n == 3));
    }

    #[test]
    fn shrew_zero_ratio_is_flat() {
        let mut m = SenderModel::new(FlowId(1), TrafficClass::Attack, SenderKind::OnOffShrew, 2.0);
        m.off_ratio = 0.0;
        assert!(run(&m, 2000, |_| Feedback::default()).iter().all(|&n| n == 2));
    }

    #[test]
    fn flat_rate_ignores_loss() {
        let m = SenderModel::new(FlowId(1), TrafficClass::Attack, SenderKind::FlatRate, 2.5);
        let out = run(&m, 100, |_| Feedback {
            lost: 100,
            ..Feedback::default()
        });
        assert_eq!(out.iter().sum::<u32>(), 250);
    }

    #[test]
    fn oracle_targets_its_window() {
        let m = SenderModel::new(FlowId(1), TrafficClass::Attack, SenderKind::Oracle, 50.0);
        let fb = |_| Feedback {
            window: Some(100.0),
            ..Feedback::default()
        };
        let mut st = SenderState::new(&m);
        offered_load(&m, &mut st, 0, fb(0), VIEW);
        assert!((st.rate - 0.21).abs() < 1e-12);
        let out = run(&m, 1000, fb);
        assert_eq!(out.iter().sum::<u32>(), 210);
    }

    #[test]
    fn aimd_reaches_demand_without_loss() {
        let m = SenderModel::new(FlowId(1), TrafficClass::Legit, SenderKind::LegitAimd, 20.0);
        let out = run(&m, 2000, |_| Feedback::default());
        assert_eq!(*out.last().unwrap(), 20);
    }

    #[test]
    fn aimd_partial_loss_halves_once_per_rtt() {
        let m = SenderModel::new(FlowId(1), TrafficClass::Legit, SenderKind::LegitAimd, 20.0);
        let mut st = SenderState::new(&m);
        for t in 0..1000 {
            offered_load(&m, &mut st, t, Feedback::default(), VIEW);
        }
        let before = st.rate;
        let lossy = Feedback {
            delivered: 5,
            lost: 1,
            ..Feedback::default()
        };
        offered_load(&m, &mut st, 1000, lossy, VIEW);
        assert_eq!(st.rate, before / 2.0);
        for t in 1001..1010 {
            offered_load(&m, &mut st, t, lossy, VIEW);
        }
        assert_eq!(st.rate, before / 2.0);
        offered_load(&m, &mut st, 1010, lossy, VIEW);
        assert_eq!(st.rate, before / 4.0);
        assert_eq!(st.ssthresh, before / 2.0);
    }

    #[test]
    fn aimd_total_loss_times_out() {
        let m = SenderModel::new(FlowId(1), TrafficClass::Legit, SenderKind::LegitAimd, 20.0);
        let mut st = SenderState::new(&m);
        for t in 0..1000 {
            offered_load(&m, &mut st, t, Feedback::default(), VIEW);
        }
        let before = st.rate;
        let dead = Feedback {
            lost: 3,
            ..Feedback::default()
        };
        offered_load(&m, &mut st, 1000, dead, VIEW);
        assert_eq!(st.rate, 1.0 / f64::from(m.rtt));
        offered_load(&m, &mut st, 1001, dead, VIEW);
        assert_eq!(st.rate, 0.5 / f64::from(m.rtt));
        assert_eq!(st.ssthresh, before / 2.0);
        // Growth resumes only after a quiet rtt.
        for t in 1002..1011 {
            offered_load(&m, &mut st, t, Feedback::default(), VIEW);
        }
        assert_eq!(st.rate, 0.5 / f64::from(m.rtt));
        offered_load(&m, &mut st, 1011, Feedback::default(), VIEW);
        assert!(st.rate > 0.5 / f64::from(m.rtt));
    }

    fn spec(n_attack: u32, af: f64, dist: RateDistribution) -> PopulationSpec {
        PopulationSpec {
            n_legit: 3,
            n_attack,
            aggressiveness: af,
            rate_distribution: dist,
            legit: SenderTemplate::new(SenderKind::LegitAimd, 5.0),
            attack: SenderTemplate::new(SenderKind::FlatRate, 0.0),
            groups: vec![],
        }
    }

    #[test]
    fn uniform_split() {
        let pop = build_population(&spec(4, 2.0, RateDistribution::Uniform), 100.0, 1).unwrap();
        let attackers: Vec<_> = pop.iter().filter(|s| s.class == TrafficClass::Attack).collect();
        assert_eq!(attackers.len(), 4);
        assert!(attackers.iter().all(|s| s.demand == 50.0));
        assert_eq!(pop.iter().filter(|s| s.class == TrafficClass::Legit).count(), 3);
    }

    #[test]
    fn legit_only_population() {
        let pop = build_population(&spec(0, 0.0, RateDistribution::Uniform), 100.0, 1).unwrap();
        assert!(pop.iter().all(|s| s.class == TrafficClass::Legit));
    }

    #[test]
    fn aggressiveness_without_attackers_is_rejected() {
        assert!(build_population(&spec(0, 1.0, RateDistribution::Uniform), 100.0, 1).is_err());
    }

    #[test]
    fn population_is_deterministic_per_seed() {
        let s = spec(50, 2.0, RateDistribution::Gaussian { std: 1.0 });
        assert_eq!(
            build_population(&s, 100.0, 9).unwrap(),
            build_population(&s, 100.0, 9).unwrap()
        );
        assert_ne!(
            build_population(&s, 100.0, 9).unwrap(),
            build_population(&s, 100.0, 10).unwrap()
        );
    }

    #[test]
    fn aimd_kinds_are_flagged() {
        assert!(SenderKind::CompliantAimd.is_aimd());
        assert!(!SenderKind::Oracle.is_aimd());
        let mut m = SenderModel::new(FlowId(1), TrafficClass::Attack, SenderKind::OnOffShrew, 1.0);
        m.on_len = 0;
        let mut v = ValidationError::new();
        m.validate(&mut v);
        assert_eq!(v.problems.len(), 1);
        let _ = rand::thread_rng;
    }
}
