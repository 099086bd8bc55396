//! Experiment configuration, validation diagnostics, and the preset library
//! for the four attack families.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{
    ActionKind, AdversarialAction, AttackPlan, BudgetVector, CommunicationModel, Direction,
    FailureModel, GoalSpec, SabotageBehavior,
};
use crate::engine::{derive_seed, DelaySpec, NodeId, Tick};
use crate::fabric::{NetworkTopology, PuzzleSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayConfig {
    /// Baseline URD bounds for clients and orderers.
    pub base_min: u64,
    pub base_max: u64,
    /// Peer-specific URD bounds (the sweep knob of the peer-sabotage family).
    pub peer_min: u64,
    pub peer_max: u64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig { base_min: 1, base_max: 10, peer_min: 1, peer_max: 10 }
    }
}

impl DelayConfig {
    pub fn base_spec(&self) -> DelaySpec {
        DelaySpec::Uniform { min: self.base_min, max: self.base_max }
    }
    pub fn peer_spec(&self) -> DelaySpec {
        DelaySpec::Uniform { min: self.peer_min, max: self.peer_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub phase_timeout: Tick,
    pub max_block: Option<u32>,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig { phase_timeout: 25, max_block: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryConfig {
    pub failure_model: FailureModel,
    pub communication_model: CommunicationModel,
    pub target_client: u32,
    /// Red constant output delay added to the target client (ticks).
    pub fixed_delay: u64,
    pub infected_peers: u32,
    pub infected_peer_fraction: Option<f64>,
    pub infected_orderers: u32,
    pub infected_orderer_fraction: Option<f64>,
    /// Injected orderers also vote nil on blocks carrying the target.
    pub withhold_votes: bool,
    /// Initial budget; defaults to (n_p - m_p, f_o) when absent. Sweeps that
    /// intentionally exceed the thresholds must set this.
    pub budget_override: Option<Vec<u64>>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            failure_model: FailureModel::Byzantine,
            communication_model: CommunicationModel::Asynchronous,
            target_client: 0,
            fixed_delay: 0,
            infected_peers: 0,
            infected_peer_fraction: None,
            infected_orderers: 0,
            infected_orderer_fraction: None,
            withhold_votes: false,
            budget_override: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalConfig {
    pub g_threshold: u64,
    pub score_threshold: f64,
}

impl Default for GoalConfig {
    fn default() -> Self {
        GoalConfig { g_threshold: 1500, score_threshold: 0.75 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub horizon: Tick,
    pub topology: NetworkTopology,
    #[serde(default)]
    pub delays: DelayConfig,
    #[serde(default)]
    pub puzzle: PuzzleSchedule,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub goal: GoalConfig,
    /// Extra plan steps appended after the derived ones (not part of the
    /// on-disk format; used by harness code).
    #[serde(skip)]
    pub extra_actions: Vec<(Tick, AdversarialAction)>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: String) -> Self {
        Diagnostic { severity: Severity::Error, message }
    }
    fn warning(message: String) -> Self {
        Diagnostic { severity: Severity::Warning, message }
    }
}

fn fraction_to_count(fraction: f64, n: u32) -> u32 {
    ((fraction * n as f64).round() as u32).min(n)
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn target_client(&self) -> NodeId {
        NodeId::Client(self.adversary.target_client)
    }

    pub fn goal_spec(&self) -> GoalSpec {
        GoalSpec {
            target_client: self.target_client(),
            g_threshold: self.goal.g_threshold,
            score_threshold: self.goal.score_threshold,
        }
    }

    pub fn infected_peers(&self) -> u32 {
        match self.adversary.infected_peer_fraction {
            Some(f) => fraction_to_count(f, self.topology.n_p),
            None => self.adversary.infected_peers,
        }
    }

    pub fn infected_orderers(&self) -> u32 {
        match self.adversary.infected_orderer_fraction {
            Some(f) => fraction_to_count(f, self.topology.n_o),
            None => self.adversary.infected_orderers,
        }
    }

    /// Default budget (n_p - m_p, f_o): the sabotage tolerances of the
    /// endorsement policy and the BFT ordering service.
    pub fn default_budget(&self) -> BudgetVector {
        BudgetVector(vec![
            (self.topology.n_p - self.topology.m_p) as u64,
            self.topology.f_o as u64,
        ])
    }

    pub fn budget(&self) -> BudgetVector {
        match &self.adversary.budget_override {
            Some(v) => BudgetVector(v.clone()),
            None => self.default_budget(),
        }
    }

    /// Static attack plan derived from the adversary section: all infections
    /// (and the fixed delay) trigger at tick 0, before the first puzzle.
    pub fn build_plan(&self) -> AttackPlan {
        let target = self.target_client();
        let mut steps: Vec<(Tick, AdversarialAction)> = Vec::new();
        if self.adversary.fixed_delay > 0 {
            steps.push((
                0,
                AdversarialAction {
                    kind: ActionKind::Delay {
                        delta: self.adversary.fixed_delay,
                        direction: Direction::Output,
                    },
                    target,
                    baseline_cost: BudgetVector::zeros(2),
                },
            ));
        }
        for p in 0..self.infected_peers() {
            steps.push((
                0,
                AdversarialAction {
                    kind: ActionKind::Inject(SabotageBehavior::PeerRefuse { clients: vec![target] }),
                    target: NodeId::Peer(p),
                    baseline_cost: BudgetVector(vec![1, 0]),
                },
            ));
        }
        for o in 0..self.infected_orderers() {
            let behavior = if self.adversary.withhold_votes {
                SabotageBehavior::OrdererFilterAndWithhold { clients: vec![target] }
            } else {
                SabotageBehavior::OrdererFilterProposals { clients: vec![target] }
            };
            steps.push((
                0,
                AdversarialAction {
                    kind: ActionKind::Inject(behavior),
                    target: NodeId::Orderer(o),
                    baseline_cost: BudgetVector(vec![0, 1]),
                },
            ));
        }
        steps.extend(self.extra_actions.iter().cloned());
        steps.sort_by_key(|(t, _)| *t);
        AttackPlan { steps }
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for e in self.topology.validate() {
            out.push(Diagnostic::error(e));
        }
        for spec in [self.delays.base_spec(), self.delays.peer_spec(), self.puzzle.solve_delay] {
            if let Err(e) = spec.validate() {
                out.push(Diagnostic::error(e));
            }
        }
        if let Err(e) = self.adversary.communication_model.validate() {
            out.push(Diagnostic::error(e));
        }
        if self.puzzle.reveal_interval == 0 {
            out.push(Diagnostic::error("puzzle reveal interval must be > 0".into()));
        }
        if self.consensus.phase_timeout == 0 {
            out.push(Diagnostic::error("consensus phase timeout must be > 0".into()));
        }
        if self.adversary.target_client >= self.topology.n_c {
            out.push(Diagnostic::error(format!(
                "target client {} out of range (n_c = {})",
                self.adversary.target_client, self.topology.n_c
            )));
        }
        for f in [self.adversary.infected_peer_fraction, self.adversary.infected_orderer_fraction]
            .into_iter()
            .flatten()
        {
            if !(0.0..=1.0).contains(&f) {
                out.push(Diagnostic::error(format!("infection fraction {f} not in [0, 1]")));
            }
        }
        if self.infected_peers() > self.topology.n_p {
            out.push(Diagnostic::error("more infected peers than peers".into()));
        }
        if self.infected_orderers() > self.topology.n_o {
            out.push(Diagnostic::error("more infected orderers than orderers".into()));
        }
        if let Some(b) = &self.adversary.budget_override {
            if b.len() != 2 {
                out.push(Diagnostic::error("budget override must have 2 components".into()));
            }
        }
        // plan-vs-budget consistency: a plan above the default thresholds is
        // deliberate in the sweeps, so it warns instead of erroring
        let plan_cost = BudgetVector(vec![self.infected_peers() as u64, self.infected_orderers() as u64]);
        if !plan_cost.le(&self.default_budget()) {
            if self.adversary.budget_override.is_none() {
                out.push(Diagnostic::warning(format!(
                    "plan cost {:?} exceeds default budget {:?}; actions beyond it will be \
                     refused unless budget_override is set",
                    plan_cost.0,
                    self.default_budget().0
                )));
            } else {
                out.push(Diagnostic::warning(format!(
                    "plan exceeds the protocol tolerance thresholds {:?} (explicit budget override)",
                    self.default_budget().0
                )));
            }
        }
        out
    }

    pub fn has_errors(diags: &[Diagnostic]) -> bool {
        diags.iter().any(|d| d.severity == Severity::Error)
    }
}

/// Desk-scale topology: 3 clients, 16 peers (10 endorsements), 7 orderers.
pub fn desk_topology() -> NetworkTopology {
    NetworkTopology { n_c: 3, n_p: 16, m_p: 10, n_o: 7, f_o: 2 }
}

/// Full-scale topology used by the large sweep grids.
pub fn full_topology() -> NetworkTopology {
    NetworkTopology { n_c: 3, n_p: 50, m_p: 25, n_o: 55, f_o: 18 }
}

const DESK_HORIZON: Tick = 5000;
const FULL_HORIZON: Tick = 20000;
// roughly half the expected resolved games at each scale
const DESK_G_THRESHOLD: u64 = 250;
const FULL_G_THRESHOLD: u64 = 1500;

fn base_config(name: &str, full_scale: bool) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed: 1,
        horizon: if full_scale { FULL_HORIZON } else { DESK_HORIZON },
        topology: if full_scale { full_topology() } else { desk_topology() },
        delays: DelayConfig::default(),
        puzzle: PuzzleSchedule::default(),
        consensus: ConsensusConfig::default(),
        adversary: AdversaryConfig::default(),
        goal: GoalConfig {
            g_threshold: if full_scale { FULL_G_THRESHOLD } else { DESK_G_THRESHOLD },
            score_threshold: 0.75,
        },
        extra_actions: Vec::new(),
    }
}

pub const RUN_PRESETS: &[&str] = &[
    "baseline",
    "delay-15",
    "peer-40",
    "orderer-2of7",
    "withhold-3of7",
    "baseline-full",
    "delay-15-full",
];

/// Single-run presets.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let full = name.ends_with("-full");
    let stem = name.strip_suffix("-full").unwrap_or(name);
    let mut cfg = base_config(name, full);
    match stem {
        "baseline" => {}
        "delay-15" => cfg.adversary.fixed_delay = 15,
        "peer-40" => {
            // ~40% of peers sabotaged under a slow peer network
            cfg.adversary.infected_peer_fraction = Some(0.4);
            cfg.delays.peer_max = 20;
            set_budget_for_plan(&mut cfg);
        }
        "orderer-2of7" => {
            if full {
                return None;
            }
            cfg.adversary.infected_orderers = 2;
        }
        "withhold-3of7" => {
            if full {
                return None;
            }
            cfg.adversary.infected_orderers = 3;
            cfg.adversary.withhold_votes = true;
            set_budget_for_plan(&mut cfg);
        }
        _ => return None,
    }
    Some(cfg)
}

fn set_budget_for_plan(cfg: &mut ExperimentConfig) {
    let default = cfg.default_budget();
    cfg.adversary.budget_override = Some(vec![
        default.0[0].max(cfg.infected_peers() as u64),
        default.0[1].max(cfg.infected_orderers() as u64),
    ]);
}

/// A fully expanded sweep: one config per grid point, seeds derived from the
/// base seed and the point index.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub name: String,
    pub points: Vec<ExperimentConfig>,
}

pub const SWEEP_PRESETS: &[&str] = &[
    "delay-sweep",
    "peer-sweep",
    "orderer-sweep",
    "combined-sweep",
    "delay-sweep-full",
    "peer-sweep-full",
    "orderer-sweep-full",
    "combined-sweep-full",
];

/// Sweep presets for the four experiment families.
pub fn sweep_preset(name: &str, base_seed: u64) -> Option<Sweep> {
    let full = name.ends_with("-full");
    let stem = name.strip_suffix("-full").unwrap_or(name);
    let mut points = Vec::new();
    let mut push = |mut cfg: ExperimentConfig| {
        let index = points.len() as u64;
        cfg.seed = derive_seed(base_seed, index);
        cfg.name = format!("{name}-{index:03}");
        points.push(cfg);
    };
    match stem {
        // (a) fixed output delay on the target, 0..15
        "delay-sweep" => {
            for delay in 0..=15 {
                let mut cfg = base_config(name, full);
                cfg.adversary.fixed_delay = delay;
                push(cfg);
            }
        }
        // (b) infected-peer fraction 0..52% step 2%, for five peer URDs
        "peer-sweep" => {
            for urd_max in [1, 5, 10, 15, 20] {
                for pct in (0..=52).step_by(2) {
                    let mut cfg = base_config(name, full);
                    cfg.delays.peer_max = urd_max;
                    cfg.delays.peer_min = 1;
                    cfg.adversary.infected_peer_fraction = Some(pct as f64 / 100.0);
                    set_budget_for_plan(&mut cfg);
                    push(cfg);
                }
            }
        }
        // (c) infected orderers, crossing the BFT threshold at the top end
        "orderer-sweep" => {
            let counts: Vec<u32> = if full { (0..=20).collect() } else { (0..=3).collect() };
            for b_o in counts {
                let mut cfg = base_config(name, full);
                cfg.adversary.infected_orderers = b_o;
                cfg.adversary.withhold_votes = true;
                set_budget_for_plan(&mut cfg);
                push(cfg);
            }
        }
        // (d) peers x orderers, peer URD fixed at [1,10], below the threshold
        "combined-sweep" => {
            for o_frac in [0.0, 0.073, 0.145, 0.218, 0.29] {
                for pct in (0..=52).step_by(2) {
                    let mut cfg = base_config(name, full);
                    cfg.adversary.infected_peer_fraction = Some(pct as f64 / 100.0);
                    cfg.adversary.infected_orderer_fraction = Some(o_frac);
                    set_budget_for_plan(&mut cfg);
                    push(cfg);
                }
            }
        }
        _ => return None,
    }
    Some(Sweep { name: name.to_string(), points })
}
