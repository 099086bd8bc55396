//! The adversary: action taxonomy, enablement gating by the failure and
//! communication models, and the vector budget with per-node protection levels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{NodeId, Tick};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Input,
    Output,
    Both,
}

impl Direction {
    pub fn covers_input(self) -> bool {
        matches!(self, Direction::Input | Direction::Both)
    }
    pub fn covers_output(self) -> bool {
        matches!(self, Direction::Output | Direction::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureModel {
    Crash,
    Omission,
    Performance,
    Byzantine,
}

impl FailureModel {
    pub const ALL: [FailureModel; 4] =
        [FailureModel::Crash, FailureModel::Omission, FailureModel::Performance, FailureModel::Byzantine];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CommunicationModel {
    Synchronous { delta: u64 },
    Asynchronous,
    EventuallySynchronous { delta: u64, gst: Tick },
}

impl CommunicationModel {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            CommunicationModel::Synchronous { delta }
            | CommunicationModel::EventuallySynchronous { delta, .. } => {
                if delta == 0 {
                    Err("communication bound delta must be > 0".into())
                } else {
                    Ok(())
                }
            }
            CommunicationModel::Asynchronous => Ok(()),
        }
    }
}

/// Behavior swapped in by an `inject` action.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SabotageBehavior {
    /// Peer silently refuses to endorse transactions from these clients.
    PeerRefuse { clients: Vec<NodeId> },
    /// Orderer omits these clients' transactions whenever it proposes.
    OrdererFilterProposals { clients: Vec<NodeId> },
    /// As above, and additionally votes nil on any block carrying them.
    OrdererFilterAndWithhold { clients: Vec<NodeId> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    Reveal,
    Listen(Direction),
    Send { forged_sender: NodeId, note: String },
    Delay { delta: u64, direction: Direction },
    Skip(Direction),
    Stop,
    Inject(SabotageBehavior),
}

impl ActionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::Reveal => "reveal",
            ActionKind::Listen(_) => "listen",
            ActionKind::Send { .. } => "send",
            ActionKind::Delay { .. } => "delay",
            ActionKind::Skip(_) => "skip",
            ActionKind::Stop => "stop",
            ActionKind::Inject(_) => "inject",
        }
    }
}

/// Fixed-length vector of non-negative resource counts, compared component-wise.
/// Default dimensions: (peers infected, orderers infected).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetVector(pub Vec<u64>);

impl BudgetVector {
    pub fn zeros(dims: usize) -> Self {
        BudgetVector(vec![0; dims])
    }

    pub fn ones(dims: usize) -> Self {
        BudgetVector(vec![1; dims])
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Component-wise `<=`; the partial order of the resource space.
    pub fn le(&self, other: &BudgetVector) -> bool {
        debug_assert_eq!(self.dims(), other.dims());
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Hadamard (element-wise) product.
    pub fn hadamard(&self, other: &BudgetVector) -> BudgetVector {
        debug_assert_eq!(self.dims(), other.dims());
        BudgetVector(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    /// Component-wise subtraction; caller must have checked `other.le(self)`.
    pub fn sub(&self, other: &BudgetVector) -> BudgetVector {
        BudgetVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }
}

/// Per-node protection level vectors (psi). Absent nodes default to all-ones.
#[derive(Clone, Debug)]
pub struct ProtectionLevels {
    dims: usize,
    map: BTreeMap<NodeId, BudgetVector>,
}

impl ProtectionLevels {
    pub fn new(dims: usize) -> Self {
        ProtectionLevels { dims, map: BTreeMap::new() }
    }

    pub fn get(&self, node: NodeId) -> BudgetVector {
        self.map.get(&node).cloned().unwrap_or_else(|| BudgetVector::ones(self.dims))
    }

    /// Zero the protection components consumed by an action of baseline cost
    /// `kappa` against `node`.
    pub fn consume(&mut self, node: NodeId, kappa: &BudgetVector) {
        let dims = self.dims;
        let entry = self.map.entry(node).or_insert_with(|| BudgetVector::ones(dims));
        for (level, k) in entry.0.iter_mut().zip(&kappa.0) {
            if *k > 0 {
                *level = 0;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialAction {
    pub kind: ActionKind,
    pub target: NodeId,
    pub baseline_cost: BudgetVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    /// (trigger tick, action), triggers non-decreasing.
    pub steps: Vec<(Tick, AdversarialAction)>,
}

impl AttackPlan {
    pub fn empty() -> Self {
        AttackPlan { steps: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), String> {
        for w in self.steps.windows(2) {
            if w[1].0 < w[0].0 {
                return Err("attack plan triggers must be non-decreasing".into());
            }
        }
        Ok(())
    }
}

/// Goal predicate over the observable terminal state: the adversary wins if
/// more than `g_threshold` games resolved and the target's score fell below
/// `score_threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub target_client: NodeId,
    pub g_threshold: u64,
    pub score_threshold: f64,
}

impl GoalSpec {
    pub fn evaluate(&self, g: u64, target_score: Option<f64>) -> bool {
        match target_score {
            Some(score) => g > self.g_threshold && score < self.score_threshold,
            None => false,
        }
    }
}

// Base action classes a table cell can list. `listen` rides on `reveal`,
// `stop` on `skip` where listed, and everything on `inject`.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Listed {
    Reveal,
    Stop,
    Skip,
    Delay,
    Inject,
}

fn cell(fm: FailureModel, cm: &CommunicationModel) -> &'static [Listed] {
    use CommunicationModel::*;
    use FailureModel::*;
    use Listed::*;
    match (fm, cm) {
        (Crash, Synchronous { .. }) => &[Reveal, Stop, Delay],
        (Crash, Asynchronous) => &[Reveal, Delay],
        (Crash, EventuallySynchronous { .. }) => &[Reveal, Stop, Delay],
        (Omission, Synchronous { .. }) => &[Reveal, Skip, Delay],
        (Omission, Asynchronous) => &[Reveal, Delay],
        (Omission, EventuallySynchronous { .. }) => &[Reveal, Skip, Delay],
        (Performance, _) => &[Reveal, Delay],
        (Byzantine, _) => &[Inject],
    }
}

/// Transcription of the enablement table plus subsumption: an action is
/// enabled iff its kind (or a supertype of it) appears in the (failure,
/// communication) cell, and any delay-bound side condition holds.
///
/// `baseline_transit` is the transit time `t` the message would have without
/// adversarial interference; `emitted_at` its emission tick `o`.
pub fn is_enabled(
    action: &AdversarialAction,
    fm: FailureModel,
    cm: &CommunicationModel,
    baseline_transit: u64,
    emitted_at: Tick,
) -> bool {
    let listed = cell(fm, cm);
    if listed.contains(&Listed::Inject) {
        // byzantine row: arbitrary behavior, everything enabled
        return true;
    }
    match &action.kind {
        ActionKind::Reveal | ActionKind::Listen(_) => listed.contains(&Listed::Reveal),
        ActionKind::Stop => listed.contains(&Listed::Stop) || listed.contains(&Listed::Skip),
        ActionKind::Skip(_) => listed.contains(&Listed::Skip),
        ActionKind::Send { .. } | ActionKind::Inject(_) => false,
        ActionKind::Delay { delta, .. } => {
            if !listed.contains(&Listed::Delay) {
                return false;
            }
            let bounded = matches!(fm, FailureModel::Crash | FailureModel::Omission);
            match *cm {
                CommunicationModel::Synchronous { delta: bound } if bounded => {
                    baseline_transit + delta < bound
                }
                CommunicationModel::EventuallySynchronous { delta: bound, gst } if bounded => {
                    emitted_at < gst || baseline_transit + delta < bound
                }
                _ => true,
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("action not enabled under the configured failure/communication model")]
    NotEnabled,
    #[error("action cost exceeds remaining budget")]
    BudgetExceeded,
}

/// Budget-and-protection half of the simulation state: the `b` and `psi` of
/// the (eta, b, psi) triple. The system state `eta` lives in the world.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub failure_model: FailureModel,
    pub communication_model: CommunicationModel,
    pub budget: BudgetVector,
    pub protection: ProtectionLevels,
}

impl Adversary {
    pub fn new(
        failure_model: FailureModel,
        communication_model: CommunicationModel,
        budget: BudgetVector,
    ) -> Self {
        let dims = budget.dims();
        Adversary { failure_model, communication_model, budget, protection: ProtectionLevels::new(dims) }
    }

    /// kappa(a) ⊙ psi(s(a))
    pub fn action_cost(&self, action: &AdversarialAction) -> BudgetVector {
        action.baseline_cost.hadamard(&self.protection.get(action.target))
    }

    /// The `attack` transition rule: checks enablement and budget, then spends
    /// the cost and zeroes the consumed protection components. A refused
    /// action consumes nothing. Returns the cost actually paid.
    pub fn apply_attack(
        &mut self,
        action: &AdversarialAction,
        baseline_transit: u64,
        emitted_at: Tick,
    ) -> Result<BudgetVector, AttackError> {
        if !is_enabled(action, self.failure_model, &self.communication_model, baseline_transit, emitted_at) {
            return Err(AttackError::NotEnabled);
        }
        let cost = self.action_cost(action);
        if !cost.le(&self.budget) {
            return Err(AttackError::BudgetExceeded);
        }
        self.budget = self.budget.sub(&cost);
        self.protection.consume(action.target, &action.baseline_cost);
        Ok(cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(kind: ActionKind, cost: Vec<u64>) -> AdversarialAction {
        AdversarialAction { kind, target: NodeId::Peer(0), baseline_cost: BudgetVector(cost) }
    }

    #[test]
    fn stop_enabled_only_where_listed() {
        let stop = act(ActionKind::Stop, vec![0, 0]);
        let sync = CommunicationModel::Synchronous { delta: 10 };
        assert!(is_enabled(&stop, FailureModel::Crash, &sync, 0, 0));
        assert!(!is_enabled(&stop, FailureModel::Crash, &CommunicationModel::Asynchronous, 0, 0));
        // stop rides on skip in the omission rows
        assert!(is_enabled(&stop, FailureModel::Omission, &sync, 0, 0));
    }

    #[test]
    fn delay_bound_under_synchrony() {
        let delay = act(ActionKind::Delay { delta: 8, direction: Direction::Output }, vec![0, 0]);
        let sync = CommunicationModel::Synchronous { delta: 10 };
        // t + delta = 11 >= 10
        assert!(!is_enabled(&delay, FailureModel::Omission, &sync, 3, 0));
        // t + delta = 9 < 10
        assert!(is_enabled(&delay, FailureModel::Omission, &sync, 1, 0));
        // performance row: unbounded
        assert!(is_enabled(&delay, FailureModel::Performance, &sync, 100, 0));
    }

    #[test]
    fn gst_gates_the_delay_bound() {
        let delay = act(ActionKind::Delay { delta: 8, direction: Direction::Both }, vec![0, 0]);
        let cm = CommunicationModel::EventuallySynchronous { delta: 10, gst: 100 };
        assert!(is_enabled(&delay, FailureModel::Crash, &cm, 5, 50)); // pre-GST: unbounded
        assert!(!is_enabled(&delay, FailureModel::Crash, &cm, 5, 100)); // post-GST: 13 >= 10
    }

    #[test]
    fn inject_requires_byzantine_and_enables_everything() {
        let inj = act(ActionKind::Inject(SabotageBehavior::PeerRefuse { clients: vec![] }), vec![1, 0]);
        for cm in [
            CommunicationModel::Synchronous { delta: 10 },
            CommunicationModel::Asynchronous,
            CommunicationModel::EventuallySynchronous { delta: 10, gst: 0 },
        ] {
            assert!(is_enabled(&inj, FailureModel::Byzantine, &cm, 0, 0));
            assert!(!is_enabled(&inj, FailureModel::Performance, &cm, 0, 0));
        }
        let send = act(
            ActionKind::Send { forged_sender: NodeId::Client(0), note: String::new() },
            vec![0, 0],
        );
        assert!(is_enabled(&send, FailureModel::Byzantine, &CommunicationModel::Asynchronous, 0, 0));
        assert!(!is_enabled(&send, FailureModel::Omission, &CommunicationModel::Asynchronous, 0, 0));
    }

    #[test]
    fn hadamard_cost_from_worked_example() {
        let mut adv = Adversary::new(
            FailureModel::Byzantine,
            CommunicationModel::Asynchronous,
            BudgetVector(vec![1, 0]),
        );
        let inj = act(ActionKind::Inject(SabotageBehavior::PeerRefuse { clients: vec![] }), vec![1, 0]);
        assert_eq!(adv.action_cost(&inj), BudgetVector(vec![1, 0]));
        let paid = adv.apply_attack(&inj, 0, 0).unwrap();
        assert_eq!(paid, BudgetVector(vec![1, 0]));
        assert_eq!(adv.budget, BudgetVector(vec![0, 0]));
        assert_eq!(adv.protection.get(NodeId::Peer(0)), BudgetVector(vec![0, 1]));
        // second infection of the same node is free
        let paid = adv.apply_attack(&inj, 0, 0).unwrap();
        assert!(paid.is_zero());
        assert_eq!(adv.budget, BudgetVector(vec![0, 0]));
    }

    #[test]
    fn refused_action_leaves_state_unchanged() {
        let mut adv = Adversary::new(
            FailureModel::Byzantine,
            CommunicationModel::Asynchronous,
            BudgetVector(vec![0, 0]),
        );
        let inj = act(ActionKind::Inject(SabotageBehavior::PeerRefuse { clients: vec![] }), vec![1, 0]);
        assert_eq!(adv.apply_attack(&inj, 0, 0), Err(AttackError::BudgetExceeded));
        assert_eq!(adv.budget, BudgetVector(vec![0, 0]));
        assert_eq!(adv.protection.get(NodeId::Peer(0)), BudgetVector(vec![1, 1]));
    }

    #[test]
    fn goal_predicate() {
        let goal = GoalSpec { target_client: NodeId::Client(0), g_threshold: 1500, score_threshold: 0.75 };
        assert!(goal.evaluate(2000, Some(0.4)));
        assert!(!goal.evaluate(1000, Some(0.0)));
        assert!(!goal.evaluate(2000, Some(1.0)));
        assert!(!goal.evaluate(2000, None));
    }
}
