//! Deterministic discrete-event simulator of a permissioned blockchain with a
//! budget-limited programmatic adversary, plus the fairness metrics measured
//! on each run.

pub mod adversary;
pub mod config;
pub mod consensus;
pub mod engine;
pub mod fabric;
pub mod metrics;
pub mod report;
pub mod sim;

/// Scalar used for scores and probabilities throughout; the analytic
/// functions in [`metrics`] stay generic over any float.
pub type Real = f64;

pub use adversary::{
    ActionKind, AdversarialAction, Adversary, AttackError, AttackPlan, BudgetVector,
    CommunicationModel, Direction, FailureModel, GoalSpec, SabotageBehavior,
};
pub use config::{preset, sweep_preset, ExperimentConfig, Sweep};
pub use engine::{derive_seed, DelaySpec, NodeId, Tick};
pub use fabric::NetworkTopology;
pub use metrics::{compute_score, endorsement_success_probability, ViolationCounters};
pub use sim::{run, RunResult};
