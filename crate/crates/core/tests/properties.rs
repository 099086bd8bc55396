//! Property-based checks over the adversary algebra and the simulator's
//! observational invariants.

use proptest::prelude::*;

use fabsim_core::adversary::{
    is_enabled, ActionKind, Adversary, AdversarialAction, BudgetVector, CommunicationModel,
    Direction, FailureModel, SabotageBehavior,
};
use fabsim_core::config::preset;
use fabsim_core::engine::{derive_seed, NodeId, Tick};
use fabsim_core::sim::run;

fn arb_failure() -> impl Strategy<Value = FailureModel> {
    prop::sample::select(FailureModel::ALL.to_vec())
}

fn arb_comm() -> impl Strategy<Value = CommunicationModel> {
    prop_oneof![
        (1u64..100).prop_map(|delta| CommunicationModel::Synchronous { delta }),
        Just(CommunicationModel::Asynchronous),
        ((1u64..100), (0u64..1000))
            .prop_map(|(delta, gst)| CommunicationModel::EventuallySynchronous { delta, gst }),
    ]
}

fn action(kind: ActionKind) -> AdversarialAction {
    AdversarialAction { kind, target: NodeId::Peer(0), baseline_cost: BudgetVector::zeros(2) }
}

proptest! {
    // listen rides on reveal, stop on skip, everything on inject
    #[test]
    fn enablement_subsumption_is_coherent(
        fm in arb_failure(),
        cm in arb_comm(),
        transit in 0u64..50,
        emitted in 0u64..1000,
    ) {
        let en = |kind: ActionKind| is_enabled(&action(kind), fm, &cm, transit, emitted);
        prop_assert_eq!(en(ActionKind::Listen(Direction::Both)), en(ActionKind::Reveal));
        if en(ActionKind::Skip(Direction::Both)) {
            prop_assert!(en(ActionKind::Stop));
        }
        if en(ActionKind::Inject(SabotageBehavior::PeerRefuse { clients: vec![] })) {
            for kind in [
                ActionKind::Reveal,
                ActionKind::Listen(Direction::Input),
                ActionKind::Send { forged_sender: NodeId::Client(0), note: String::new() },
                ActionKind::Delay { delta: 1, direction: Direction::Output },
                ActionKind::Skip(Direction::Output),
                ActionKind::Stop,
            ] {
                prop_assert!(en(kind));
            }
        }
    }

    // under crash/omission synchrony the delay bound is exactly t + d < bound
    #[test]
    fn delay_bound_is_sharp(
        fm in prop::sample::select(vec![FailureModel::Crash, FailureModel::Omission]),
        bound in 2u64..60,
        transit in 0u64..60,
        d in 1u64..60,
    ) {
        let cm = CommunicationModel::Synchronous { delta: bound };
        let a = action(ActionKind::Delay { delta: d, direction: Direction::Both });
        prop_assert_eq!(is_enabled(&a, fm, &cm, transit, 0), transit + d < bound);
    }

    // accounting: spent costs and the remaining budget always sum back to the
    // initial budget, and every paid cost fits the budget it was paid from
    #[test]
    fn budget_accounting_balances(
        initial in prop::collection::vec(0u64..6, 2),
        targets in prop::collection::vec((0u32..5, 0u32..2), 1..20),
    ) {
        let initial = BudgetVector(initial);
        let mut adv = Adversary::new(
            FailureModel::Byzantine,
            CommunicationModel::Asynchronous,
            initial.clone(),
        );
        let mut spent = BudgetVector::zeros(2);
        for (node, dim) in targets {
            let mut cost = vec![0u64; 2];
            cost[dim as usize] = 1;
            let act = AdversarialAction {
                kind: ActionKind::Inject(SabotageBehavior::PeerRefuse { clients: vec![] }),
                target: NodeId::Peer(node),
                baseline_cost: BudgetVector(cost),
            };
            let before = adv.budget.clone();
            match adv.apply_attack(&act, 0, 0) {
                Ok(paid) => {
                    prop_assert!(paid.le(&before));
                    spent = BudgetVector(
                        spent.0.iter().zip(&paid.0).map(|(a, b)| a + b).collect(),
                    );
                }
                Err(_) => prop_assert_eq!(&adv.budget, &before),
            }
            let total = BudgetVector(
                spent.0.iter().zip(&adv.budget.0).map(|(a, b)| a + b).collect(),
            );
            prop_assert_eq!(&total, &initial);
        }
    }

    #[test]
    fn derived_seeds_do_not_collide_locally(base in any::<u64>()) {
        let seeds: Vec<u64> = (0..32).map(|i| derive_seed(base, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), seeds.len());
    }
}

// observation-only actions never change the run's outcome
#[test]
fn passive_actions_are_neutral() {
    let mut cfg = preset("baseline").unwrap();
    cfg.horizon = 1500;
    let plain = run(&cfg);
    cfg.extra_actions = vec![
        (
            0,
            AdversarialAction {
                kind: ActionKind::Reveal,
                target: NodeId::Orderer(3),
                baseline_cost: BudgetVector::zeros(2),
            },
        ),
        (
            300,
            AdversarialAction {
                kind: ActionKind::Listen(Direction::Both),
                target: NodeId::Peer(5),
                baseline_cost: BudgetVector::zeros(2),
            },
        ),
    ];
    let observed = run(&cfg);
    assert_eq!(plain.g, observed.g);
    assert_eq!(plain.scores, observed.scores);
    assert_eq!(plain.counters, observed.counters);
    assert_eq!(plain.final_height, observed.final_height);
    assert_eq!(observed.knowledge.len(), 2);
}
