//! The simulation world: wires the agents, the event queue, the message
//! transport with per-endpoint delays, and the attack plan into one
//! deterministic run.

use std::collections::{BTreeMap, BTreeSet};

use crate::adversary::{
    ActionKind, Adversary, AdversarialAction, AttackError, SabotageBehavior,
};
use crate::config::ExperimentConfig;
use crate::consensus::{ConsensusMsg, OrdererCore, OrdererSabotage, Output, Step};
use crate::engine::{DelaySpec, Envelope, EventQueue, NodeId, RandomStreams, Tick};
use crate::fabric::{
    ClientState, Endorsement, EndorsedTransaction, GameState, Ledger, PeerSabotage, PeerState,
    PuzzleId, Transaction,
};
use crate::metrics::{
    competing_pairs, count_block_order_violations, count_differential_order_violations,
    count_receive_order_violations, CompetingPair, DeliveryIndex, ReceptionLog, ViolationCounters,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    SubmitTx(Transaction),
    Endorse(Endorsement),
    EndorsedTx(EndorsedTransaction),
    Consensus(ConsensusMsg),
    Forged(String),
}

#[derive(Clone, Debug)]
enum Event {
    PuzzleReveal(PuzzleId),
    ClientSolve { client: u32, tx: Transaction },
    Deliver(Envelope<Payload>),
    ConsensusTimeout { orderer: u32, height: u64, round: u32, step: Step },
    PlanStep(usize),
}

/// Message suppression and extra-delay state installed by adversarial actions.
#[derive(Clone, Debug, Default)]
struct NetControls {
    extra_out: BTreeMap<NodeId, u64>,
    extra_in: BTreeMap<NodeId, u64>,
    skip_out: BTreeSet<NodeId>,
    skip_in: BTreeSet<NodeId>,
    stopped: BTreeSet<NodeId>,
}

impl NetControls {
    fn drops_output(&self, node: NodeId) -> bool {
        self.stopped.contains(&node) || self.skip_out.contains(&node)
    }
    fn drops_input(&self, node: NodeId) -> bool {
        self.stopped.contains(&node) || self.skip_in.contains(&node)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimePoint {
    pub tick: Tick,
    pub g: u64,
    /// One entry per client, `None` before the first game resolves.
    pub scores: Vec<Option<f64>>,
}

impl Eq for TimePoint {}

/// A refused plan step, kept for the report.
#[derive(Clone, Debug, PartialEq)]
pub struct Refusal {
    pub tick: Tick,
    pub action: String,
    pub target: NodeId,
    pub error: AttackError,
}

/// Everything a finished run exposes: the scalar results of the report plus
/// the raw logs the oracle checks recompute from.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub g: u64,
    pub scores: Vec<Option<f64>>,
    pub counters: ViolationCounters,
    pub goal_met: bool,
    pub final_height: u64,
    pub agreement_ok: bool,
    pub target_endorsed: u64,
    pub refusals: Vec<Refusal>,
    pub knowledge: Vec<(Tick, NodeId, String)>,
    pub timeseries: Vec<TimePoint>,

    pub transactions: Vec<Transaction>,
    pub ledger: Ledger,
    pub peer_log: ReceptionLog,
    pub orderer_log: ReceptionLog,
    pub honest_peers: Vec<NodeId>,
    pub honest_orderers: Vec<NodeId>,
    pub pairs: Vec<CompetingPair>,
}

struct World {
    config: ExperimentConfig,
    now: Tick,
    queue: EventQueue<Event>,
    rng: RandomStreams,
    controls: NetControls,

    clients: Vec<ClientState>,
    peers: Vec<PeerState>,
    orderers: Vec<OrdererCore>,

    ledger: Ledger,
    games: GameState,
    peer_log: ReceptionLog,
    orderer_log: ReceptionLog,
    transactions: Vec<Transaction>,

    adversary: Adversary,
    plan: Vec<(Tick, AdversarialAction)>,
    refusals: Vec<Refusal>,
    knowledge: Vec<(Tick, NodeId, String)>,

    timeseries: Vec<TimePoint>,
    agreement_ok: bool,
    next_tx: u64,
    next_envelope: u64,
    last_seq: u64,
}

impl World {
    fn new(config: &ExperimentConfig) -> World {
        let topo = config.topology;
        let plan = config.build_plan();
        plan.validate().expect("plan triggers ordered");
        World {
            config: config.clone(),
            now: 0,
            queue: EventQueue::new(),
            rng: RandomStreams::new(config.seed),
            controls: NetControls::default(),
            clients: (0..topo.n_c).map(|_| ClientState::default()).collect(),
            peers: (0..topo.n_p).map(|_| PeerState::default()).collect(),
            orderers: (0..topo.n_o)
                .map(|i| OrdererCore::new(i, topo.n_o, topo.f_o, config.consensus.max_block.map(|c| c as usize)))
                .collect(),
            ledger: Ledger::default(),
            games: GameState::default(),
            peer_log: ReceptionLog::default(),
            orderer_log: ReceptionLog::default(),
            transactions: Vec::new(),
            adversary: Adversary::new(
                config.adversary.failure_model,
                config.adversary.communication_model,
                config.budget(),
            ),
            plan: plan.steps,
            refusals: Vec::new(),
            knowledge: Vec::new(),
            timeseries: Vec::new(),
            agreement_ok: true,
            next_tx: 0,
            next_envelope: 0,
            last_seq: 0,
        }
    }

    fn delay_spec(&self, node: NodeId) -> DelaySpec {
        match node {
            NodeId::Peer(_) => self.config.delays.peer_spec(),
            _ => self.config.delays.base_spec(),
        }
    }

    /// Endpoint delay composition: sampled output delay of the sender, any
    /// adversarial extras on either endpoint, then the sampled input delay of
    /// the receiver. Suppressed endpoints drop the message at the matching end.
    fn transmit(&mut self, sender: NodeId, receiver: NodeId, payload: Payload) {
        if self.controls.drops_output(sender) {
            return;
        }
        let out = self.delay_spec(sender).sample(self.rng.node(sender));
        let inp = self.delay_spec(receiver).sample(self.rng.node(receiver));
        let extra = self.controls.extra_out.get(&sender).copied().unwrap_or(0)
            + self.controls.extra_in.get(&receiver).copied().unwrap_or(0);
        let deliver_at = self.now + out + extra + inp;
        let id = self.next_envelope;
        self.next_envelope += 1;
        let env = Envelope { id, sender, receiver, payload, emitted_at: self.now, deliver_at };
        self.queue
            .schedule(self.now, deliver_at, Event::Deliver(env))
            .expect("delivery is never in the past");
    }

    fn schedule(&mut self, at: Tick, event: Event) {
        self.queue.schedule(self.now, at, event).expect("scheduled in the future");
    }

    fn prime(&mut self) {
        for (i, &(at, _)) in self.plan.clone().iter().enumerate() {
            self.schedule(at, Event::PlanStep(i));
        }
        self.schedule(self.config.puzzle.reveal_interval, Event::PuzzleReveal(0));
        for i in 0..self.orderers.len() {
            let mut out = Vec::new();
            self.orderers[i].start(&mut out);
            self.process_orderer_outputs(i as u32, out);
        }
    }

    fn run_to_horizon(&mut self) {
        while let Some((at, seq, event)) = self.queue.pop() {
            if at > self.config.horizon {
                break;
            }
            self.now = at;
            self.last_seq = seq;
            self.handle(event);
        }
        self.now = self.config.horizon;
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::PuzzleReveal(puzzle) => self.on_puzzle_reveal(puzzle),
            Event::ClientSolve { client, tx } => self.on_client_solve(client, tx),
            Event::Deliver(env) => self.on_deliver(env),
            Event::ConsensusTimeout { orderer, height, round, step } => {
                let mut out = Vec::new();
                self.orderers[orderer as usize].on_timeout(height, round, step, &mut out);
                self.process_orderer_outputs(orderer, out);
            }
            Event::PlanStep(i) => self.apply_plan_step(i),
        }
    }

    fn on_puzzle_reveal(&mut self, puzzle: PuzzleId) {
        for c in 0..self.config.topology.n_c {
            let client = NodeId::Client(c);
            let solve = self.config.puzzle.solve_delay.sample(self.rng.node(client));
            let tx = Transaction { id: self.next_tx, client, puzzle, created_at: self.now + solve };
            self.next_tx += 1;
            self.schedule(self.now + solve, Event::ClientSolve { client: c, tx });
        }
        let next = self.now + self.config.puzzle.reveal_interval;
        if next <= self.config.horizon {
            self.schedule(next, Event::PuzzleReveal(puzzle + 1));
        }
    }

    fn on_client_solve(&mut self, client: u32, tx: Transaction) {
        self.transactions.push(tx);
        self.clients[client as usize].submit(tx);
        let sender = NodeId::Client(client);
        for peer in self.config.topology.peers().collect::<Vec<_>>() {
            self.transmit(sender, peer, Payload::SubmitTx(tx));
        }
    }

    fn on_deliver(&mut self, env: Envelope<Payload>) {
        if self.controls.drops_input(env.receiver) {
            return;
        }
        match (env.receiver, env.payload) {
            (NodeId::Peer(p), Payload::SubmitTx(tx)) => {
                // reception is logged even when the peer then refuses to endorse
                self.peer_log.record(env.receiver, tx.id, self.now, self.last_seq);
                if self.peers[p as usize].endorses(tx.client) {
                    let e = Endorsement { tx: tx.id, peer: env.receiver };
                    self.transmit(env.receiver, tx.client, Payload::Endorse(e));
                }
            }
            (NodeId::Client(c), Payload::Endorse(e)) => {
                let m_p = self.config.topology.m_p;
                if let Some(etx) = self.clients[c as usize].on_endorsement(e, m_p) {
                    let sender = NodeId::Client(c);
                    for orderer in self.config.topology.orderers().collect::<Vec<_>>() {
                        self.transmit(sender, orderer, Payload::EndorsedTx(etx.clone()));
                    }
                }
            }
            (NodeId::Orderer(o), Payload::EndorsedTx(etx)) => {
                let id = etx.transaction.id;
                if !self.orderer_log.has(env.receiver, id) {
                    self.orderer_log.record(env.receiver, id, self.now, self.last_seq);
                }
                // mempool only; the transaction rides the next proposal
                self.orderers[o as usize].on_endorsed_tx(etx);
            }
            (NodeId::Orderer(o), Payload::Consensus(msg)) => {
                let mut out = Vec::new();
                self.orderers[o as usize].on_message(msg, &mut out);
                self.process_orderer_outputs(o, out);
            }
            // forged payloads and misrouted messages carry no protocol meaning
            _ => {}
        }
    }

    fn process_orderer_outputs(&mut self, orderer: u32, outputs: Vec<Output>) {
        let sender = NodeId::Orderer(orderer);
        for output in outputs {
            match output {
                Output::Broadcast(msg) => {
                    for receiver in self.config.topology.orderers().collect::<Vec<_>>() {
                        if receiver != sender {
                            self.transmit(sender, receiver, Payload::Consensus(msg.clone()));
                        }
                    }
                }
                Output::ScheduleTimeout { height, round, step } => {
                    let at = self.now + self.config.consensus.phase_timeout;
                    self.schedule(at, Event::ConsensusTimeout { orderer, height, round, step });
                }
                Output::Committed(block) => self.on_committed(block),
            }
        }
    }

    /// Canonical ledger maintenance: the first commit at each height defines
    /// the global order; any later commit at that height must agree.
    fn on_committed(&mut self, block: crate::fabric::Block) {
        let canon_height = self.ledger.height();
        if block.height <= canon_height {
            if self.ledger.blocks[(block.height - 1) as usize] != block {
                self.agreement_ok = false;
            }
            return;
        }
        debug_assert_eq!(block.height, canon_height + 1);
        self.games.on_block(&block);
        self.ledger.append(block);
        self.record_timepoint();
    }

    fn record_timepoint(&mut self) {
        let n_c = self.config.topology.n_c;
        let scores = (0..n_c)
            .map(|c| {
                let wins = self.games.wins.get(&NodeId::Client(c)).copied().unwrap_or(0);
                crate::metrics::compute_score(wins, self.games.g, n_c)
            })
            .collect();
        self.timeseries.push(TimePoint { tick: self.now, g: self.games.g, scores });
    }

    /// Worst-case baseline transit of a message out of `node`, used for the
    /// delay-bound side condition.
    fn baseline_transit_bound(&self, node: NodeId) -> u64 {
        let max_in = self
            .config
            .delays
            .base_spec()
            .upper_bound()
            .max(self.config.delays.peer_spec().upper_bound());
        self.delay_spec(node).upper_bound() + max_in
    }

    fn apply_plan_step(&mut self, index: usize) {
        let action = self.plan[index].1.clone();
        let transit = self.baseline_transit_bound(action.target);
        match self.adversary.apply_attack(&action, transit, self.now) {
            Ok(_) => self.apply_action_effect(&action),
            Err(error) => self.refusals.push(Refusal {
                tick: self.now,
                action: action.kind.name().to_string(),
                target: action.target,
                error,
            }),
        }
    }

    fn apply_action_effect(&mut self, action: &AdversarialAction) {
        let target = action.target;
        match &action.kind {
            ActionKind::Reveal => {
                self.knowledge.push((self.now, target, "state".into()));
            }
            ActionKind::Listen(dir) => {
                self.knowledge.push((self.now, target, format!("traffic:{dir:?}")));
            }
            ActionKind::Send { forged_sender, note } => {
                self.transmit(*forged_sender, target, Payload::Forged(note.clone()));
            }
            ActionKind::Delay { delta, direction } => {
                if direction.covers_output() {
                    *self.controls.extra_out.entry(target).or_insert(0) += delta;
                }
                if direction.covers_input() {
                    *self.controls.extra_in.entry(target).or_insert(0) += delta;
                }
            }
            ActionKind::Skip(direction) => {
                if direction.covers_output() {
                    self.controls.skip_out.insert(target);
                }
                if direction.covers_input() {
                    self.controls.skip_in.insert(target);
                }
            }
            ActionKind::Stop => {
                self.controls.stopped.insert(target);
            }
            ActionKind::Inject(behavior) => self.inject(target, behavior.clone()),
        }
    }

    fn inject(&mut self, target: NodeId, behavior: SabotageBehavior) {
        match (target, behavior) {
            (NodeId::Peer(p), SabotageBehavior::PeerRefuse { clients }) => {
                self.peers[p as usize].sabotage =
                    Some(PeerSabotage { refuse_clients: clients.into_iter().collect() });
            }
            (NodeId::Orderer(o), SabotageBehavior::OrdererFilterProposals { clients }) => {
                self.orderers[o as usize].sabotage = Some(OrdererSabotage {
                    omit_when_proposing: clients.into_iter().collect(),
                    withhold_votes_for: BTreeSet::new(),
                });
            }
            (NodeId::Orderer(o), SabotageBehavior::OrdererFilterAndWithhold { clients }) => {
                let clients: BTreeSet<NodeId> = clients.into_iter().collect();
                self.orderers[o as usize].sabotage = Some(OrdererSabotage {
                    omit_when_proposing: clients.clone(),
                    withhold_votes_for: clients,
                });
            }
            // behavior/target role mismatch: nothing to install
            _ => {}
        }
    }

    fn finalize(mut self) -> RunResult {
        let topo = self.config.topology;
        let n_c = topo.n_c;
        let scores: Vec<Option<f64>> = (0..n_c)
            .map(|c| {
                let wins = self.games.wins.get(&NodeId::Client(c)).copied().unwrap_or(0);
                crate::metrics::compute_score(wins, self.games.g, n_c)
            })
            .collect();

        let peer_nodes: Vec<NodeId> = topo.peers().collect();
        let orderer_nodes: Vec<NodeId> = topo.orderers().collect();
        let honest_peers: Vec<NodeId> = peer_nodes
            .iter()
            .copied()
            .filter(|&n| {
                let NodeId::Peer(p) = n else { return false };
                self.peers[p as usize].sabotage.is_none() && !self.controls.stopped.contains(&n)
            })
            .collect();
        let honest_orderers: Vec<NodeId> = orderer_nodes
            .iter()
            .copied()
            .filter(|&n| {
                let NodeId::Orderer(o) = n else { return false };
                self.orderers[o as usize].sabotage.is_none() && !self.controls.stopped.contains(&n)
            })
            .collect();

        let pairs = competing_pairs(&self.transactions);
        let delivery = DeliveryIndex::from_ledger(&self.ledger);
        let peer_f = topo.n_p - topo.m_p;
        let counters = ViolationCounters {
            receive_peers: count_receive_order_violations(&self.peer_log, &peer_nodes, &pairs, &delivery),
            block_peers: count_block_order_violations(&self.peer_log, &peer_nodes, &pairs, &delivery),
            differential_peers: count_differential_order_violations(
                &self.peer_log, &honest_peers, &pairs, &delivery, peer_f,
            ),
            receive_orderers: count_receive_order_violations(
                &self.orderer_log, &orderer_nodes, &pairs, &delivery,
            ),
            block_orderers: count_block_order_violations(
                &self.orderer_log, &orderer_nodes, &pairs, &delivery,
            ),
            differential_orderers: count_differential_order_violations(
                &self.orderer_log, &honest_orderers, &pairs, &delivery, topo.f_o,
            ),
        };

        let target = self.config.adversary.target_client;
        let goal_met = self
            .config
            .goal_spec()
            .evaluate(self.games.g, scores.get(target as usize).copied().flatten());
        let target_endorsed = self
            .transactions
            .iter()
            .filter(|t| t.client == NodeId::Client(target))
            .filter(|t| self.clients[target as usize].has_broadcast(t.id))
            .count() as u64;

        if self.timeseries.is_empty() || self.timeseries.last().unwrap().tick < self.config.horizon {
            self.now = self.config.horizon;
            self.record_timepoint();
        }

        RunResult {
            config: self.config,
            g: self.games.g,
            scores,
            counters,
            goal_met,
            final_height: self.ledger.height(),
            agreement_ok: self.agreement_ok,
            target_endorsed,
            refusals: self.refusals,
            knowledge: self.knowledge,
            timeseries: self.timeseries,
            transactions: self.transactions,
            ledger: self.ledger,
            peer_log: self.peer_log,
            orderer_log: self.orderer_log,
            honest_peers,
            honest_orderers,
            pairs,
        }
    }
}

/// Execute one configured run to its horizon.
pub fn run(config: &ExperimentConfig) -> RunResult {
    let mut world = World::new(config);
    world.prime();
    world.run_to_horizon();
    world.finalize()
}
