//! Simplified Tendermint state machine per orderer: rotating proposer,
//! PROPOSE/PREVOTE/PRECOMMIT with 2f+1 quorums, per-phase timeouts,
//! empty-block fallback, and the orderer sabotage behaviors.
//!
//! The locked-value re-proposal rules of full Tendermint are omitted; a
//! proposer always proposes from its own mempool. Orderers lagging in height
//! adopt committed blocks announced by faster orderers.

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::NodeId;
use crate::fabric::{Block, EndorsedTransaction, TxId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Propose,
    Prevote,
    Precommit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoteKind {
    Prevote,
    Precommit,
}

/// Vote value: the round's proposal, or nil. One legitimate proposer per
/// (height, round) means the proposal needs no digest beyond its round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoteValue {
    Proposal,
    Nil,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote {
    pub kind: VoteKind,
    pub height: u64,
    pub round: u32,
    pub value: VoteValue,
    pub voter: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub height: u64,
    pub round: u32,
    pub block: Block,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConsensusMsg {
    Proposal(Proposal),
    Vote(Vote),
    /// Commit announcement; carries the committed block so laggards can adopt
    /// it (the certificate is implicit, the simulator trusts announcements).
    Commit(Block),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    /// Send to every other orderer.
    Broadcast(ConsensusMsg),
    /// Ask the engine for a phase timeout.
    ScheduleTimeout { height: u64, round: u32, step: Step },
    /// Block appended to this orderer's local ledger.
    Committed(Block),
}

/// Injected orderer behavior.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrdererSabotage {
    /// Omit these clients' transactions whenever proposing.
    pub omit_when_proposing: BTreeSet<NodeId>,
    /// Vote nil on any block carrying these clients' transactions
    /// (the >f attack variant; empty otherwise).
    pub withhold_votes_for: BTreeSet<NodeId>,
}

/// Deterministic round-robin proposer.
pub fn proposer_for(height: u64, round: u32, n_o: u32) -> u32 {
    ((height + round as u64) % n_o as u64) as u32
}

type RoundKey = (u64, u32);

#[derive(Clone, Debug)]
pub struct OrdererCore {
    pub index: u32,
    n_o: u32,
    f_o: u32,
    max_block: Option<usize>,

    pub height: u64,
    pub round: u32,
    pub step: Step,

    mempool: Vec<EndorsedTransaction>,
    mempool_ids: BTreeSet<TxId>,
    delivered: BTreeSet<TxId>,
    pub ledger: Vec<Block>,

    proposals: BTreeMap<RoundKey, Block>,
    prevotes: BTreeMap<RoundKey, BTreeMap<u32, VoteValue>>,
    precommits: BTreeMap<RoundKey, BTreeMap<u32, VoteValue>>,
    voted_prevote: BTreeSet<RoundKey>,
    voted_precommit: BTreeSet<RoundKey>,
    pending_commits: BTreeMap<u64, Block>,

    pub sabotage: Option<OrdererSabotage>,
}

impl OrdererCore {
    pub fn new(index: u32, n_o: u32, f_o: u32, max_block: Option<usize>) -> Self {
        OrdererCore {
            index,
            n_o,
            f_o,
            max_block,
            height: 0,
            round: 0,
            step: Step::Propose,
            mempool: Vec::new(),
            mempool_ids: BTreeSet::new(),
            delivered: BTreeSet::new(),
            ledger: Vec::new(),
            proposals: BTreeMap::new(),
            prevotes: BTreeMap::new(),
            precommits: BTreeMap::new(),
            voted_prevote: BTreeSet::new(),
            voted_precommit: BTreeSet::new(),
            pending_commits: BTreeMap::new(),
            sabotage: None,
        }
    }

    pub fn id(&self) -> NodeId {
        NodeId::Orderer(self.index)
    }

    fn quorum(&self) -> usize {
        (2 * self.f_o + 1) as usize
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    /// Enter height 1, round 0.
    pub fn start(&mut self, out: &mut Vec<Output>) {
        self.enter_round(1, 0, out);
        self.try_advance(out);
    }

    /// Add a valid endorsed transaction to the mempool unless already present
    /// or already delivered. Returns whether it was added.
    pub fn on_endorsed_tx(&mut self, etx: EndorsedTransaction) -> bool {
        let id = etx.transaction.id;
        if self.mempool_ids.contains(&id) || self.delivered.contains(&id) {
            return false;
        }
        self.mempool_ids.insert(id);
        self.mempool.push(etx);
        true
    }

    /// Mempool snapshot in reception order; a sabotaged proposer filters out
    /// the omitted clients. Empty mempool yields an empty block.
    pub fn build_proposal(&self) -> Block {
        let mut txs: Vec<EndorsedTransaction> = self
            .mempool
            .iter()
            .filter(|etx| match &self.sabotage {
                Some(s) => !s.omit_when_proposing.contains(&etx.transaction.client),
                None => true,
            })
            .cloned()
            .collect();
        if let Some(cap) = self.max_block {
            txs.truncate(cap);
        }
        Block { height: self.height, transactions: txs, proposer: self.id() }
    }

    fn withholds(&self, block: &Block) -> bool {
        match &self.sabotage {
            Some(s) if !s.withhold_votes_for.is_empty() => block.contains_client(&s.withhold_votes_for),
            _ => false,
        }
    }

    pub fn on_message(&mut self, msg: ConsensusMsg, out: &mut Vec<Output>) {
        match msg {
            ConsensusMsg::Proposal(p) => {
                // stale heights dropped; future rounds kept for when we get there
                if p.height >= self.height
                    && p.block.proposer == NodeId::Orderer(proposer_for(p.height, p.round, self.n_o))
                {
                    self.proposals.entry((p.height, p.round)).or_insert(p.block);
                }
            }
            ConsensusMsg::Vote(v) => {
                if v.height < self.height {
                    return;
                }
                let voter = match v.voter {
                    NodeId::Orderer(i) if i < self.n_o => i,
                    _ => return,
                };
                let tally = match v.kind {
                    VoteKind::Prevote => self.prevotes.entry((v.height, v.round)).or_default(),
                    VoteKind::Precommit => self.precommits.entry((v.height, v.round)).or_default(),
                };
                tally.entry(voter).or_insert(v.value);
            }
            ConsensusMsg::Commit(block) => {
                if block.height >= self.height {
                    self.pending_commits.entry(block.height).or_insert(block);
                }
            }
        }
        self.try_advance(out);
    }

    /// Phase timeout; stale timeouts (state already advanced) are ignored.
    pub fn on_timeout(&mut self, height: u64, round: u32, step: Step, out: &mut Vec<Output>) {
        if height != self.height || round != self.round || step != self.step {
            return;
        }
        match step {
            Step::Propose => self.cast_prevote(VoteValue::Nil, out),
            Step::Prevote => self.cast_precommit(VoteValue::Nil, out),
            Step::Precommit => {
                let (h, r) = (self.height, self.round);
                self.enter_round(h, r + 1, out);
            }
        }
        self.try_advance(out);
    }

    fn enter_round(&mut self, height: u64, round: u32, out: &mut Vec<Output>) {
        self.height = height;
        self.round = round;
        self.step = Step::Propose;
        out.push(Output::ScheduleTimeout { height, round, step: Step::Propose });
        if proposer_for(height, round, self.n_o) == self.index {
            let block = self.build_proposal();
            let proposal = Proposal { height, round, block: block.clone() };
            self.proposals.entry((height, round)).or_insert(block);
            out.push(Output::Broadcast(ConsensusMsg::Proposal(proposal)));
        }
    }

    fn cast_prevote(&mut self, value: VoteValue, out: &mut Vec<Output>) {
        let key = (self.height, self.round);
        if !self.voted_prevote.insert(key) {
            return;
        }
        self.prevotes.entry(key).or_default().insert(self.index, value);
        out.push(Output::Broadcast(ConsensusMsg::Vote(Vote {
            kind: VoteKind::Prevote,
            height: key.0,
            round: key.1,
            value,
            voter: self.id(),
        })));
        self.step = Step::Prevote;
        out.push(Output::ScheduleTimeout { height: key.0, round: key.1, step: Step::Prevote });
    }

    fn cast_precommit(&mut self, mut value: VoteValue, out: &mut Vec<Output>) {
        let key = (self.height, self.round);
        if !self.voted_precommit.insert(key) {
            return;
        }
        // withholding orderers refuse to precommit a block carrying a target
        if value == VoteValue::Proposal {
            if let Some(block) = self.proposals.get(&key) {
                if self.withholds(block) {
                    value = VoteValue::Nil;
                }
            }
        }
        self.precommits.entry(key).or_default().insert(self.index, value);
        out.push(Output::Broadcast(ConsensusMsg::Vote(Vote {
            kind: VoteKind::Precommit,
            height: key.0,
            round: key.1,
            value,
            voter: self.id(),
        })));
        self.step = Step::Precommit;
        out.push(Output::ScheduleTimeout { height: key.0, round: key.1, step: Step::Precommit });
    }

    fn count(tally: Option<&BTreeMap<u32, VoteValue>>, value: VoteValue) -> usize {
        tally.map(|t| t.values().filter(|&&v| v == value).count()).unwrap_or(0)
    }

    /// Apply every transition enabled by the currently known messages.
    fn try_advance(&mut self, out: &mut Vec<Output>) {
        loop {
            // adopt a block committed elsewhere at our height
            if let Some(block) = self.pending_commits.remove(&self.height) {
                self.deliver(block, false, out);
                continue;
            }
            // commit on a precommit quorum in any round of this height; late
            // quorums from rounds we timed out of still count
            if let Some(r) = (0..=self.round).find(|&r| {
                Self::count(self.precommits.get(&(self.height, r)), VoteValue::Proposal) >= self.quorum()
                    && self.proposals.contains_key(&(self.height, r))
            }) {
                let block = self.proposals[&(self.height, r)].clone();
                self.deliver(block, true, out);
                continue;
            }
            let key = (self.height, self.round);
            match self.step {
                Step::Propose => {
                    if let Some(block) = self.proposals.get(&key) {
                        let value = if self.withholds(block) { VoteValue::Nil } else { VoteValue::Proposal };
                        self.cast_prevote(value, out);
                        continue;
                    }
                }
                Step::Prevote => {
                    let tally = self.prevotes.get(&key);
                    if Self::count(tally, VoteValue::Proposal) >= self.quorum() {
                        self.cast_precommit(VoteValue::Proposal, out);
                        continue;
                    }
                    if Self::count(tally, VoteValue::Nil) >= self.quorum() {
                        self.cast_precommit(VoteValue::Nil, out);
                        continue;
                    }
                }
                Step::Precommit => {
                    if Self::count(self.precommits.get(&key), VoteValue::Nil) >= self.quorum() {
                        self.enter_round(key.0, key.1 + 1, out);
                        continue;
                    }
                }
            }
            break;
        }
    }

    /// Append the block locally, purge its transactions from the mempool and
    /// move to the next height. `announce` is set when we committed from a
    /// quorum ourselves rather than adopting someone else's announcement.
    fn deliver(&mut self, block: Block, announce: bool, out: &mut Vec<Output>) {
        debug_assert_eq!(block.height, self.height);
        for etx in &block.transactions {
            let id = etx.transaction.id;
            self.delivered.insert(id);
            if self.mempool_ids.remove(&id) {
                self.mempool.retain(|m| m.transaction.id != id);
            }
        }
        self.ledger.push(block.clone());
        if announce {
            out.push(Output::Broadcast(ConsensusMsg::Commit(block.clone())));
        }
        out.push(Output::Committed(block));
        let h = self.height;
        self.prune(h);
        self.enter_round(h + 1, 0, out);
    }

    fn prune(&mut self, upto_height: u64) {
        self.proposals.retain(|&(h, _), _| h > upto_height);
        self.prevotes.retain(|&(h, _), _| h > upto_height);
        self.precommits.retain(|&(h, _), _| h > upto_height);
        self.voted_prevote.retain(|&(h, _)| h > upto_height);
        self.voted_precommit.retain(|&(h, _)| h > upto_height);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::Transaction;

    fn etx(id: TxId, client: u32) -> EndorsedTransaction {
        EndorsedTransaction {
            transaction: Transaction { id, client: NodeId::Client(client), puzzle: id, created_at: 0 },
            endorsements: vec![],
        }
    }

    #[test]
    fn proposer_rotation() {
        assert_eq!(proposer_for(1, 0, 4), 1);
        assert_eq!(proposer_for(1, 1, 4), 2);
        let hit: BTreeSet<u32> = (1..=4).map(|h| proposer_for(h, 0, 4)).collect();
        assert_eq!(hit.len(), 4);
    }

    #[test]
    fn honest_proposal_keeps_reception_order() {
        let mut core = OrdererCore::new(1, 4, 1, None);
        core.start(&mut Vec::new());
        assert!(core.on_endorsed_tx(etx(1, 0)));
        assert!(core.on_endorsed_tx(etx(2, 1)));
        assert!(!core.on_endorsed_tx(etx(1, 0)));
        let block = core.build_proposal();
        let ids: Vec<TxId> = block.transactions.iter().map(|t| t.transaction.id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn sabotaged_proposal_filters_target() {
        let mut core = OrdererCore::new(1, 4, 1, None);
        core.start(&mut Vec::new());
        core.sabotage = Some(OrdererSabotage {
            omit_when_proposing: [NodeId::Client(0)].into_iter().collect(),
            withhold_votes_for: BTreeSet::new(),
        });
        core.on_endorsed_tx(etx(1, 0));
        core.on_endorsed_tx(etx(2, 1));
        let ids: Vec<TxId> = core.build_proposal().transactions.iter().map(|t| t.transaction.id).collect();
        assert_eq!(ids, vec![2]);
    }

    #[test]
    fn empty_mempool_proposes_empty_block() {
        let mut core = OrdererCore::new(1, 4, 1, None);
        core.start(&mut Vec::new());
        assert!(core.build_proposal().transactions.is_empty());
    }

    fn feed_votes(core: &mut OrdererCore, kind: VoteKind, n: u32, out: &mut Vec<Output>) {
        for i in 0..n {
            core.on_message(
                ConsensusMsg::Vote(Vote {
                    kind,
                    height: 1,
                    round: 0,
                    value: VoteValue::Proposal,
                    voter: NodeId::Orderer(i),
                }),
                out,
            );
        }
    }

    #[test]
    fn commit_requires_exactly_the_quorum() {
        // n_o = 55 = 3*18 + 1, quorum 37
        let mut core = OrdererCore::new(0, 55, 18, None);
        let mut out = Vec::new();
        core.start(&mut out);
        // orderer 1 proposes (height 1, round 0)
        let block = Block { height: 1, transactions: vec![], proposer: NodeId::Orderer(1) };
        core.on_message(
            ConsensusMsg::Proposal(Proposal { height: 1, round: 0, block }),
            &mut out,
        );
        out.clear();
        feed_votes(&mut core, VoteKind::Precommit, 36, &mut out);
        assert!(!out.iter().any(|o| matches!(o, Output::Committed(_))), "36 < 2f+1");
        feed_votes(&mut core, VoteKind::Precommit, 37, &mut out);
        let committed: Vec<_> = out.iter().filter(|o| matches!(o, Output::Committed(_))).collect();
        assert_eq!(committed.len(), 1);
        assert_eq!(core.height, 2);
    }

    #[test]
    fn small_cluster_quorum() {
        // n_o = 4 (f = 1): 3 matching precommits commit
        let mut core = OrdererCore::new(0, 4, 1, None);
        let mut out = Vec::new();
        core.start(&mut out);
        let block = Block { height: 1, transactions: vec![], proposer: NodeId::Orderer(1) };
        core.on_message(ConsensusMsg::Proposal(Proposal { height: 1, round: 0, block }), &mut out);
        out.clear();
        feed_votes(&mut core, VoteKind::Precommit, 3, &mut out);
        assert!(out.iter().any(|o| matches!(o, Output::Committed(_))));
    }

    #[test]
    fn stale_timeout_is_ignored() {
        let mut core = OrdererCore::new(0, 4, 1, None);
        let mut out = Vec::new();
        core.start(&mut out);
        out.clear();
        core.on_timeout(1, 0, Step::Prevote, &mut out); // step is Propose
        assert!(out.is_empty());
        core.on_timeout(0, 0, Step::Propose, &mut out); // stale height
        assert!(out.is_empty());
    }

    #[test]
    fn nil_precommit_quorum_advances_round() {
        let mut core = OrdererCore::new(0, 4, 1, None);
        let mut out = Vec::new();
        core.start(&mut out);
        for i in 1..4 {
            core.on_message(
                ConsensusMsg::Vote(Vote {
                    kind: VoteKind::Precommit,
                    height: 1,
                    round: 0,
                    value: VoteValue::Nil,
                    voter: NodeId::Orderer(i),
                }),
                &mut out,
            );
        }
        // our own timeout path gives the 4th nil, but 3 already form a quorum
        // once we are in the precommit step; drive via timeouts
        core.on_timeout(1, 0, Step::Propose, &mut out);
        core.on_timeout(1, 0, Step::Prevote, &mut out);
        assert_eq!(core.round, 1);
        assert_eq!(core.height, 1);
    }

    #[test]
    fn adopts_commit_announcement_and_fast_forwards() {
        let mut core = OrdererCore::new(0, 4, 1, None);
        let mut out = Vec::new();
        core.start(&mut out);
        core.on_endorsed_tx(etx(1, 0));
        let b1 = Block { height: 1, transactions: vec![etx(1, 0)], proposer: NodeId::Orderer(1) };
        let b2 = Block { height: 2, transactions: vec![], proposer: NodeId::Orderer(2) };
        // height 2 announcement arrives first and is buffered
        core.on_message(ConsensusMsg::Commit(b2.clone()), &mut out);
        assert_eq!(core.height, 1);
        core.on_message(ConsensusMsg::Commit(b1.clone()), &mut out);
        assert_eq!(core.height, 3);
        assert_eq!(core.ledger, vec![b1, b2]);
        // delivered transaction was purged from the mempool
        assert_eq!(core.mempool_len(), 0);
    }
}
