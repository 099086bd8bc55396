//! The Fabric-style pipeline payloads and agent state: clients solving
//! puzzles, peers endorsing under an m-of-n policy, and the puzzle-competition
//! bookkeeping resolved on block delivery.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::{DelaySpec, NodeId, Tick};

pub type TxId = u64;
pub type PuzzleId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub n_c: u32,
    pub n_p: u32,
    pub m_p: u32,
    pub n_o: u32,
    pub f_o: u32,
}

impl NetworkTopology {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_o != 3 * self.f_o + 1 {
            errs.push(format!("n_o = {} must equal 3*f_o+1 = {}", self.n_o, 3 * self.f_o + 1));
        }
        if self.m_p < 1 || self.m_p > self.n_p {
            errs.push(format!("endorsement threshold m_p = {} not in [1, n_p = {}]", self.m_p, self.n_p));
        }
        if self.n_c < 1 {
            errs.push("need at least one client".into());
        }
        errs
    }

    pub fn clients(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_c).map(NodeId::Client)
    }
    pub fn peers(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_p).map(NodeId::Peer)
    }
    pub fn orderers(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n_o).map(NodeId::Orderer)
    }

    /// 2f+1, the vote quorum of the ordering service.
    pub fn quorum(&self) -> u32 {
        2 * self.f_o + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Transaction {
    pub id: TxId,
    pub client: NodeId,
    pub puzzle: PuzzleId,
    pub created_at: Tick,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Endorsement {
    pub tx: TxId,
    pub peer: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EndorsedTransaction {
    pub transaction: Transaction,
    pub endorsements: Vec<Endorsement>,
}

impl EndorsedTransaction {
    /// Number of distinct endorsing peers.
    pub fn distinct_endorsers(&self) -> usize {
        self.endorsements.iter().map(|e| e.peer).collect::<BTreeSet<_>>().len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub height: u64,
    pub transactions: Vec<EndorsedTransaction>,
    pub proposer: NodeId,
}

impl Block {
    pub fn contains_client(&self, clients: &BTreeSet<NodeId>) -> bool {
        self.transactions.iter().any(|t| clients.contains(&t.transaction.client))
    }
}

/// Append-only totally ordered delivery record: (height, intra-block position).
#[derive(Clone, Debug, Default)]
pub struct Ledger {
    pub blocks: Vec<Block>,
}

impl Ledger {
    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn append(&mut self, block: Block) {
        debug_assert_eq!(block.height, self.height() + 1);
        self.blocks.push(block);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuzzleSchedule {
    pub reveal_interval: Tick,
    pub solve_delay: DelaySpec,
}

impl Default for PuzzleSchedule {
    fn default() -> Self {
        PuzzleSchedule { reveal_interval: 10, solve_delay: DelaySpec::Uniform { min: 1, max: 5 } }
    }
}

/// Injected peer behavior: never endorse transactions from these clients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PeerSabotage {
    pub refuse_clients: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, Default)]
pub struct PeerState {
    pub sabotage: Option<PeerSabotage>,
}

impl PeerState {
    /// Honest peers endorse everything; a sabotaged peer silently refuses the
    /// listed clients.
    pub fn endorses(&self, client: NodeId) -> bool {
        match &self.sabotage {
            Some(s) => !s.refuse_clients.contains(&client),
            None => true,
        }
    }
}

/// Endorsement collection state of one client.
#[derive(Clone, Debug, Default)]
pub struct ClientState {
    pending: BTreeMap<TxId, Transaction>,
    endorsements: BTreeMap<TxId, BTreeSet<NodeId>>,
    broadcast: BTreeSet<TxId>,
}

impl ClientState {
    pub fn submit(&mut self, tx: Transaction) {
        self.pending.insert(tx.id, tx);
    }

    /// Record one endorsement; returns the endorsed transaction the first time
    /// the distinct-peer count reaches `m_p`. Duplicates are ignored.
    pub fn on_endorsement(&mut self, e: Endorsement, m_p: u32) -> Option<EndorsedTransaction> {
        let tx = *self.pending.get(&e.tx)?;
        let set = self.endorsements.entry(e.tx).or_default();
        set.insert(e.peer);
        if set.len() as u32 >= m_p && self.broadcast.insert(e.tx) {
            let endorsements = set.iter().map(|&peer| Endorsement { tx: e.tx, peer }).collect();
            Some(EndorsedTransaction { transaction: tx, endorsements })
        } else {
            None
        }
    }

    pub fn has_broadcast(&self, tx: TxId) -> bool {
        self.broadcast.contains(&tx)
    }
}

/// Puzzle-competition results: first delivered solution of each puzzle wins.
#[derive(Clone, Debug, Default)]
pub struct GameState {
    pub winners: BTreeMap<PuzzleId, NodeId>,
    pub wins: BTreeMap<NodeId, u64>,
    pub g: u64,
}

impl GameState {
    /// Resolve games for a newly delivered block, in intra-block order.
    /// Returns the puzzles resolved by this block.
    pub fn on_block(&mut self, block: &Block) -> Vec<PuzzleId> {
        let mut resolved = Vec::new();
        for etx in &block.transactions {
            let tx = etx.transaction;
            if let std::collections::btree_map::Entry::Vacant(slot) = self.winners.entry(tx.puzzle) {
                slot.insert(tx.client);
                *self.wins.entry(tx.client).or_insert(0) += 1;
                self.g += 1;
                resolved.push(tx.puzzle);
            }
        }
        resolved
    }
}
