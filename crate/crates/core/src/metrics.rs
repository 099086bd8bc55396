//! Reception/delivery bookkeeping, the client-fairness score, the six
//! order-fairness violation counters and the analytic endorsement
//! probability under peer sabotage.

use std::collections::BTreeMap;

use num_traits::Float;
use thiserror::Error;

use crate::engine::{NodeId, Tick};
use crate::fabric::{Ledger, PuzzleId, Transaction, TxId};

/// Per-node ordered reception record. Peers log raw transactions, orderers
/// log endorsed transactions; entries are strictly ordered by (tick, engine
/// sequence number).
#[derive(Clone, Debug, Default)]
pub struct ReceptionLog {
    pub entries: BTreeMap<NodeId, Vec<(TxId, Tick, u64)>>,
}

impl ReceptionLog {
    pub fn record(&mut self, node: NodeId, tx: TxId, at: Tick, seq: u64) {
        self.entries.entry(node).or_default().push((tx, at, seq));
    }

    /// Whether `node` has already logged `tx` (orderer logs are deduplicated).
    pub fn has(&self, node: NodeId, tx: TxId) -> bool {
        self.entries.get(&node).map(|v| v.iter().any(|&(t, _, _)| t == tx)).unwrap_or(false)
    }

    fn positions(&self, node: NodeId) -> BTreeMap<TxId, usize> {
        self.entries
            .get(&node)
            .map(|v| v.iter().enumerate().map(|(i, &(tx, _, _))| (tx, i)).collect())
            .unwrap_or_default()
    }

    /// `node` received `t` before `t2`. A node that received only `t` counts
    /// as t-first; a node that received neither, or only `t2`, does not.
    fn received_before(pos: &BTreeMap<TxId, usize>, t: TxId, t2: TxId) -> bool {
        match (pos.get(&t), pos.get(&t2)) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

/// tx-id -> (block height, intra-block position) over the delivered prefix.
#[derive(Clone, Debug, Default)]
pub struct DeliveryIndex {
    map: BTreeMap<TxId, (u64, u32)>,
}

impl DeliveryIndex {
    pub fn from_ledger(ledger: &Ledger) -> Self {
        let mut map = BTreeMap::new();
        for block in &ledger.blocks {
            for (i, etx) in block.transactions.iter().enumerate() {
                map.entry(etx.transaction.id).or_insert((block.height, i as u32));
            }
        }
        DeliveryIndex { map }
    }

    pub fn get(&self, tx: TxId) -> Option<(u64, u32)> {
        self.map.get(&tx).copied()
    }
}

/// Two solutions to the same puzzle from different clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompetingPair {
    pub puzzle: PuzzleId,
    pub t: Transaction,
    pub t_prime: Transaction,
}

/// All unordered competing pairs among the given transactions.
pub fn competing_pairs(txs: &[Transaction]) -> Vec<CompetingPair> {
    let mut by_puzzle: BTreeMap<PuzzleId, Vec<Transaction>> = BTreeMap::new();
    for &tx in txs {
        by_puzzle.entry(tx.puzzle).or_default().push(tx);
    }
    let mut pairs = Vec::new();
    for (puzzle, group) in by_puzzle {
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                if group[i].client != group[j].client {
                    pairs.push(CompetingPair { puzzle, t: group[i], t_prime: group[j] });
                }
            }
        }
    }
    pairs
}

fn position_maps(log: &ReceptionLog, nodes: &[NodeId]) -> Vec<BTreeMap<TxId, usize>> {
    nodes.iter().map(|&n| log.positions(n)).collect()
}

fn majority_of(maps: &[BTreeMap<TxId, usize>], t: TxId, t2: TxId) -> bool {
    let count = maps.iter().filter(|pos| ReceptionLog::received_before(pos, t, t2)).count();
    2 * count > maps.len()
}

/// Strictly more than half of the role's full node set received `t` before `t2`.
pub fn precedes_majority(log: &ReceptionLog, role_nodes: &[NodeId], t: TxId, t2: TxId) -> bool {
    majority_of(&position_maps(log, role_nodes), t, t2)
}

// Orients a pair by majority reception; None when neither direction has a
// strict majority.
fn orient_majority(maps: &[BTreeMap<TxId, usize>], pair: &CompetingPair) -> Option<(TxId, TxId)> {
    let (a, b) = (pair.t.id, pair.t_prime.id);
    if majority_of(maps, a, b) {
        Some((a, b))
    } else if majority_of(maps, b, a) {
        Some((b, a))
    } else {
        None
    }
}

// A delivery-side violation given that `first` must not come after `second`:
// `second` delivered while `first` is undelivered, or ordered after it under
// the given comparison key.
fn delivered_out_of_order<K: Ord>(
    delivery: &DeliveryIndex,
    first: TxId,
    second: TxId,
    key: impl Fn((u64, u32)) -> K,
) -> bool {
    match (delivery.get(first), delivery.get(second)) {
        (_, None) => false,
        (None, Some(_)) => true,
        (Some(f), Some(s)) => key(f) > key(s),
    }
}

/// Receive-order fairness: the majority-first transaction must be delivered
/// first (full (height, position) order).
pub fn count_receive_order_violations(
    log: &ReceptionLog,
    role_nodes: &[NodeId],
    pairs: &[CompetingPair],
    delivery: &DeliveryIndex,
) -> u64 {
    let maps = position_maps(log, role_nodes);
    pairs
        .iter()
        .filter_map(|p| orient_majority(&maps, p))
        .filter(|&(first, second)| delivered_out_of_order(delivery, first, second, |k| k))
        .count() as u64
}

/// Block-order fairness: the majority-first transaction must not land in a
/// strictly later block; intra-block order is unconstrained.
pub fn count_block_order_violations(
    log: &ReceptionLog,
    role_nodes: &[NodeId],
    pairs: &[CompetingPair],
    delivery: &DeliveryIndex,
) -> u64 {
    let maps = position_maps(log, role_nodes);
    pairs
        .iter()
        .filter_map(|p| orient_majority(&maps, p))
        .filter(|&(first, second)| delivered_out_of_order(delivery, first, second, |(h, _)| h))
        .count() as u64
}

/// Differential-order fairness: when the honest-node precedence margin
/// exceeds 2f, delivery must respect it.
pub fn count_differential_order_violations(
    log: &ReceptionLog,
    honest_nodes: &[NodeId],
    pairs: &[CompetingPair],
    delivery: &DeliveryIndex,
    f: u32,
) -> u64 {
    let maps = position_maps(log, honest_nodes);
    let mut violations = 0;
    for pair in pairs {
        let (a, b) = (pair.t.id, pair.t_prime.id);
        let mut a_first = 0i64;
        let mut b_first = 0i64;
        for pos in &maps {
            if ReceptionLog::received_before(pos, a, b) {
                a_first += 1;
            } else if ReceptionLog::received_before(pos, b, a) {
                b_first += 1;
            }
        }
        let d = a_first - b_first;
        let oriented = if d > 2 * f as i64 {
            Some((a, b))
        } else if -d > 2 * f as i64 {
            Some((b, a))
        } else {
            None
        };
        if let Some((first, second)) = oriented {
            if delivered_out_of_order(delivery, first, second, |k| k) {
                violations += 1;
            }
        }
    }
    violations
}

/// The six order-fairness counters of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ViolationCounters {
    pub receive_peers: u64,
    pub block_peers: u64,
    pub differential_peers: u64,
    pub receive_orderers: u64,
    pub block_orderers: u64,
    pub differential_orderers: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("probability X = {0} out of [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("sabotaged peers b_p = {b_p} exceeds n_p = {n_p}")]
    TooManySabotaged { b_p: u32, n_p: u32 },
}

/// Client-fairness score wins/g * n_c; undefined while no game has resolved.
pub fn compute_score<F: Float>(wins: u64, g: u64, n_c: u32) -> Option<F> {
    if g == 0 {
        return None;
    }
    Some(F::from(wins).unwrap() / F::from(g).unwrap() * F::from(n_c).unwrap())
}

fn binomial_coefficient<F: Float>(n: u32, k: u32) -> F {
    let k = k.min(n - k);
    let mut c = F::one();
    for i in 1..=k {
        c = c * F::from(n - k + i).unwrap() / F::from(i).unwrap();
    }
    c
}

/// Probability of gathering at least `m_p` endorsements from distinct honest
/// peers before the reference timestamp, when each of the `n_p - b_p` honest
/// peers endorses in time independently with probability `x`. Exact binomial
/// tail; the sum is empty (zero) when fewer than `m_p` honest peers remain.
pub fn endorsement_success_probability<F: Float>(
    n_p: u32,
    m_p: u32,
    b_p: u32,
    x: F,
) -> Result<F, MetricsError> {
    if x < F::zero() || x > F::one() {
        return Err(MetricsError::ProbabilityOutOfRange(x.to_f64().unwrap_or(f64::NAN)));
    }
    if b_p > n_p {
        return Err(MetricsError::TooManySabotaged { b_p, n_p });
    }
    let n = n_p - b_p;
    if n < m_p {
        return Ok(F::zero());
    }
    let mut y = F::zero();
    for k in m_p..=n {
        y = y + binomial_coefficient::<F>(n, k) * x.powi(k as i32) * (F::one() - x).powi((n - k) as i32);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{Block, EndorsedTransaction};

    fn tx(id: TxId, client: u32, puzzle: PuzzleId) -> Transaction {
        Transaction { id, client: NodeId::Client(client), puzzle, created_at: 0 }
    }

    fn ledger_of(blocks: Vec<Vec<Transaction>>) -> Ledger {
        let mut ledger = Ledger::default();
        for (h, txs) in blocks.into_iter().enumerate() {
            ledger.append(Block {
                height: h as u64 + 1,
                transactions: txs
                    .into_iter()
                    .map(|t| EndorsedTransaction { transaction: t, endorsements: vec![] })
                    .collect(),
                proposer: NodeId::Orderer(0),
            });
        }
        ledger
    }

    #[test]
    fn majority_with_three_peers() {
        let nodes = [NodeId::Peer(0), NodeId::Peer(1), NodeId::Peer(2)];
        let mut log = ReceptionLog::default();
        log.record(nodes[0], 1, 0, 0);
        log.record(nodes[0], 2, 1, 1);
        log.record(nodes[1], 1, 0, 2);
        log.record(nodes[1], 2, 1, 3);
        log.record(nodes[2], 2, 0, 4);
        log.record(nodes[2], 1, 1, 5);
        assert!(precedes_majority(&log, &nodes, 1, 2));
        assert!(!precedes_majority(&log, &nodes, 2, 1));
    }

    #[test]
    fn even_split_is_no_majority() {
        let nodes: Vec<NodeId> = (0..4).map(NodeId::Peer).collect();
        let mut log = ReceptionLog::default();
        for i in 0..2 {
            log.record(nodes[i], 1, 0, i as u64);
            log.record(nodes[i], 2, 1, 10 + i as u64);
        }
        for i in 2..4 {
            log.record(nodes[i], 2, 0, 20 + i as u64);
            log.record(nodes[i], 1, 1, 30 + i as u64);
        }
        assert!(!precedes_majority(&log, &nodes, 1, 2));
        assert!(!precedes_majority(&log, &nodes, 2, 1));
    }

    #[test]
    fn lone_reception_counts_toward_that_tx() {
        let nodes = [NodeId::Peer(0)];
        let mut log = ReceptionLog::default();
        log.record(nodes[0], 1, 0, 0);
        assert!(precedes_majority(&log, &nodes, 1, 2));
        assert!(!precedes_majority(&log, &nodes, 2, 1));
    }

    // majority says t(1) first in all receive/block tests below
    fn t_first_log(nodes: &[NodeId]) -> ReceptionLog {
        let mut log = ReceptionLog::default();
        for (i, &n) in nodes.iter().enumerate() {
            log.record(n, 1, 0, 2 * i as u64);
            log.record(n, 2, 1, 2 * i as u64 + 1);
        }
        log
    }

    #[test]
    fn receive_order_violations() {
        let nodes: Vec<NodeId> = (0..3).map(NodeId::Peer).collect();
        let log = t_first_log(&nodes);
        let pairs = competing_pairs(&[tx(1, 0, 7), tx(2, 1, 7)]);
        // t' delivered before t at positions (3,0) and (3,1)
        let delivery = DeliveryIndex::from_ledger(&ledger_of(vec![vec![], vec![], vec![tx(2, 1, 7), tx(1, 0, 7)]]));
        assert_eq!(count_receive_order_violations(&log, &nodes, &pairs, &delivery), 1);
        // t delivered, t' never delivered: fine
        let delivery = DeliveryIndex::from_ledger(&ledger_of(vec![vec![tx(1, 0, 7)]]));
        assert_eq!(count_receive_order_violations(&log, &nodes, &pairs, &delivery), 0);
        // t undelivered while t' delivered: censorship registers
        let delivery = DeliveryIndex::from_ledger(&ledger_of(vec![vec![tx(2, 1, 7)]]));
        assert_eq!(count_receive_order_violations(&log, &nodes, &pairs, &delivery), 1);
    }

    #[test]
    fn block_order_ignores_intra_block_order() {
        let nodes: Vec<NodeId> = (0..3).map(NodeId::Peer).collect();
        let log = t_first_log(&nodes);
        let pairs = competing_pairs(&[tx(1, 0, 7), tx(2, 1, 7)]);
        // same block, t after t' within it: no block-order violation
        let same = DeliveryIndex::from_ledger(&ledger_of(vec![vec![tx(2, 1, 7), tx(1, 0, 7)]]));
        assert_eq!(count_block_order_violations(&log, &nodes, &pairs, &same), 0);
        assert_eq!(count_receive_order_violations(&log, &nodes, &pairs, &same), 1);
        // t in a strictly later block
        let later = DeliveryIndex::from_ledger(&ledger_of(vec![vec![tx(2, 1, 7)], vec![tx(1, 0, 7)]]));
        assert_eq!(count_block_order_violations(&log, &nodes, &pairs, &later), 1);
    }

    #[test]
    fn differential_margin_is_strict() {
        let nodes: Vec<NodeId> = (0..5).map(NodeId::Orderer).collect();
        // 4 nodes see t first, 0 see t' first (one node sees neither): d = 4
        let mut log = ReceptionLog::default();
        for (i, &n) in nodes.iter().take(4).enumerate() {
            log.record(n, 1, 0, 2 * i as u64);
            log.record(n, 2, 1, 2 * i as u64 + 1);
        }
        let pairs = competing_pairs(&[tx(1, 0, 7), tx(2, 1, 7)]);
        let delivery = DeliveryIndex::from_ledger(&ledger_of(vec![vec![tx(2, 1, 7), tx(1, 0, 7)]]));
        // f = 0: any positive margin binds
        assert_eq!(count_differential_order_violations(&log, &nodes, &pairs, &delivery, 0), 1);
        // f = 2: 4 > 4 is false
        assert_eq!(count_differential_order_violations(&log, &nodes, &pairs, &delivery, 2), 0);
    }

    #[test]
    fn binomial_tail_examples() {
        // 9 honest < 10 required: empty sum
        assert_eq!(endorsement_success_probability::<f64>(16, 10, 7, 0.3).unwrap(), 0.0);
        assert_eq!(endorsement_success_probability::<f64>(16, 10, 0, 1.0).unwrap(), 1.0);
        let y = endorsement_success_probability::<f64>(16, 10, 0, 0.5).unwrap();
        assert!((y - 14893.0 / 65536.0).abs() < 1e-12, "y = {y}");
        assert!((y - 0.2272).abs() < 1e-4);
        // monotone in b_p
        let y3 = endorsement_success_probability::<f64>(16, 10, 3, 0.7).unwrap();
        let y1 = endorsement_success_probability::<f64>(16, 10, 1, 0.7).unwrap();
        assert!(y3 < y1);
        assert!(endorsement_success_probability::<f64>(16, 10, 0, 1.5).is_err());
    }

    #[test]
    fn score_examples() {
        assert_eq!(compute_score::<f64>(500, 1500, 3), Some(1.0));
        assert_eq!(compute_score::<f64>(0, 2000, 3), Some(0.0));
        assert_eq!(compute_score::<f64>(0, 0, 3), None);
        let s: f32 = compute_score(500, 1500, 3).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
