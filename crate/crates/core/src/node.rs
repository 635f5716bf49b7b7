//! Controller-layer state of one simulated node.
//!
//! The engine drives these handlers; everything here is local bookkeeping:
//! which transaction to issue next, the pool of finalized transactions not
//! yet in the node's view of the chain, and block-assembly state.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::identity::{derive_node_identifier, Address, Identifier, NodeIndex, NodeKey};
use crate::ledger::{Block, ReplicaStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Honest,
    Malicious,
}

/// Block-assembly state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assembly {
    Idle,
    /// Backoff timer pending; the attempt it leads to keeps `retries_left`.
    Waiting { retries_left: u8 },
    /// A block is under validation; `retries_left` more attempts after it.
    InFlight { retries_left: u8 },
}

/// What the transaction timer should issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxIssue {
    /// First issue of a fresh sequence number.
    Fresh(u64),
    /// Honest re-issue of a sequence number whose earlier attempt failed.
    Retry(u64),
}

impl TxIssue {
    pub fn seq(self) -> u64 {
        match self {
            TxIssue::Fresh(s) | TxIssue::Retry(s) => s,
        }
    }
}

/// Fork rule: greater height wins, ties go to the smaller identifier.
pub fn prefers(candidate: (Identifier, u64), current: (Identifier, u64)) -> bool {
    candidate.1 > current.1 || (candidate.1 == current.1 && candidate.0 < current.0)
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub index: NodeIndex,
    pub address: Address,
    pub key: NodeKey,
    pub identifier: Identifier,
    pub role: Role,
    /// Fresh sequence numbers issued so far.
    pub tx_generated: u32,
    pub retry_queue: VecDeque<u64>,
    pub open_tx_sessions: u32,
    pub last_tx_at: Option<u64>,
    pub timer_armed: bool,
    /// Finalized transactions this node has heard of, with finalization time.
    pub known_txs: BTreeMap<Identifier, u64>,
    /// Known finalized transactions outside the node's chain view, oldest first.
    pub pool: BTreeSet<(u64, Identifier)>,
    pub known_tail: (Identifier, u64),
    pub assembly: Assembly,
    pub store: ReplicaStore,
}

impl NodeState {
    pub fn new(index: NodeIndex, role: Role, genesis: &Block) -> Self {
        let key = NodeKey::for_index(index);
        Self {
            index,
            address: Address::for_node(index),
            identifier: derive_node_identifier(&key),
            key,
            role,
            tx_generated: 0,
            retry_queue: VecDeque::new(),
            open_tx_sessions: 0,
            last_tx_at: None,
            timer_armed: false,
            known_txs: BTreeMap::new(),
            pool: BTreeSet::new(),
            known_tail: (genesis.id, 0),
            assembly: Assembly::Idle,
            store: ReplicaStore::new(),
        }
    }

    pub fn is_malicious(&self) -> bool {
        self.role == Role::Malicious
    }

    /// Next transaction to issue, if any. Retries go first.
    pub fn next_issue(&mut self, transactions_per_node: u32) -> Option<TxIssue> {
        if let Some(seq) = self.retry_queue.pop_front() {
            return Some(TxIssue::Retry(seq));
        }
        if self.tx_generated < transactions_per_node {
            let seq = u64::from(self.tx_generated);
            self.tx_generated += 1;
            return Some(TxIssue::Fresh(seq));
        }
        None
    }

    pub fn has_pending_issues(&self, transactions_per_node: u32) -> bool {
        !self.retry_queue.is_empty() || self.tx_generated < transactions_per_node
    }

    pub fn generation_complete(&self, transactions_per_node: u32) -> bool {
        !self.has_pending_issues(transactions_per_node) && self.open_tx_sessions == 0
    }

    /// Records a finalized transaction. `in_chain` tells whether it is
    /// already included in this node's chain view.
    pub fn learn_tx(&mut self, id: Identifier, finalized_at: u64, in_chain: bool) {
        if self.known_txs.insert(id, finalized_at).is_none() && !in_chain {
            self.pool.insert((finalized_at, id));
        }
    }

    pub fn evict(&mut self, tx_ids: &[Identifier]) {
        for id in tx_ids {
            if let Some(t) = self.known_txs.get(id) {
                self.pool.remove(&(*t, *id));
            }
        }
    }

    /// Rebuilds the pool from scratch after a switch to another branch.
    pub fn rebuild_pool(&mut self, in_chain: impl Fn(&Identifier) -> bool) {
        self.pool = self
            .known_txs
            .iter()
            .filter(|(id, _)| !in_chain(id))
            .map(|(id, t)| (*t, *id))
            .collect();
    }

    /// Oldest `n` pool transactions by finalization time, ties by id.
    pub fn oldest(&self, n: usize) -> Vec<Identifier> {
        self.pool.iter().take(n).map(|(_, id)| *id).collect()
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node() -> NodeState {
        NodeState::new(0, Role::Honest, &Block::genesis(0))
    }

    #[test]
    fn issues_stop_at_quota() {
        let mut n = node();
        assert_eq!(n.next_issue(2), Some(TxIssue::Fresh(0)));
        assert_eq!(n.next_issue(2), Some(TxIssue::Fresh(1)));
        assert_eq!(n.next_issue(2), None);
        assert_eq!(n.tx_generated, 2);
        n.retry_queue.push_back(1);
        assert!(n.has_pending_issues(2));
        assert_eq!(n.next_issue(2), Some(TxIssue::Retry(1)));
        assert!(n.generation_complete(2));
    }

    #[test]
    fn pool_is_oldest_first() {
        let mut n = node();
        n.learn_tx(Identifier([3; 32]), 30, false);
        n.learn_tx(Identifier([1; 32]), 50, false);
        n.learn_tx(Identifier([2; 32]), 30, false);
        n.learn_tx(Identifier([9; 32]), 10, true);
        assert_eq!(n.pool_len(), 3);
        assert_eq!(
            n.oldest(2),
            vec![Identifier([2; 32]), Identifier([3; 32])]
        );
        n.evict(&[Identifier([2; 32])]);
        assert_eq!(n.oldest(1), vec![Identifier([3; 32])]);
        n.rebuild_pool(|id| *id == Identifier([1; 32]));
        assert_eq!(n.pool_len(), 3);
    }

    #[test]
    fn fork_rule() {
        let a = (Identifier([1; 32]), 5);
        let b = (Identifier([2; 32]), 5);
        assert!(prefers(a, b));
        assert!(!prefers(b, a));
        assert!(prefers((Identifier([9; 32]), 6), a));
        assert!(!prefers(a, a));
    }
}
