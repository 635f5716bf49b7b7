//! Registry of finalized entities as resolvable through the DHT.

use std::collections::{HashMap, HashSet};

use crate::consensus::LedgerView;
use crate::identity::{Identifier, NodeIndex};
use crate::ledger::{Block, Transaction};
use crate::node::prefers;

#[derive(Debug, Clone)]
struct BlockEntry {
    block: Block,
    /// Transactions in this block and all its ancestors.
    cumulative_txs: u64,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    genesis: Identifier,
    blocks: HashMap<Identifier, BlockEntry>,
    tail: (Identifier, u64),
    finalized_txs: HashMap<Identifier, u64>,
    finalized_seqs: HashSet<(NodeIndex, u64)>,
    containing: HashMap<Identifier, Vec<Identifier>>,
}

impl ChainState {
    pub fn new(genesis: Block) -> Self {
        let id = genesis.id;
        let mut blocks = HashMap::new();
        blocks.insert(
            id,
            BlockEntry {
                block: genesis,
                cumulative_txs: 0,
            },
        );
        Self {
            genesis: id,
            blocks,
            tail: (id, 0),
            finalized_txs: HashMap::new(),
            finalized_seqs: HashSet::new(),
            containing: HashMap::new(),
        }
    }

    pub fn genesis(&self) -> Identifier {
        self.genesis
    }

    pub fn tail_entry(&self) -> (Identifier, u64) {
        self.tail
    }

    pub fn finalized_tx_count(&self) -> u64 {
        self.finalized_txs.len() as u64
    }

    pub fn finalized_block_count(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tx_finalized_at(&self, id: &Identifier) -> Option<u64> {
        self.finalized_txs.get(id).copied()
    }

    pub fn register_tx(&mut self, tx: &Transaction, finalized_at: u64) {
        self.finalized_txs.insert(tx.id, finalized_at);
        self.finalized_seqs.insert((tx.owner, tx.seq));
    }

    /// Adds a finalized block. Returns true if it became the chain tail.
    pub fn register_block(&mut self, block: &Block) -> bool {
        let parent_txs = self
            .blocks
            .get(&block.prev_block_id)
            .map(|p| p.cumulative_txs)
            .unwrap_or(0);
        for t in &block.tx_ids {
            self.containing.entry(*t).or_default().push(block.id);
        }
        self.blocks.insert(
            block.id,
            BlockEntry {
                block: block.clone(),
                cumulative_txs: parent_txs + block.tx_ids.len() as u64,
            },
        );
        if prefers((block.id, block.height), self.tail) {
            self.tail = (block.id, block.height);
            true
        } else {
            false
        }
    }

    /// Whether `ancestor` is `block` or lies on its parent path.
    pub fn is_ancestor(&self, ancestor: &Identifier, block: &Identifier) -> bool {
        let Some(target) = self.blocks.get(ancestor) else {
            return false;
        };
        let mut cur = self.blocks.get(block);
        while let Some(e) = cur {
            if e.block.height < target.block.height {
                return false;
            }
            if e.block.id == *ancestor {
                return true;
            }
            if e.block.height == 0 {
                return false;
            }
            cur = self.blocks.get(&e.block.prev_block_id);
        }
        false
    }

    /// Transactions in the chain ending at `tail`.
    pub fn chain_txs(&self, tail: &Identifier) -> HashSet<Identifier> {
        let mut out = HashSet::new();
        let mut cur = self.blocks.get(tail);
        while let Some(e) = cur {
            out.extend(e.block.tx_ids.iter().copied());
            if e.block.height == 0 {
                break;
            }
            cur = self.blocks.get(&e.block.prev_block_id);
        }
        out
    }

    /// Blocks from the tail down to genesis.
    pub fn canonical_chain(&self) -> Vec<&Block> {
        let mut out = Vec::new();
        let mut cur = self.blocks.get(&self.tail.0);
        while let Some(e) = cur {
            out.push(&e.block);
            if e.block.height == 0 {
                break;
            }
            cur = self.blocks.get(&e.block.prev_block_id);
        }
        out
    }

    /// Finalized transactions not yet included in the canonical chain.
    pub fn unblocked_txs(&self) -> u64 {
        self.finalized_tx_count() - self.blocks[&self.tail.0].cumulative_txs
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let chain = self.canonical_chain();
        if chain.len() as u64 != self.tail.1 + 1 {
            return Err(format!(
                "tail at height {} reaches genesis in {} steps",
                self.tail.1,
                chain.len() - 1
            ));
        }
        if chain.last().map(|b| b.id) != Some(self.genesis) {
            return Err("canonical chain does not end at genesis".into());
        }
        let mut seen = HashSet::new();
        for b in &chain {
            for t in &b.tx_ids {
                if !seen.insert(*t) {
                    return Err(format!("transaction {t} included twice in the chain"));
                }
                if !self.finalized_txs.contains_key(t) {
                    return Err(format!("chain includes unfinalized transaction {t}"));
                }
            }
        }
        if seen.len() as u64 != self.blocks[&self.tail.0].cumulative_txs {
            return Err("cumulative transaction count drifted".into());
        }
        Ok(())
    }
}

impl LedgerView for ChainState {
    fn block(&self, id: &Identifier) -> Option<&Block> {
        self.blocks.get(id).map(|e| &e.block)
    }

    fn tx_finalized(&self, id: &Identifier) -> bool {
        self.finalized_txs.contains_key(id)
    }

    fn seq_finalized(&self, owner: NodeIndex, seq: u64) -> bool {
        self.finalized_seqs.contains(&(owner, seq))
    }

    fn tail(&self) -> Identifier {
        self.tail.0
    }

    fn tx_in_chain(&self, tx: &Identifier, block: &Identifier) -> bool {
        self.containing
            .get(tx)
            .is_some_and(|bs| bs.iter().any(|b| self.is_ancestor(b, block)))
    }
}
