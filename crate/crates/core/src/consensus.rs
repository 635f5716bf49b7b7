//! Proof-of-Validation: hash-driven validator selection, the validation
//! predicate, threshold finalization and fee/reward movement.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::config::SimulationConfig;
use crate::identity::{hash_parts, Address, Identifier, NodeIndex};
use crate::ledger::{Block, Decision, Entity, Signature, Transaction};
use crate::overlay::{Overlay, OverlayError, RoutePath};

/// Upper bound on re-probes for one slot before giving up.
const MAX_PROBES_PER_SLOT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("need {needed} distinct validators besides the owner, only {available} nodes")]
    InsufficientDistinctValidators { needed: usize, available: usize },
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationTicket {
    pub entity_id: Identifier,
    pub slot: u32,
    /// Probe that resolved the validator, after any re-hashing.
    pub target: Identifier,
    pub validator: NodeIndex,
    /// Owner of the vertex that answered the resolving search.
    pub terminal: Address,
    pub decision: Decision,
    pub token: Identifier,
    /// Owner addresses visited while resolving this slot, replies included.
    pub path: RoutePath,
}

pub fn slot_target(entity_id: &Identifier, slot: u32) -> Identifier {
    hash_parts(&[entity_id.as_bytes(), &slot.to_be_bytes()])
}

pub fn decision_token(entity_id: &Identifier, validator: NodeIndex, decision: Decision) -> Identifier {
    hash_parts(&[
        entity_id.as_bytes(),
        &validator.to_be_bytes(),
        &[decision.code()],
    ])
}

impl ValidationTicket {
    pub fn record(&mut self, decision: Decision) {
        self.decision = decision;
        self.token = decision_token(&self.entity_id, self.validator, decision);
    }

    pub fn token_verifies(&self) -> bool {
        self.token == decision_token(&self.entity_id, self.validator, self.decision)
    }

    pub fn signature(&self) -> Signature {
        Signature {
            validator: self.validator,
            decision: self.decision,
            token: self.token,
        }
    }
}

/// Resolves `count` distinct validators for an entity owned by `owner`.
///
/// Slot k probes H(entity ‖ k). A probe that lands on the owner or on an
/// already chosen validator is replaced by its own hash until it lands on a
/// fresh node. Pure in (entity, overlay, count).
pub fn select_validators(
    overlay: &Overlay,
    entity_id: &Identifier,
    owner: NodeIndex,
    count: u32,
) -> Result<Vec<ValidationTicket>, ConsensusError> {
    let available = overlay.controller_count().saturating_sub(1);
    if (count as usize) > available {
        return Err(ConsensusError::InsufficientDistinctValidators {
            needed: count as usize,
            available,
        });
    }
    let owner_addr = Address::for_node(owner);
    let mut chosen = BTreeSet::new();
    let mut tickets = Vec::with_capacity(count as usize);
    for slot in 0..count {
        let mut target = slot_target(entity_id, slot);
        let mut path = RoutePath::default();
        let mut resolved = None;
        for _ in 0..MAX_PROBES_PER_SLOT {
            let sample = overlay.sample_controller(owner_addr, &target)?;
            path.0.extend(sample.path.0.iter().copied());
            // reply to the owner
            path.0.push(owner_addr);
            path.0.dedup();
            if sample.chosen != owner_addr && !chosen.contains(&sample.chosen.node) {
                resolved = Some(sample.chosen);
                break;
            }
            target = target.rehash();
        }
        let validator = resolved.ok_or(ConsensusError::InsufficientDistinctValidators {
            needed: count as usize,
            available,
        })?;
        chosen.insert(validator.node);
        tickets.push(ValidationTicket {
            entity_id: *entity_id,
            slot,
            target,
            validator: validator.node,
            terminal: validator,
            decision: Decision::Silent,
            token: decision_token(entity_id, validator.node, Decision::Silent),
            path,
        });
    }
    Ok(tickets)
}

/// Read access to finalized state that a validator resolves through the DHT.
pub trait LedgerView {
    fn block(&self, id: &Identifier) -> Option<&Block>;
    fn tx_finalized(&self, id: &Identifier) -> bool;
    fn seq_finalized(&self, owner: NodeIndex, seq: u64) -> bool;
    /// Current chain tail under the fork rule.
    fn tail(&self) -> Identifier;
    /// Whether `tx` is included in `block` or any of its ancestors.
    fn tx_in_chain(&self, tx: &Identifier, block: &Identifier) -> bool;
}

pub fn validate_transaction(view: &impl LedgerView, tx: &Transaction) -> Decision {
    let ok = tx.owner != tx.recipient
        && tx.amount == 1
        && view.block(&tx.prev_block_id).is_some()
        && !view.seq_finalized(tx.owner, tx.seq);
    if ok {
        Decision::Approve
    } else {
        Decision::Reject
    }
}

pub fn validate_block(view: &impl LedgerView, block: &Block, cfg: &SimulationConfig) -> Decision {
    let Some(parent) = view.block(&block.prev_block_id) else {
        return Decision::Reject;
    };
    let distinct: BTreeSet<_> = block.tx_ids.iter().collect();
    let size_ok = if block.drain {
        !block.tx_ids.is_empty() && block.tx_ids.len() <= cfg.block_size_min as usize
    } else {
        block.tx_ids.len() >= cfg.block_size_min as usize
    };
    let ok = !block.is_genesis()
        && block.height == parent.height + 1
        && parent.id == view.tail()
        && size_ok
        && distinct.len() == block.tx_ids.len()
        && block
            .tx_ids
            .iter()
            .all(|t| view.tx_finalized(t) && !view.tx_in_chain(t, &parent.id));
    if ok {
        Decision::Approve
    } else {
        Decision::Reject
    }
}

pub fn validate_entity(view: &impl LedgerView, entity: &Entity, cfg: &SimulationConfig) -> Decision {
    match entity {
        Entity::Tx(t) => validate_transaction(view, t),
        Entity::Block(b) => validate_block(view, b, cfg),
    }
}

/// Decision actually sent by a validator. Malicious validators invert.
pub fn respond(honest: Decision, malicious: bool) -> Decision {
    match (honest, malicious) {
        (d, false) => d,
        (Decision::Approve, true) => Decision::Reject,
        (Decision::Reject, true) => Decision::Approve,
        (Decision::Silent, true) => Decision::Silent,
    }
}

/// Per-node balances plus minting history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EconomyLedger {
    pub balances: Vec<i64>,
    pub minted_total: i64,
    pub negative_balance_events: u64,
    initial_supply: i64,
}

impl EconomyLedger {
    pub fn new(nodes: u32, initial_balance: i64) -> Self {
        Self {
            balances: vec![initial_balance; nodes as usize],
            minted_total: 0,
            negative_balance_events: 0,
            initial_supply: initial_balance * i64::from(nodes),
        }
    }

    pub fn pay(&mut self, from: NodeIndex, to: NodeIndex, amount: i64) {
        let payer = &mut self.balances[from as usize];
        let was_negative = *payer < 0;
        *payer -= amount;
        if *payer < 0 && !was_negative {
            self.negative_balance_events += 1;
        }
        self.balances[to as usize] += amount;
    }

    pub fn mint(&mut self, to: NodeIndex, amount: i64) {
        self.balances[to as usize] += amount;
        self.minted_total += amount;
    }

    pub fn total(&self) -> i64 {
        self.balances.iter().sum()
    }

    pub fn check_conservation(&self) -> Result<(), String> {
        let expected = self.initial_supply + self.minted_total;
        if self.total() != expected {
            return Err(format!("balances sum {} != {}", self.total(), expected));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Finalization {
    pub finalized: bool,
    pub approvals: u32,
}

pub fn approvals(tickets: &[ValidationTicket]) -> u32 {
    tickets
        .iter()
        .filter(|t| t.decision == Decision::Approve && t.token_verifies())
        .count() as u32
}

/// Applies the threshold rule. Fees move only when the entity finalizes:
/// the owner pays `validation_fee` to each approver and `routing_fee` to the
/// terminal of each ticket's resolving search; blocks mint `block_reward`.
pub fn finalize(
    entity: &Entity,
    tickets: &[ValidationTicket],
    ledger: &mut EconomyLedger,
    cfg: &SimulationConfig,
) -> Finalization {
    let approvals = approvals(tickets);
    let finalized = approvals >= cfg.signature_threshold;
    if finalized {
        let owner = entity.owner();
        for t in tickets {
            if t.decision == Decision::Approve && t.token_verifies() {
                ledger.pay(owner, t.validator, cfg.validation_fee);
            }
            ledger.pay(owner, t.terminal.node, cfg.routing_fee);
        }
        if matches!(entity, Entity::Block(_)) {
            ledger.mint(owner, cfg.block_reward);
        }
    }
    Finalization {
        finalized,
        approvals,
    }
}
