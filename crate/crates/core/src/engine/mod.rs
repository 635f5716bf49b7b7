//! Deterministic virtual-clock driver: bootstraps nodes and the overlay,
//! pops events in (fire_time, seq) order, runs the per-node handlers and
//! collects one metric row per finalized entity.

mod chain;
pub mod metrics;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use chain::ChainState;
pub use metrics::{csv_bytes, summarize, write_csv, EventType, CSV_HEADER, MetricRecord, SimulationReport};

use crate::config::{ConfigError, SimulationConfig};
use crate::consensus::{
    finalize, respond, select_validators, validate_entity, ConsensusError, EconomyLedger, LedgerView,
    ValidationTicket,
};
use crate::identity::{hash_parts, Address, Identifier, NodeIndex};
use crate::ledger::{Block, Decision, Entity, Transaction};
use crate::node::{Assembly, NodeState, Role, TxIssue};
use crate::overlay::{Overlay, OverlayError, VertexKind};
use crate::rng::SeedTree;
use crate::simnet::{Envelope, LatencyMatrix, LatencySource, MessageTag, Network, SimnetError};

/// Upper bound of the block contention backoff, exclusive.
pub const BLOCK_BACKOFF_MS: u64 = 500;
pub const MAX_BLOCK_RETRIES: u8 = 3;
pub const REPLICATION_FACTOR: u32 = 3;
/// Payload of an overlay hop or announcement link: one identifier plus header.
pub const ROUTE_BYTES: u64 = 40;
/// Validator id, decision code and token.
pub const REPLY_BYTES: u64 = 69;
const MAX_REPLICA_PROBES: u32 = 10_000;
const OWNER_CORRUPTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Simnet(#[from] SimnetError),
    #[error("simulation stalled at {at_ms} ms: {reason}")]
    Stalled { at_ms: u64, reason: String },
    #[error("invariant violated at {at_ms} ms: {what}")]
    Invariant { at_ms: u64, what: String },
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub seed: u64,
    pub latency: LatencySource,
    /// Run every structural check at the first quiescent point after this
    /// many events.
    pub check_invariants_every: Option<u64>,
    pub event_budget: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            latency: LatencySource::default(),
            check_invariants_every: None,
            event_budget: 50_000_000,
        }
    }
}

impl SimOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Message {
    Route { chain: u64 },
    ValidateRequest { entity: Identifier, slot: u32 },
    ValidateReply { entity: Identifier, slot: u32, decision: Decision },
    Replicate { entity: Identifier },
    Notify { entity: Identifier },
}

#[derive(Debug, Clone, Copy)]
enum Continuation {
    SlotResolved { entity: Identifier, slot: u32 },
    ReplicaPlaced { entity: Identifier, owner: NodeIndex, holder: NodeIndex },
    Done,
}

#[derive(Debug)]
struct RouteChain {
    path: Vec<Address>,
    at: usize,
    tag: MessageTag,
    context: Option<Identifier>,
    then: Continuation,
}

#[derive(Debug)]
enum EventKind {
    TxTimer(NodeIndex),
    BlockBackoff(NodeIndex),
    Deliver(Envelope<Message>),
    Timeout(Identifier),
}

#[derive(Debug)]
struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so BinaryHeap pops the earliest
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug)]
struct Session {
    entity: Entity,
    tickets: Vec<ValidationTicket>,
    requested: u32,
    replied: Vec<bool>,
    replies: u32,
}

/// An entity that failed to reach the signature threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub entity_id: Identifier,
    pub owner: NodeIndex,
    pub event_type: EventType,
    /// Transaction sequence number; `None` for blocks.
    pub seq: Option<u64>,
    pub created_at: u64,
    pub rejected_at: u64,
    pub approvals: u32,
}

pub struct Simulation {
    cfg: SimulationConfig,
    opts: SimOptions,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Event>,
    net: Network,
    overlay: Overlay,
    chain: ChainState,
    economy: EconomyLedger,
    nodes: Vec<NodeState>,
    chains: HashMap<u64, RouteChain>,
    next_chain: u64,
    sessions: HashMap<Identifier, Session>,
    finalized: HashMap<Identifier, Entity>,
    records: Vec<MetricRecord>,
    rejections: Vec<Rejection>,
    timeout_ms: u64,
    drain_mode: bool,
    corrupt_probability: f64,
    recipient_rng: Vec<ChaCha8Rng>,
    backoff_rng: Vec<ChaCha8Rng>,
    corrupt_rng: Vec<ChaCha8Rng>,
    events_processed: u64,
    since_check: u64,
    termination_time: Option<u64>,
    finished: bool,
    wall_clock_ms: u128,
}

/// Runs a full simulation and returns the finished state.
pub fn run_simulation(cfg: &SimulationConfig, opts: SimOptions) -> Result<Simulation, SimError> {
    let mut sim = Simulation::new(cfg, opts)?;
    sim.run()?;
    Ok(sim)
}

impl Simulation {
    pub fn new(cfg: &SimulationConfig, opts: SimOptions) -> Result<Self, SimError> {
        let mut sim = Self::bootstrap(cfg, opts)?;
        sim.schedule_first_timers();
        Ok(sim)
    }

    /// Steps 1 to 5 of the pipeline: nodes, roles, latencies, controller
    /// vertices and genesis. No transaction timer is armed.
    fn bootstrap(cfg: &SimulationConfig, opts: SimOptions) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = cfg.nodes;
        let seeds = SeedTree::new(opts.seed);
        let genesis = Block::genesis(opts.seed);

        let mut order: Vec<NodeIndex> = (0..n).collect();
        order.shuffle(&mut seeds.stream("malicious"));
        let malicious: HashSet<NodeIndex> =
            order[..cfg.malicious_count() as usize].iter().copied().collect();
        let nodes: Vec<NodeState> = (0..n)
            .map(|i| {
                let role = if malicious.contains(&i) {
                    Role::Malicious
                } else {
                    Role::Honest
                };
                NodeState::new(i, role, &genesis)
            })
            .collect();

        let matrix = LatencyMatrix::build(n as usize, &mut seeds.stream("latency"), &opts.latency);
        let timeout_ms = 10 * matrix.percentile(99.0);

        let expected_objects = 2 * n as usize * cfg.transactions_per_node as usize + 1;
        let mut sim = Self {
            cfg: cfg.clone(),
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            net: Network::new(matrix),
            overlay: Overlay::new(n as usize, expected_objects),
            chain: ChainState::new(genesis.clone()),
            economy: EconomyLedger::new(n, cfg.initial_balance),
            nodes,
            chains: HashMap::new(),
            next_chain: 0,
            sessions: HashMap::new(),
            finalized: HashMap::new(),
            records: Vec::new(),
            rejections: Vec::new(),
            timeout_ms,
            drain_mode: false,
            corrupt_probability: OWNER_CORRUPTION,
            recipient_rng: (0..n).map(|i| seeds.node_stream("recipient", i)).collect(),
            backoff_rng: (0..n).map(|i| seeds.node_stream("backoff", i)).collect(),
            corrupt_rng: (0..n).map(|i| seeds.node_stream("corrupt", i)).collect(),
            events_processed: 0,
            since_check: 0,
            termination_time: None,
            finished: false,
            wall_clock_ms: 0,
            opts,
        };

        for i in 0..n {
            let id = sim.nodes[i as usize].identifier;
            let ann = sim
                .overlay
                .announce(id, Address::for_node(i), VertexKind::Controller)?;
            sim.start_route(ann.path.0, MessageTag::Announce, None, Continuation::Done)?;
        }
        sim.nodes[0]
            .store
            .store(Entity::Block(genesis.clone()))
            .map_err(|e| sim.invariant(e.to_string()))?;
        sim.overlay
            .announce(genesis.id, Address::for_node(0), VertexKind::DataObject)?;
        Ok(sim)
    }

    fn schedule_first_timers(&mut self) {
        let delay = self.cfg.inter_tx_delay_ms();
        let mut rng = SeedTree::new(self.opts.seed).stream("timer-offset");
        for i in 0..self.cfg.nodes {
            let offset = if delay == 0 { 0 } else { rng.gen_range(0..delay) };
            self.nodes[i as usize].timer_armed = true;
            self.push(offset, EventKind::TxTimer(i));
        }
    }

    // ---- accessors ----

    pub fn config(&self) -> &SimulationConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.opts.seed
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn economy(&self) -> &EconomyLedger {
        &self.economy
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn overlay(&self) -> &Overlay {
        &self.overlay
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn latency(&self) -> &LatencyMatrix {
        self.net.latency()
    }

    pub fn timeout_ms(&self) -> u64 {
        self.timeout_ms
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.rejections
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    /// First quiescent instant at which the termination condition held.
    pub fn termination_time(&self) -> Option<u64> {
        self.termination_time
    }

    pub fn csv_bytes(&self) -> Vec<u8> {
        csv_bytes(&self.records)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), metrics::OutputUnwritable> {
        write_csv(&self.records, out)
    }

    pub fn report(&self) -> SimulationReport {
        SimulationReport {
            canonical_height: self.chain.tail_entry().1,
            rejected_entities: self.rejections.len() as u64,
            total_messages: self.net.total_messages(),
            total_bytes: self.net.total_bytes(),
            total_minted: self.economy.minted_total,
            negative_balance_events: self.economy.negative_balance_events,
            per_node_storage: self.nodes.iter().map(|n| n.store.len()).collect(),
            virtual_end_ms: self.now,
            events_processed: self.events_processed,
            wall_clock_ms: self.wall_clock_ms,
            ..summarize(&self.records)
        }
    }

    /// Every node has issued its quota and closed its sessions, every
    /// finalized transaction sits in the canonical chain, and nothing that
    /// could still produce an entity is under validation.
    pub fn check_termination(&self) -> bool {
        let tpn = self.cfg.transactions_per_node;
        self.nodes
            .iter()
            .all(|n| n.tx_generated == tpn && n.generation_complete(tpn))
            && self.chain.unblocked_txs() == 0
            && self.sessions.is_empty()
    }

    // ---- run loop ----

    pub fn run(&mut self) -> Result<(), SimError> {
        let started = Instant::now();
        let result = self.run_inner();
        self.wall_clock_ms = started.elapsed().as_millis();
        result
    }

    fn run_inner(&mut self) -> Result<(), SimError> {
        loop {
            self.drain_queue()?;
            if self.check_termination() {
                break;
            }
            let tpn = self.cfg.transactions_per_node;
            let generated = self.nodes.iter().all(|n| n.generation_complete(tpn));
            if !(generated && self.chain.unblocked_txs() > 0) {
                return Err(self.stalled("event queue empty before termination"));
            }
            self.drain_mode = true;
            let Some(node) = self
                .nodes
                .iter()
                .position(|n| n.pool_len() > 0 && n.assembly == Assembly::Idle)
            else {
                return Err(self.stalled("unblocked transactions but no node holds them"));
            };
            self.attempt_block(node as NodeIndex, MAX_BLOCK_RETRIES)?;
        }
        if self.opts.check_invariants_every.is_some() {
            self.check_invariants()
                .map_err(|what| self.invariant(what))?;
        }
        for r in &mut self.records {
            let s = self.net.context(&r.entity_id);
            r.messages = s.messages;
            r.bytes = s.bytes;
        }
        self.finished = true;
        Ok(())
    }

    /// Processes events until the queue is empty.
    fn drain_queue(&mut self) -> Result<(), SimError> {
        while let Some(ev) = self.queue.pop() {
            if self.events_processed >= self.opts.event_budget {
                return Err(self.stalled("event budget exhausted"));
            }
            if ev.time < self.now {
                return Err(self.invariant(format!("event at {} popped after {}", ev.time, self.now)));
            }
            self.now = ev.time;
            self.dispatch(ev.kind)?;
            self.events_processed += 1;
            self.since_check += 1;
            if self.queue.peek().is_none_or(|e| e.time > self.now) {
                self.at_quiescent_point()?;
            }
        }
        Ok(())
    }

    fn at_quiescent_point(&mut self) -> Result<(), SimError> {
        if self.termination_time.is_none() && self.check_termination() {
            self.termination_time = Some(self.now);
        }
        if let Some(every) = self.opts.check_invariants_every {
            if self.since_check >= every.max(1) {
                self.since_check = 0;
                self.check_invariants().map_err(|what| self.invariant(what))?;
            }
        }
        Ok(())
    }

    fn stalled(&self, reason: &str) -> SimError {
        SimError::Stalled {
            at_ms: self.now,
            reason: reason.to_string(),
        }
    }

    fn invariant(&self, what: String) -> SimError {
        SimError::Invariant {
            at_ms: self.now,
            what,
        }
    }

    /// All structural checks across modules.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.overlay.check_invariants()?;
        self.chain.check_invariants()?;
        self.economy.check_conservation()?;
        let expected = self.cfg.nodes as i64 * self.cfg.initial_balance
            + self.cfg.block_reward * self.chain.finalized_block_count() as i64;
        if self.economy.total() != expected {
            return Err(format!("balances sum {} != {expected}", self.economy.total()));
        }
        self.net.check_accounting()?;
        for n in &self.nodes {
            n.store.check_invariants()?;
            if n.tx_generated > self.cfg.transactions_per_node {
                return Err(format!("node {} generated past its quota", n.index));
            }
            for (_, id) in &n.pool {
                if !self.chain.tx_finalized(id) {
                    return Err(format!("node {} pools unfinalized {id}", n.index));
                }
                if self.chain.tx_in_chain(id, &n.known_tail.0) {
                    return Err(format!("node {} pools {id} already in its chain", n.index));
                }
            }
        }
        for r in &self.records {
            if r.finalized_at < r.created_at || r.approvals < self.cfg.signature_threshold {
                return Err(format!("malformed record for {}", r.entity_id));
            }
        }
        Ok(())
    }

    fn push(&mut self, time: u64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Event { time, seq, kind });
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::TxTimer(node) => self.on_tx_timer(node),
            EventKind::BlockBackoff(node) => self.on_block_backoff(node),
            EventKind::Timeout(id) => {
                if self.sessions.contains_key(&id) {
                    self.close_session(id)?;
                }
                Ok(())
            }
            EventKind::Deliver(env) => {
                self.net.delivered(&env).map_err(|w| self.invariant(w))?;
                self.on_deliver(env.dst.node, env.body)
            }
        }
    }

    // ---- messaging ----

    fn send(
        &mut self,
        src: NodeIndex,
        dst: NodeIndex,
        tag: MessageTag,
        payload_len: u64,
        context: Option<Identifier>,
        body: Message,
    ) -> Result<(), SimError> {
        let env = self.net.send(
            Address::for_node(src),
            Address::for_node(dst),
            tag,
            payload_len,
            context,
            self.now,
            body,
        )?;
        self.push(env.deliver_time, EventKind::Deliver(env));
        Ok(())
    }

    /// Sends one message per owner change along `path`, then runs `then`.
    fn start_route(
        &mut self,
        path: Vec<Address>,
        tag: MessageTag,
        context: Option<Identifier>,
        then: Continuation,
    ) -> Result<(), SimError> {
        if path.len() <= 1 {
            return self.resume(then);
        }
        let id = self.next_chain;
        self.next_chain += 1;
        let (a, b) = (path[0].node, path[1].node);
        self.chains.insert(
            id,
            RouteChain {
                path,
                at: 0,
                tag,
                context,
                then,
            },
        );
        self.send(a, b, tag, ROUTE_BYTES, context, Message::Route { chain: id })
    }

    fn on_deliver(&mut self, at: NodeIndex, body: Message) -> Result<(), SimError> {
        match body {
            Message::Route { chain } => {
                let c = self.chains.get_mut(&chain).expect("live route");
                c.at += 1;
                if c.at + 1 < c.path.len() {
                    let (a, b, tag, ctx) = (c.path[c.at].node, c.path[c.at + 1].node, c.tag, c.context);
                    self.send(a, b, tag, ROUTE_BYTES, ctx, Message::Route { chain })
                } else {
                    let c = self.chains.remove(&chain).unwrap();
                    self.resume(c.then)
                }
            }
            Message::ValidateRequest { entity, slot } => {
                let Some(s) = self.sessions.get(&entity) else {
                    return Ok(());
                };
                let honest = validate_entity(&self.chain, &s.entity, &self.cfg);
                let decision = respond(honest, self.nodes[at as usize].is_malicious());
                let owner = s.entity.owner();
                self.send(
                    at,
                    owner,
                    MessageTag::ValidateReply,
                    REPLY_BYTES,
                    Some(entity),
                    Message::ValidateReply {
                        entity,
                        slot,
                        decision,
                    },
                )
            }
            Message::ValidateReply {
                entity,
                slot,
                decision,
            } => {
                let Some(s) = self.sessions.get_mut(&entity) else {
                    // late reply after the timeout closed the session
                    return Ok(());
                };
                let i = slot as usize;
                if !s.replied[i] {
                    s.replied[i] = true;
                    s.tickets[i].record(decision);
                    s.replies += 1;
                }
                if s.replies as usize == s.tickets.len() {
                    self.close_session(entity)?;
                }
                Ok(())
            }
            Message::Replicate { entity } => {
                let e = self.finalized[&entity].clone();
                self.nodes[at as usize]
                    .store
                    .store(e)
                    .map_err(|e| self.invariant(e.to_string()))?;
                self.announce_object(entity, at)
            }
            Message::Notify { entity } => self.on_entity_finalized(at, entity),
        }
    }

    fn resume(&mut self, then: Continuation) -> Result<(), SimError> {
        match then {
            Continuation::Done => Ok(()),
            Continuation::SlotResolved { entity, slot } => {
                let s = self.sessions.get_mut(&entity).expect("session open while resolving");
                s.requested += 1;
                let all_sent = s.requested as usize == s.tickets.len();
                let owner = s.entity.owner();
                let validator = s.tickets[slot as usize].validator;
                let len = s.entity.canonical_bytes().len() as u64;
                self.send(
                    owner,
                    validator,
                    MessageTag::ValidateRequest,
                    len,
                    Some(entity),
                    Message::ValidateRequest { entity, slot },
                )?;
                if all_sent {
                    self.push(self.now + self.timeout_ms, EventKind::Timeout(entity));
                }
                Ok(())
            }
            Continuation::ReplicaPlaced {
                entity,
                owner,
                holder,
            } => {
                let len = self.finalized[&entity].canonical_bytes().len() as u64;
                self.send(
                    owner,
                    holder,
                    MessageTag::Fetch,
                    len,
                    Some(entity),
                    Message::Replicate { entity },
                )
            }
        }
    }

    fn announce_object(&mut self, id: Identifier, holder: NodeIndex) -> Result<(), SimError> {
        let ann = self
            .overlay
            .announce(id, Address::for_node(holder), VertexKind::DataObject)?;
        self.start_route(ann.path.0, MessageTag::Announce, Some(id), Continuation::Done)
    }

    // ---- consensus sessions ----

    fn start_session(&mut self, entity: Entity) -> Result<(), SimError> {
        let id = entity.id();
        let owner = entity.owner();
        debug_assert!(!self.sessions.contains_key(&id) && !self.finalized.contains_key(&id));
        let tickets = select_validators(&self.overlay, &id, owner, self.cfg.validators_per_entity)?;
        let paths: Vec<_> = tickets.iter().map(|t| (t.slot, t.path.0.clone())).collect();
        self.sessions.insert(
            id,
            Session {
                entity,
                replied: vec![false; tickets.len()],
                tickets,
                requested: 0,
                replies: 0,
            },
        );
        if paths.is_empty() {
            return self.close_session(id);
        }
        for (slot, path) in paths {
            self.start_route(
                path,
                MessageTag::OverlayRoute,
                Some(id),
                Continuation::SlotResolved { entity: id, slot },
            )?;
        }
        Ok(())
    }

    fn close_session(&mut self, id: Identifier) -> Result<(), SimError> {
        let s = self.sessions.remove(&id).expect("open session");
        let mut entity = s.entity;
        let owner = entity.owner();
        let fin = finalize(&entity, &s.tickets, &mut self.economy, &self.cfg);
        if let Entity::Tx(_) = entity {
            self.nodes[owner as usize].open_tx_sessions -= 1;
        }
        if !fin.finalized {
            return self.on_rejected(&entity, fin.approvals);
        }

        *entity.signatures_mut() = s
            .tickets
            .iter()
            .filter(|t| t.decision != Decision::Silent)
            .map(ValidationTicket::signature)
            .collect();
        let (event_type, height, size, drain) = match &entity {
            Entity::Tx(tx) => {
                self.economy.pay(owner, tx.recipient, tx.amount as i64);
                self.chain.register_tx(tx, self.now);
                (EventType::Tx, None, None, false)
            }
            Entity::Block(b) => {
                self.chain.register_block(b);
                self.nodes[owner as usize].assembly = Assembly::Idle;
                (EventType::Block, Some(b.height), Some(b.tx_ids.len() as u32), b.drain)
            }
        };
        self.records.push(MetricRecord {
            event_type,
            entity_id: id,
            owner,
            created_at: entity.created_at(),
            finalized_at: self.now,
            messages: 0,
            bytes: 0,
            memory_bytes: entity.canonical_bytes().len() as u64,
            validators_contacted: s.tickets.len() as u32,
            approvals: fin.approvals,
            height,
            size,
            drain,
        });
        self.finalized.insert(id, entity.clone());
        self.nodes[owner as usize]
            .store
            .store(entity)
            .map_err(|e| self.invariant(e.to_string()))?;
        self.announce_object(id, owner)?;
        for (holder, path) in self.place_replicas(&id, owner)? {
            self.start_route(
                path,
                MessageTag::OverlayRoute,
                Some(id),
                Continuation::ReplicaPlaced {
                    entity: id,
                    owner,
                    holder,
                },
            )?;
        }
        let len = self.finalized[&id].canonical_bytes().len() as u64;
        for peer in 0..self.cfg.nodes {
            if peer != owner {
                self.send(owner, peer, MessageTag::Notify, len, Some(id), Message::Notify { entity: id })?;
            }
        }
        self.on_entity_finalized(owner, id)
    }

    /// Holders for the r − 1 extra replicas, each with the route from the
    /// owner to the holder and back.
    fn place_replicas(
        &self,
        id: &Identifier,
        owner: NodeIndex,
    ) -> Result<Vec<(NodeIndex, Vec<Address>)>, SimError> {
        let extra = REPLICATION_FACTOR.min(self.cfg.nodes) as usize - 1;
        let owner_addr = Address::for_node(owner);
        let mut out: Vec<(NodeIndex, Vec<Address>)> = Vec::with_capacity(extra);
        let mut k: u32 = 1;
        while out.len() < extra {
            if k > MAX_REPLICA_PROBES {
                return Err(self.stalled("replica placement found too few distinct holders"));
            }
            let probe = hash_parts(&[id.as_bytes(), b"rep", &k.to_be_bytes()]);
            k += 1;
            let sample = self.overlay.sample_controller(owner_addr, &probe)?;
            let holder = sample.chosen.node;
            if holder == owner || out.iter().any(|(h, _)| *h == holder) {
                continue;
            }
            let mut path = sample.path.0;
            path.push(owner_addr);
            path.dedup();
            out.push((holder, path));
        }
        Ok(out)
    }

    fn on_rejected(&mut self, entity: &Entity, approvals: u32) -> Result<(), SimError> {
        let owner = entity.owner();
        let (event_type, seq) = match entity {
            Entity::Tx(tx) => (EventType::Tx, Some(tx.seq)),
            Entity::Block(_) => (EventType::Block, None),
        };
        self.rejections.push(Rejection {
            entity_id: entity.id(),
            owner,
            event_type,
            seq,
            created_at: entity.created_at(),
            rejected_at: self.now,
            approvals,
        });
        match entity {
            Entity::Tx(tx) => {
                let delay = self.cfg.inter_tx_delay_ms();
                let n = &mut self.nodes[owner as usize];
                n.retry_queue.push_back(tx.seq);
                if !n.timer_armed {
                    n.timer_armed = true;
                    let at = self.now.max(n.last_tx_at.unwrap_or(0) + delay);
                    self.push(at, EventKind::TxTimer(owner));
                }
            }
            Entity::Block(_) => {
                let retries_left = match self.nodes[owner as usize].assembly {
                    Assembly::InFlight { retries_left } => retries_left,
                    _ => 0,
                };
                let tail = self.chain.tail_entry();
                let in_chain = self.chain.chain_txs(&tail.0);
                let n = &mut self.nodes[owner as usize];
                n.known_tail = tail;
                n.rebuild_pool(|t| in_chain.contains(t));
                n.assembly = Assembly::Idle;
                if retries_left > 0 && self.pool_ready(owner) {
                    self.schedule_backoff(owner, retries_left - 1);
                }
            }
        }
        Ok(())
    }

    // ---- node handlers ----

    fn on_tx_timer(&mut self, i: NodeIndex) -> Result<(), SimError> {
        let tpn = self.cfg.transactions_per_node;
        let delay = self.cfg.inter_tx_delay_ms();
        let n = &mut self.nodes[i as usize];
        n.timer_armed = false;
        let Some(issue) = n.next_issue(tpn) else {
            return Ok(());
        };
        let others = self.cfg.nodes - 1;
        let r = self.recipient_rng[i as usize].gen_range(0..others);
        let recipient = if r >= i { r + 1 } else { r };
        let mut prev = n.known_tail.0;
        if matches!(issue, TxIssue::Fresh(_))
            && n.is_malicious()
            && self.corrupt_rng[i as usize].gen_bool(self.corrupt_probability)
        {
            prev = Identifier(self.corrupt_rng[i as usize].gen());
        }
        let tx = Transaction::new(i, recipient, 1, prev, issue.seq(), self.now);
        n.last_tx_at = Some(self.now);
        n.open_tx_sessions += 1;
        if n.has_pending_issues(tpn) {
            n.timer_armed = true;
            self.push(self.now + delay, EventKind::TxTimer(i));
        }
        self.start_session(Entity::Tx(tx))
    }

    fn on_entity_finalized(&mut self, i: NodeIndex, id: Identifier) -> Result<(), SimError> {
        match &self.finalized[&id] {
            Entity::Tx(tx) => {
                let at = self.chain.tx_finalized_at(&tx.id).expect("registered");
                let n = &self.nodes[i as usize];
                let in_chain = self.chain.tx_in_chain(&tx.id, &n.known_tail.0);
                self.nodes[i as usize].learn_tx(tx.id, at, in_chain);
            }
            Entity::Block(b) => {
                let n = &self.nodes[i as usize];
                if crate::node::prefers((b.id, b.height), n.known_tail) {
                    if b.prev_block_id == n.known_tail.0 {
                        let ids = b.tx_ids.clone();
                        self.nodes[i as usize].evict(&ids);
                    } else {
                        let in_chain = self.chain.chain_txs(&b.id);
                        self.nodes[i as usize].rebuild_pool(|t| in_chain.contains(t));
                    }
                    self.nodes[i as usize].known_tail = (b.id, b.height);
                }
            }
        }
        self.maybe_trigger_block(i);
        Ok(())
    }

    fn pool_ready(&self, i: NodeIndex) -> bool {
        let pool = self.nodes[i as usize].pool_len();
        pool >= self.cfg.block_size_min as usize || (self.drain_mode && pool > 0)
    }

    fn maybe_trigger_block(&mut self, i: NodeIndex) {
        if self.nodes[i as usize].assembly == Assembly::Idle && self.pool_ready(i) {
            self.schedule_backoff(i, MAX_BLOCK_RETRIES);
        }
    }

    fn schedule_backoff(&mut self, i: NodeIndex, retries_left: u8) {
        let wait = 1 + self.backoff_rng[i as usize].gen_range(0..BLOCK_BACKOFF_MS);
        self.nodes[i as usize].assembly = Assembly::Waiting { retries_left };
        self.push(self.now + wait, EventKind::BlockBackoff(i));
    }

    fn on_block_backoff(&mut self, i: NodeIndex) -> Result<(), SimError> {
        let Assembly::Waiting { retries_left } = self.nodes[i as usize].assembly else {
            return Ok(());
        };
        if self.pool_ready(i) {
            self.attempt_block(i, retries_left)
        } else {
            self.nodes[i as usize].assembly = Assembly::Idle;
            Ok(())
        }
    }

    /// Proposes the oldest `block_size_min` pool transactions on top of the
    /// node's known tail.
    fn attempt_block(&mut self, i: NodeIndex, retries_left: u8) -> Result<(), SimError> {
        let min = self.cfg.block_size_min as usize;
        let n = &self.nodes[i as usize];
        let txs = n.oldest(min);
        let drain = txs.len() < min;
        let (mut parent, height) = n.known_tail;
        if retries_left == MAX_BLOCK_RETRIES
            && n.is_malicious()
            && self.corrupt_rng[i as usize].gen_bool(self.corrupt_probability)
        {
            parent = Identifier(self.corrupt_rng[i as usize].gen());
        }
        let block = Block::new(i, parent, height + 1, txs, self.now, drain);
        self.nodes[i as usize].assembly = Assembly::InFlight { retries_left };
        self.start_session(Entity::Block(block))
    }
}
