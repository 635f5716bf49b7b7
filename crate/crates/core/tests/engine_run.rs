use std::collections::BTreeMap;

use lightchain_sim::config::SimulationConfig;
use lightchain_sim::engine::{run_simulation, EventType, SimOptions, Simulation};
use lightchain_sim::identity::Address;
use lightchain_sim::ledger::decode;

const GOLDEN_CSV: &str = include_str!("golden/small_run.csv");

fn small() -> SimulationConfig {
    SimulationConfig {
        nodes: 8,
        transactions_per_node: 3,
        inter_tx_delay_s: 1,
        block_size_min: 4,
        initial_balance: 20,
        malicious_fraction: 0.125,
        validators_per_entity: 4,
        signature_threshold: 3,
        validation_fee: 2,
        routing_fee: 1,
        block_reward: 3,
    }
}

fn sixteen() -> Simulation {
    let cfg = SimulationConfig {
        nodes: 16,
        transactions_per_node: 5,
        block_size_min: 8,
        malicious_fraction: 0.0,
        ..SimulationConfig::sample()
    };
    run_simulation(&cfg, SimOptions::with_seed(16)).unwrap()
}

#[test]
fn csv_matches_golden_file() {
    let sim = run_simulation(&small(), SimOptions::with_seed(1)).unwrap();
    let csv = String::from_utf8(sim.csv_bytes()).unwrap();
    assert_eq!(csv, GOLDEN_CSV);
}

#[test]
fn row_count_matches_engine_state() {
    let sim = run_simulation(&small(), SimOptions::with_seed(2)).unwrap();
    let csv = String::from_utf8(sim.csv_bytes()).unwrap();
    let rows = csv.lines().count() - 1;
    let c = sim.chain();
    assert_eq!(rows as u64, c.finalized_tx_count() + c.finalized_block_count());
    let mut last = (0u64, String::new());
    for line in csv.lines().skip(1) {
        let f: Vec<_> = line.split(',').collect();
        assert_eq!(f.len(), 12);
        let key = (f[4].parse::<u64>().unwrap(), f[1].to_string());
        assert!(key >= last, "rows out of order");
        assert!(f[4].parse::<u64>().unwrap() >= f[3].parse::<u64>().unwrap());
        last = key;
    }
}

#[test]
fn every_finalized_entity_resolves_to_its_replica_holders() {
    let sim = sixteen();
    let blocks = sim
        .records()
        .iter()
        .filter(|r| r.event_type == EventType::Block)
        .count();
    assert!(blocks >= 10);
    for r in sim.records() {
        let mut stored_at: Vec<Address> = sim
            .nodes()
            .iter()
            .filter(|n| n.store.fetch(&r.entity_id).is_some())
            .map(|n| n.address)
            .collect();
        stored_at.sort();
        assert_eq!(stored_at.len(), 3);
        let res = sim
            .overlay()
            .resolve_holders(Address::for_node(r.owner), &r.entity_id)
            .unwrap();
        assert_eq!(res.holders, stored_at);

        // a remote fetch from any holder returns the same bytes
        let bytes: Vec<Vec<u8>> = res
            .holders
            .iter()
            .map(|h| sim.nodes()[h.node as usize].store.fetch(&r.entity_id).unwrap().canonical_bytes())
            .collect();
        assert!(bytes.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(decode(&bytes[0]).unwrap().id(), r.entity_id);
        assert_eq!(bytes[0].len() as u64, r.memory_bytes);
    }
}

#[test]
fn honest_system_finalizes_with_full_approval() {
    let sim = sixteen();
    assert!(sim.rejections().iter().all(|r| r.event_type == EventType::Block));
    for r in sim.records() {
        assert_eq!(r.validators_contacted, 12);
        match r.event_type {
            EventType::Tx => assert_eq!(r.approvals, 12),
            // a sibling block may finalize while this one is being validated
            EventType::Block => assert!(r.approvals >= 10),
        }
    }
    sim.check_invariants().unwrap();
    assert_eq!(sim.network().in_flight(), 0);
    sim.network().check_accounting().unwrap();
}

#[test]
fn message_overhead_is_attributed_per_entity() {
    let sim = sixteen();
    let per_entity: u64 = sim.records().iter().map(|r| r.messages).sum();
    assert!(per_entity <= sim.network().total_messages());
    for r in sim.records() {
        // 12 validation round trips and 15 notifications at least
        assert!(r.messages >= 12 * 2 + 15, "{}", r.messages);
        assert!(r.bytes > 0);
    }
}

#[test]
fn chain_reaches_genesis_in_height_steps() {
    let sim = sixteen();
    let chain = sim.chain().canonical_chain();
    let tail = chain[0];
    assert_eq!(chain.len() as u64, tail.height + 1);
    assert_eq!(chain.last().unwrap().id, sim.chain().genesis());
    let mut by_height = BTreeMap::new();
    for b in &chain {
        assert!(by_height.insert(b.height, b.id).is_none());
    }
}

#[test]
fn report_averages_match_rows() {
    let sim = run_simulation(&small(), SimOptions::with_seed(3)).unwrap();
    let report = sim.report();
    let txs: Vec<_> = sim.records().iter().filter(|r| r.event_type == EventType::Tx).collect();
    let mean = txs.iter().map(|r| (r.finalized_at - r.created_at) as f64).sum::<f64>() / txs.len() as f64;
    assert!((report.avg_tx_time_ms - mean).abs() < 1e-9);
    assert_eq!(report.finalized_txs, 24);
    assert_eq!(report.per_node_storage.len(), 8);
    assert_eq!(report.total_messages, sim.network().total_messages());
    assert!(report.to_string().contains("finalized transactions   24"));
}
