//! Per-entity metric rows, the CSV writer and the run summary.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::identity::{Identifier, NodeIndex};

pub const CSV_HEADER: [&str; 12] = [
    "event_type",
    "entity_id",
    "owner",
    "created_at_ms",
    "finalized_at_ms",
    "messages",
    "bytes",
    "memory_bytes",
    "validators_contacted",
    "approvals",
    "height",
    "size",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventType {
    Tx,
    Block,
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventType::Tx => "tx",
            EventType::Block => "block",
        })
    }
}

/// One finalized transaction or block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricRecord {
    pub event_type: EventType,
    pub entity_id: Identifier,
    pub owner: NodeIndex,
    pub created_at: u64,
    pub finalized_at: u64,
    pub messages: u64,
    pub bytes: u64,
    pub memory_bytes: u64,
    pub validators_contacted: u32,
    pub approvals: u32,
    pub height: Option<u64>,
    pub size: Option<u32>,
    pub drain: bool,
}

#[derive(Debug, Error)]
#[error("cannot write output: {0}")]
pub struct OutputUnwritable(pub String);

impl From<csv::Error> for OutputUnwritable {
    fn from(e: csv::Error) -> Self {
        OutputUnwritable(e.to_string())
    }
}

/// Writes the header and one row per record, ordered by finalization time
/// then entity id.
pub fn write_csv<W: Write>(records: &[MetricRecord], out: W) -> Result<(), OutputUnwritable> {
    let mut sorted: Vec<&MetricRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.finalized_at, r.entity_id));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in sorted {
        w.write_record([
            r.event_type.to_string(),
            r.entity_id.to_hex(),
            r.owner.to_string(),
            r.created_at.to_string(),
            r.finalized_at.to_string(),
            r.messages.to_string(),
            r.bytes.to_string(),
            r.memory_bytes.to_string(),
            r.validators_contacted.to_string(),
            r.approvals.to_string(),
            opt(r.height),
            opt(r.size.map(u64::from)),
        ])?;
    }
    w.flush().map_err(|e| OutputUnwritable(e.to_string()))?;
    Ok(())
}

pub fn csv_bytes(records: &[MetricRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory");
    buf
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationReport {
    pub avg_tx_time_ms: f64,
    pub avg_block_time_ms: f64,
    pub avg_block_size: f64,
    pub finalized_txs: u64,
    pub finalized_blocks: u64,
    pub drain_blocks: u64,
    pub canonical_height: u64,
    pub rejected_entities: u64,
    pub total_messages: u64,
    pub total_bytes: u64,
    pub total_minted: i64,
    pub negative_balance_events: u64,
    pub per_node_storage: Vec<usize>,
    pub virtual_end_ms: u64,
    pub events_processed: u64,
    pub wall_clock_ms: u128,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0u64), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Averages and counts derivable from the rows alone. Engine-level totals
/// are left at zero.
pub fn summarize(records: &[MetricRecord]) -> SimulationReport {
    let latency = |r: &&MetricRecord| (r.finalized_at - r.created_at) as f64;
    let txs = || records.iter().filter(|r| r.event_type == EventType::Tx);
    let blocks = || records.iter().filter(|r| r.event_type == EventType::Block);
    SimulationReport {
        avg_tx_time_ms: mean(txs().map(|r| latency(&r))),
        avg_block_time_ms: mean(blocks().map(|r| latency(&r))),
        avg_block_size: mean(blocks().map(|r| f64::from(r.size.unwrap_or(0)))),
        finalized_txs: txs().count() as u64,
        finalized_blocks: blocks().count() as u64,
        drain_blocks: blocks().filter(|r| r.drain).count() as u64,
        ..Default::default()
    }
}

impl fmt::Display for SimulationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let max_store = self.per_node_storage.iter().max().copied().unwrap_or(0);
        let mean_store = mean(self.per_node_storage.iter().map(|v| *v as f64));
        writeln!(f, "== simulation summary ==")?;
        writeln!(f, "finalized transactions   {}", self.finalized_txs)?;
        writeln!(
            f,
            "finalized blocks         {} ({} drain, canonical height {})",
            self.finalized_blocks, self.drain_blocks, self.canonical_height
        )?;
        writeln!(f, "rejected entities        {}", self.rejected_entities)?;
        writeln!(f, "avg tx time              {:.1} ms", self.avg_tx_time_ms)?;
        writeln!(f, "avg block time           {:.1} ms", self.avg_block_time_ms)?;
        writeln!(f, "avg block size           {:.2}", self.avg_block_size)?;
        writeln!(f, "total messages           {}", self.total_messages)?;
        writeln!(f, "total payload bytes      {}", self.total_bytes)?;
        writeln!(f, "minted                   {}", self.total_minted)?;
        writeln!(f, "negative balance events  {}", self.negative_balance_events)?;
        writeln!(f, "stored entities per node max {max_store}, mean {mean_store:.1}")?;
        writeln!(f, "virtual time             {} ms", self.virtual_end_ms)?;
        writeln!(f, "events processed         {}", self.events_processed)?;
        write!(f, "wall clock               {} ms", self.wall_clock_ms)
    }
}
