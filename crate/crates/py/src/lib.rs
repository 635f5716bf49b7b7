//! Python bindings for the simulator: config parsing, identifiers, the
//! overlay, validator selection and full simulation runs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use lightchain_sim::config::{parse_config, SimulationConfig};
use lightchain_sim::consensus;
use lightchain_sim::engine::{self, MetricRecord, SimError, SimOptions, SimulationReport};
use lightchain_sim::identity::{self, Address, Identifier, NodeIndex, NodeKey};
use lightchain_sim::overlay::{self, RoutePath, VertexKind};
use lightchain_sim::simnet::{LatencySource, DEFAULT_MEDIAN_MS, DEFAULT_SIGMA};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Config(_) => value_err(e),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_id(hex: &str) -> PyResult<Identifier> {
    Identifier::from_hex(hex).ok_or_else(|| value_err(format!("not a 64-digit hex identifier: {hex}")))
}

fn kind_of(name: &str) -> PyResult<VertexKind> {
    match name {
        "controller" => Ok(VertexKind::Controller),
        "data-object" | "object" => Ok(VertexKind::DataObject),
        _ => Err(value_err(format!("unknown vertex kind {name:?}"))),
    }
}

fn nodes_on(path: &RoutePath) -> Vec<NodeIndex> {
    path.0.iter().map(|a| a.node).collect()
}

/// Parsed simulation parameters.
#[pyclass(name = "Config", module = "lightchain")]
#[derive(Clone)]
struct PyConfig {
    inner: SimulationConfig,
}

#[pymethods]
impl PyConfig {
    /// The sample scenario: 120 nodes, 1000 transactions each.
    #[staticmethod]
    fn sample() -> Self {
        Self {
            inner: SimulationConfig::sample(),
        }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_config(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_path(path: &str) -> PyResult<Self> {
        SimulationConfig::from_path(path)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_config_text()
    }

    fn malicious_count(&self) -> u32 {
        self.inner.malicious_count()
    }

    fn __repr__(&self) -> String {
        format!("Config({:?})", self.inner)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    #[getter]
    fn nodes(&self) -> u32 {
        self.inner.nodes
    }
    #[setter]
    fn set_nodes(&mut self, v: u32) {
        self.inner.nodes = v;
    }
    #[getter]
    fn transactions_per_node(&self) -> u32 {
        self.inner.transactions_per_node
    }
    #[setter]
    fn set_transactions_per_node(&mut self, v: u32) {
        self.inner.transactions_per_node = v;
    }
    #[getter]
    fn inter_tx_delay_s(&self) -> u64 {
        self.inner.inter_tx_delay_s
    }
    #[setter]
    fn set_inter_tx_delay_s(&mut self, v: u64) {
        self.inner.inter_tx_delay_s = v;
    }
    #[getter]
    fn block_size_min(&self) -> u32 {
        self.inner.block_size_min
    }
    #[setter]
    fn set_block_size_min(&mut self, v: u32) {
        self.inner.block_size_min = v;
    }
    #[getter]
    fn initial_balance(&self) -> i64 {
        self.inner.initial_balance
    }
    #[setter]
    fn set_initial_balance(&mut self, v: i64) {
        self.inner.initial_balance = v;
    }
    #[getter]
    fn malicious_fraction(&self) -> f64 {
        self.inner.malicious_fraction
    }
    #[setter]
    fn set_malicious_fraction(&mut self, v: f64) {
        self.inner.malicious_fraction = v;
    }
    #[getter]
    fn validators_per_entity(&self) -> u32 {
        self.inner.validators_per_entity
    }
    #[setter]
    fn set_validators_per_entity(&mut self, v: u32) {
        self.inner.validators_per_entity = v;
    }
    #[getter]
    fn signature_threshold(&self) -> u32 {
        self.inner.signature_threshold
    }
    #[setter]
    fn set_signature_threshold(&mut self, v: u32) {
        self.inner.signature_threshold = v;
    }
    #[getter]
    fn validation_fee(&self) -> i64 {
        self.inner.validation_fee
    }
    #[setter]
    fn set_validation_fee(&mut self, v: i64) {
        self.inner.validation_fee = v;
    }
    #[getter]
    fn routing_fee(&self) -> i64 {
        self.inner.routing_fee
    }
    #[setter]
    fn set_routing_fee(&mut self, v: i64) {
        self.inner.routing_fee = v;
    }
    #[getter]
    fn block_reward(&self) -> i64 {
        self.inner.block_reward
    }
    #[setter]
    fn set_block_reward(&mut self, v: i64) {
        self.inner.block_reward = v;
    }
}

/// SHA-256 of `data`, as hex.
#[pyfunction]
fn hash(data: &[u8]) -> String {
    identity::hash(data).to_hex()
}

#[pyfunction]
fn node_identifier(node: NodeIndex) -> String {
    identity::derive_node_identifier(&NodeKey::for_index(node)).to_hex()
}

#[pyfunction]
fn membership_vector(identifier: &str) -> PyResult<String> {
    Ok(parse_id(identifier)?.membership_vector().to_hex())
}

#[pyfunction]
fn common_prefix_len(a: &str, b: &str) -> PyResult<usize> {
    Ok(identity::common_prefix_len(&parse_id(a)?, &parse_id(b)?))
}

/// Controller and data-object skip graphs over nodes `0..nodes`.
#[pyclass(name = "Overlay", module = "lightchain")]
struct PyOverlay {
    inner: overlay::Overlay,
    nodes: u32,
}

impl PyOverlay {
    fn start(&self, node: NodeIndex) -> PyResult<Address> {
        if node >= self.nodes {
            return Err(value_err(format!("node {node} out of range")));
        }
        Ok(Address::for_node(node))
    }
}

#[pymethods]
impl PyOverlay {
    #[new]
    #[pyo3(signature = (nodes, max_objects = 1024))]
    fn new(nodes: u32, max_objects: usize) -> PyResult<Self> {
        if nodes == 0 {
            return Err(value_err("an overlay needs at least one node"));
        }
        let mut inner = overlay::Overlay::new(nodes as usize, max_objects);
        for i in 0..nodes {
            inner
                .announce(
                    identity::derive_node_identifier(&NodeKey::for_index(i)),
                    Address::for_node(i),
                    VertexKind::Controller,
                )
                .map_err(value_err)?;
        }
        Ok(Self { inner, nodes })
    }

    #[getter]
    fn controller_count(&self) -> usize {
        self.inner.controller_count()
    }

    #[getter]
    fn object_count(&self) -> usize {
        self.inner.object_count()
    }

    /// Publishes a data object held by `holder`. Returns True when a new
    /// vertex was created.
    fn announce_object(&mut self, identifier: &str, holder: NodeIndex) -> PyResult<bool> {
        let addr = self.start(holder)?;
        let a = self
            .inner
            .announce(parse_id(identifier)?, addr, VertexKind::DataObject)
            .map_err(value_err)?;
        Ok(a.created)
    }

    #[pyo3(signature = (start, target, kind = "controller"))]
    fn search<'py>(
        &self,
        py: Python<'py>,
        start: NodeIndex,
        target: &str,
        kind: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let res = self
            .inner
            .search_num_id(self.start(start)?, &parse_id(target)?, kind_of(kind)?)
            .map_err(value_err)?;
        let d = PyDict::new_bound(py);
        d.set_item("vertex", res.vertex.to_hex())?;
        d.set_item("terminal", res.terminal.node)?;
        d.set_item("holders", res.holders.iter().map(|a| a.node).collect::<Vec<_>>())?;
        d.set_item("hop_count", res.hop_count)?;
        d.set_item("path", nodes_on(&res.path))?;
        Ok(d)
    }

    fn resolve_holders(&self, start: NodeIndex, identifier: &str) -> PyResult<Vec<NodeIndex>> {
        let res = self
            .inner
            .resolve_holders(self.start(start)?, &parse_id(identifier)?)
            .map_err(value_err)?;
        Ok(res.holders.iter().map(|a| a.node).collect())
    }

    fn sample_controller(&self, start: NodeIndex, probe: &str) -> PyResult<NodeIndex> {
        let s = self
            .inner
            .sample_controller(self.start(start)?, &parse_id(probe)?)
            .map_err(value_err)?;
        Ok(s.chosen.node)
    }

    /// One dict per slot: slot, validator, probe and the nodes visited.
    fn select_validators<'py>(
        &self,
        py: Python<'py>,
        entity: &str,
        owner: NodeIndex,
        count: u32,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.start(owner)?;
        let tickets = consensus::select_validators(&self.inner, &parse_id(entity)?, owner, count)
            .map_err(value_err)?;
        tickets
            .iter()
            .map(|t| {
                let d = PyDict::new_bound(py);
                d.set_item("slot", t.slot)?;
                d.set_item("validator", t.validator)?;
                d.set_item("target", t.target.to_hex())?;
                d.set_item("path", nodes_on(&t.path))?;
                Ok(d)
            })
            .collect()
    }

    fn check_invariants(&self) -> PyResult<()> {
        self.inner.check_invariants().map_err(PyRuntimeError::new_err)
    }

    fn dump(&self) -> String {
        self.inner.dump()
    }
}

fn record_dict<'py>(py: Python<'py>, r: &MetricRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("event_type", r.event_type.to_string())?;
    d.set_item("entity_id", r.entity_id.to_hex())?;
    d.set_item("owner", r.owner)?;
    d.set_item("created_at", r.created_at)?;
    d.set_item("finalized_at", r.finalized_at)?;
    d.set_item("messages", r.messages)?;
    d.set_item("bytes", r.bytes)?;
    d.set_item("memory_bytes", r.memory_bytes)?;
    d.set_item("validators_contacted", r.validators_contacted)?;
    d.set_item("approvals", r.approvals)?;
    d.set_item("height", r.height)?;
    d.set_item("size", r.size)?;
    d.set_item("drain", r.drain)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &SimulationReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("avg_tx_time_ms", r.avg_tx_time_ms)?;
    d.set_item("avg_block_time_ms", r.avg_block_time_ms)?;
    d.set_item("avg_block_size", r.avg_block_size)?;
    d.set_item("finalized_txs", r.finalized_txs)?;
    d.set_item("finalized_blocks", r.finalized_blocks)?;
    d.set_item("drain_blocks", r.drain_blocks)?;
    d.set_item("canonical_height", r.canonical_height)?;
    d.set_item("rejected_entities", r.rejected_entities)?;
    d.set_item("total_messages", r.total_messages)?;
    d.set_item("total_bytes", r.total_bytes)?;
    d.set_item("total_minted", r.total_minted)?;
    d.set_item("negative_balance_events", r.negative_balance_events)?;
    d.set_item("per_node_storage", r.per_node_storage.clone())?;
    d.set_item("virtual_end_ms", r.virtual_end_ms)?;
    d.set_item("events_processed", r.events_processed)?;
    Ok(d)
}

/// A finished simulation run.
#[pyclass(name = "Simulation", module = "lightchain")]
struct PySimulation {
    inner: engine::Simulation,
}

#[pymethods]
impl PySimulation {
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    #[getter]
    fn now(&self) -> u64 {
        self.inner.now()
    }

    #[getter]
    fn termination_time(&self) -> Option<u64> {
        self.inner.termination_time()
    }

    #[getter]
    fn canonical_height(&self) -> u64 {
        self.inner.chain().canonical_chain()[0].height
    }

    fn balances(&self) -> Vec<i64> {
        self.inner.economy().balances.clone()
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.records().iter().map(|r| record_dict(py, r)).collect()
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        report_dict(py, &self.inner.report())
    }

    fn summary(&self) -> String {
        self.inner.report().to_string()
    }

    fn csv_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new_bound(py, &self.inner.csv_bytes())
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        self.inner
            .write_csv(std::io::BufWriter::new(f))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn check_invariants(&self) -> PyResult<()> {
        self.inner.check_invariants().map_err(PyRuntimeError::new_err)
    }
}

/// Runs a full simulation. The GIL is released while it runs.
#[pyfunction]
#[pyo3(signature = (config, seed = 42, latency_median = None, latency_sigma = None, check_invariants = None))]
fn run_simulation(
    py: Python<'_>,
    config: &PyConfig,
    seed: u64,
    latency_median: Option<f64>,
    latency_sigma: Option<f64>,
    check_invariants: Option<u64>,
) -> PyResult<PySimulation> {
    let latency = LatencySource::builtin(
        latency_median.unwrap_or(DEFAULT_MEDIAN_MS),
        latency_sigma.unwrap_or(DEFAULT_SIGMA),
    )
    .map_err(value_err)?;
    let opts = SimOptions {
        seed,
        latency,
        check_invariants_every: check_invariants,
        ..SimOptions::default()
    };
    let cfg = config.inner.clone();
    let inner = py
        .allow_threads(move || engine::run_simulation(&cfg, opts))
        .map_err(sim_err)?;
    Ok(PySimulation { inner })
}

#[pymodule]
fn lightchain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyOverlay>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(hash, m)?)?;
    m.add_function(wrap_pyfunction!(node_identifier, m)?)?;
    m.add_function(wrap_pyfunction!(membership_vector, m)?)?;
    m.add_function(wrap_pyfunction!(common_prefix_len, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add("CSV_HEADER", engine::CSV_HEADER.join(","))?;
    Ok(())
}
