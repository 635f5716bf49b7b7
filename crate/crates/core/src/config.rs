//! Loader for the `simulation.config` file.
//!
//! The format is line oriented: `KEY = VALUE`, with `//` starting a comment
//! anywhere on a line and blank lines ignored. Key names are case sensitive.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Keys in the order they are written back out.
pub const KEYS: [&str; 11] = [
    "NODES",
    "TRANSACTIONS",
    "DELAY",
    "BLK_SIZE",
    "INIT_BALANCE",
    "MALICIOUS",
    "VALID_THR",
    "SIG_THR",
    "VALID_FEE",
    "ROUTE_FEE",
    "REWARD",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("unknown key {key} on line {line_no}")]
    UnknownKey { key: String, line_no: usize },
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("value out of range for {0}")]
    ValueOutOfRange(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Parsed simulation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub nodes: u32,
    pub transactions_per_node: u32,
    pub inter_tx_delay_s: u64,
    pub block_size_min: u32,
    pub initial_balance: i64,
    pub malicious_fraction: f64,
    pub validators_per_entity: u32,
    pub signature_threshold: u32,
    pub validation_fee: i64,
    pub routing_fee: i64,
    pub block_reward: i64,
}

impl SimulationConfig {
    /// The sample scenario: 120 nodes, 1000 transactions each.
    pub fn sample() -> Self {
        Self {
            nodes: 120,
            transactions_per_node: 1000,
            inter_tx_delay_s: 1,
            block_size_min: 100,
            initial_balance: 20,
            malicious_fraction: 0.16,
            validators_per_entity: 12,
            signature_threshold: 10,
            validation_fee: 2,
            routing_fee: 1,
            block_reward: 3,
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| ConfigError::Io(e.to_string()))?;
        parse_config(&text)
    }

    pub fn inter_tx_delay_ms(&self) -> u64 {
        self.inter_tx_delay_s * 1000
    }

    /// Number of nodes that deviate from the protocol.
    pub fn malicious_count(&self) -> u32 {
        malicious_count(self.malicious_fraction, self.nodes)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let out = |k: &str| Err(ConfigError::ValueOutOfRange(k.to_string()));
        if self.nodes < 2 {
            return out("NODES");
        }
        if self.transactions_per_node < 1 {
            return out("TRANSACTIONS");
        }
        if self.block_size_min < 1 {
            return out("BLK_SIZE");
        }
        if !(0.0..1.0).contains(&self.malicious_fraction)
            || self.malicious_count() >= self.nodes
        {
            return out("MALICIOUS");
        }
        if self.validators_per_entity > self.nodes - 1 {
            return out("VALID_THR");
        }
        if self.signature_threshold > self.validators_per_entity {
            return out("SIG_THR");
        }
        if self.initial_balance < 0 {
            return out("INIT_BALANCE");
        }
        if self.validation_fee < 0 {
            return out("VALID_FEE");
        }
        if self.routing_fee < 0 {
            return out("ROUTE_FEE");
        }
        if self.block_reward < 0 {
            return out("REWARD");
        }
        Ok(())
    }

    /// Renders the config as `KEY = VALUE` lines that [`parse_config`] accepts.
    pub fn to_config_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SimulationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "NODES = {}", self.nodes)?;
        writeln!(f, "TRANSACTIONS = {}", self.transactions_per_node)?;
        writeln!(f, "DELAY = {}", self.inter_tx_delay_s)?;
        writeln!(f, "BLK_SIZE = {}", self.block_size_min)?;
        writeln!(f, "INIT_BALANCE = {}", self.initial_balance)?;
        // `{:?}` keeps a decimal point and round-trips exactly.
        writeln!(f, "MALICIOUS = {:?}", self.malicious_fraction)?;
        writeln!(f, "VALID_THR = {}", self.validators_per_entity)?;
        writeln!(f, "SIG_THR = {}", self.signature_threshold)?;
        writeln!(f, "VALID_FEE = {}", self.validation_fee)?;
        writeln!(f, "ROUTE_FEE = {}", self.routing_fee)?;
        writeln!(f, "REWARD = {}", self.block_reward)
    }
}

/// Round-half-up of `fraction * nodes`.
pub fn malicious_count(fraction: f64, nodes: u32) -> u32 {
    // The epsilon absorbs binary representation error in decimal fractions
    // such as 0.35 * 10.
    (fraction * f64::from(nodes) + 0.5 + 1e-9).floor() as u32
}

pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    let mut values: BTreeMap<&'static str, (usize, &str)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find("//") {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::MalformedLine(line_no))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() || value.contains('=') {
            return Err(ConfigError::MalformedLine(line_no));
        }
        let known = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| ConfigError::UnknownKey {
                key: key.to_string(),
                line_no,
            })?;
        if values.insert(known, (line_no, value)).is_some() {
            return Err(ConfigError::DuplicateKey(key.to_string()));
        }
    }

    for key in KEYS {
        if !values.contains_key(key) {
            return Err(ConfigError::MissingKey(key.to_string()));
        }
    }
    let raw = |key: &str| values[key];

    let cfg = SimulationConfig {
        nodes: parse_int(raw("NODES"))?,
        transactions_per_node: parse_int(raw("TRANSACTIONS"))?,
        inter_tx_delay_s: parse_int(raw("DELAY"))?,
        block_size_min: parse_int(raw("BLK_SIZE"))?,
        initial_balance: parse_int(raw("INIT_BALANCE"))?,
        malicious_fraction: parse_decimal(raw("MALICIOUS"))?,
        validators_per_entity: parse_int(raw("VALID_THR"))?,
        signature_threshold: parse_int(raw("SIG_THR"))?,
        validation_fee: parse_int(raw("VALID_FEE"))?,
        routing_fee: parse_int(raw("ROUTE_FEE"))?,
        block_reward: parse_int(raw("REWARD"))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_int<T: std::str::FromStr>((line_no, value): (usize, &str)) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::MalformedLine(line_no))
}

fn parse_decimal((line_no, value): (usize, &str)) -> Result<f64, ConfigError> {
    let ok = !value.is_empty()
        && value.chars().all(|c| c.is_ascii_digit() || c == '.')
        && value.chars().filter(|c| *c == '.').count() <= 1
        && value.chars().any(|c| c.is_ascii_digit());
    if !ok {
        return Err(ConfigError::MalformedLine(line_no));
    }
    value.parse().map_err(|_| ConfigError::MalformedLine(line_no))
}
