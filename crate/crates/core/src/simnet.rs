//! Simulated middleware: addressed messages with per-pair latency and global
//! message/byte accounting.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use thiserror::Error;

use crate::identity::{Address, Identifier, NodeIndex};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimnetError {
    #[error("bad latency sample file: {0}")]
    BadSampleFile(String),
    #[error("unknown address {0}")]
    UnknownAddress(Address),
    #[error("self-send from {0}")]
    SelfSend(Address),
    #[error("latency parameters out of range")]
    BadParameters,
}

pub const DEFAULT_MEDIAN_MS: f64 = 50.0;
pub const DEFAULT_SIGMA: f64 = 0.5;

/// Where pairwise latencies are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum LatencySource {
    /// Log-normal with the given median and shape, truncated to
    /// [median/10, 6·median] (5–300 ms at the default median).
    Builtin { median_ms: f64, sigma: f64 },
    /// Empirical samples in ms, drawn uniformly with replacement.
    Samples(Vec<f64>),
}

impl Default for LatencySource {
    fn default() -> Self {
        LatencySource::Builtin {
            median_ms: DEFAULT_MEDIAN_MS,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl LatencySource {
    pub fn builtin(median_ms: f64, sigma: f64) -> Result<Self, SimnetError> {
        if !(median_ms.is_finite() && median_ms >= 1.0 && sigma.is_finite() && sigma > 0.0) {
            return Err(SimnetError::BadParameters);
        }
        Ok(LatencySource::Builtin { median_ms, sigma })
    }

    /// One value per line, integer or decimal milliseconds. Blank lines are
    /// skipped.
    pub fn parse_samples(text: &str) -> Result<Self, SimnetError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| SimnetError::BadSampleFile(format!("line {} is not a number", i + 1)))?;
            if !v.is_finite() || v <= 0.0 {
                return Err(SimnetError::BadSampleFile(format!(
                    "line {} is not a positive latency",
                    i + 1
                )));
            }
            samples.push(v);
        }
        if samples.is_empty() {
            return Err(SimnetError::BadSampleFile("no samples".into()));
        }
        Ok(LatencySource::Samples(samples))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SimnetError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SimnetError::BadSampleFile(e.to_string()))?;
        Self::parse_samples(&text)
    }

    /// One latency draw in whole milliseconds, at least 1.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let ms = match self {
            LatencySource::Builtin { median_ms, sigma } => {
                let dist = LogNormal::new(median_ms.ln(), *sigma).expect("validated parameters");
                let (lo, hi) = (median_ms / 10.0, median_ms * 6.0);
                loop {
                    let v = dist.sample(rng);
                    if (lo..=hi).contains(&v) {
                        break v;
                    }
                }
            }
            LatencySource::Samples(s) => s[rng.gen_range(0..s.len())],
        };
        (ms.round() as u64).max(1)
    }
}

/// Symmetric pairwise latencies, fixed for the whole run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyMatrix {
    n: usize,
    /// Row-major upper triangle, pairs (a, b) with a < b.
    values: Vec<u64>,
}

impl LatencyMatrix {
    pub fn build<R: Rng + ?Sized>(n: usize, rng: &mut R, source: &LatencySource) -> Self {
        assert!(n >= 2);
        let values = (0..n * (n - 1) / 2).map(|_| source.draw(rng)).collect();
        Self { n, values }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn pair_count(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    pub fn latency(&self, a: NodeIndex, b: NodeIndex) -> u64 {
        if a == b {
            return 0;
        }
        self.values[self.slot(a as usize, b as usize)]
    }

    /// Nearest-rank percentile over all pairs.
    pub fn percentile(&self, p: f64) -> u64 {
        let mut v = self.values.clone();
        v.sort_unstable();
        let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
        v[rank.min(v.len()) - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageTag {
    OverlayRoute,
    ValidateRequest,
    ValidateReply,
    Fetch,
    Announce,
    Notify,
}

impl fmt::Display for MessageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageTag::OverlayRoute => "overlay-route",
            MessageTag::ValidateRequest => "validate-request",
            MessageTag::ValidateReply => "validate-reply",
            MessageTag::Fetch => "fetch",
            MessageTag::Announce => "announce",
            MessageTag::Notify => "notify",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope<M> {
    pub src: Address,
    pub dst: Address,
    pub tag: MessageTag,
    pub payload_len: u64,
    /// Entity whose lifecycle this message serves.
    pub context: Option<Identifier>,
    pub send_time: u64,
    pub deliver_time: u64,
    pub body: M,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContextStats {
    pub messages: u64,
    pub bytes: u64,
}

/// Addressing, latency, and counters. Scheduling of deliveries is the
/// caller's job; `send` only stamps the delivery time.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: usize,
    latency: LatencyMatrix,
    total_messages: u64,
    total_bytes: u64,
    uncontexted_messages: u64,
    per_context: HashMap<Identifier, ContextStats>,
    per_tag: HashMap<MessageTag, u64>,
    in_flight: u64,
    delivered: u64,
    /// Last (send_time, deliver_time) per ordered pair, for the FIFO check.
    last_on_pair: HashMap<(NodeIndex, NodeIndex), u64>,
}

impl Network {
    pub fn new(latency: LatencyMatrix) -> Self {
        Self {
            nodes: latency.nodes(),
            latency,
            total_messages: 0,
            total_bytes: 0,
            uncontexted_messages: 0,
            per_context: HashMap::new(),
            per_tag: HashMap::new(),
            in_flight: 0,
            delivered: 0,
            last_on_pair: HashMap::new(),
        }
    }

    pub fn latency(&self) -> &LatencyMatrix {
        &self.latency
    }

    pub fn is_registered(&self, a: Address) -> bool {
        (a.node as usize) < self.nodes && a == Address::for_node(a.node)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn send<M>(
        &mut self,
        src: Address,
        dst: Address,
        tag: MessageTag,
        payload_len: u64,
        context: Option<Identifier>,
        now: u64,
        body: M,
    ) -> Result<Envelope<M>, SimnetError> {
        for a in [src, dst] {
            if !self.is_registered(a) {
                return Err(SimnetError::UnknownAddress(a));
            }
        }
        if src == dst {
            return Err(SimnetError::SelfSend(src));
        }
        let deliver_time = now + self.latency.latency(src.node, dst.node);
        self.total_messages += 1;
        self.total_bytes += payload_len;
        *self.per_tag.entry(tag).or_default() += 1;
        match context {
            Some(id) => {
                let s = self.per_context.entry(id).or_default();
                s.messages += 1;
                s.bytes += payload_len;
            }
            None => self.uncontexted_messages += 1,
        }
        self.in_flight += 1;
        Ok(Envelope {
            src,
            dst,
            tag,
            payload_len,
            context,
            send_time: now,
            deliver_time,
            body,
        })
    }

    /// Records a delivery. Errors if it overtakes an earlier message on the
    /// same ordered pair.
    pub fn delivered<M>(&mut self, env: &Envelope<M>) -> Result<(), String> {
        self.in_flight -= 1;
        self.delivered += 1;
        let key = (env.src.node, env.dst.node);
        let prev = self.last_on_pair.insert(key, env.deliver_time);
        match prev {
            Some(t) if t > env.deliver_time => Err(format!(
                "FIFO violated on {} -> {}",
                env.src, env.dst
            )),
            _ => Ok(()),
        }
    }

    pub fn total_messages(&self) -> u64 {
        self.total_messages
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn in_flight(&self) -> u64 {
        self.in_flight
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }

    pub fn context(&self, id: &Identifier) -> ContextStats {
        self.per_context.get(id).copied().unwrap_or_default()
    }

    pub fn tag_count(&self, tag: MessageTag) -> u64 {
        self.per_tag.get(&tag).copied().unwrap_or(0)
    }

    pub fn check_accounting(&self) -> Result<(), String> {
        let contexted: u64 = self.per_context.values().map(|s| s.messages).sum();
        if contexted + self.uncontexted_messages != self.total_messages {
            return Err("per-context counts do not sum to the total".into());
        }
        if self.delivered + self.in_flight != self.total_messages {
            return Err("delivered + in-flight != sent".into());
        }
        Ok(())
    }
}
