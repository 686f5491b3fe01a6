//! Two-tier memory model: a large slow store holding the constitutive state
//! partitions, a capacity-bounded fast arena, and a bandwidth-limited
//! full-duplex channel between them. Transfer and compute durations are
//! charged to a virtual nanosecond clock; the bytes themselves are really
//! copied.

mod pipeline;

use std::collections::BTreeMap;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constitutive::{SpringState, ELEMENT_STATE_BYTES, SPRINGS_PER_ELEMENT, SPRING_BYTES};
use crate::error::{Error, Result};

pub use pipeline::{run_direct, run_pipeline, run_serial, StageTiming};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Solver, constitutive update and matrix update all on the slow tier.
    SlowOnly,
    /// Matrix and solver on the fast tier; constitutive update on the slow
    /// tier with the increment sent down and the tangents sent up.
    SolverFast,
    /// Everything on the fast tier; constitutive states stream through two
    /// partition slots.
    Pipelined,
    /// Two problem sets, matrix-free solver, constitutive states streamed.
    PipelinedBatch2Ebe,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::SlowOnly,
        StrategyKind::SolverFast,
        StrategyKind::Pipelined,
        StrategyKind::PipelinedBatch2Ebe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SlowOnly => "slow_only",
            StrategyKind::SolverFast => "solver_fast",
            StrategyKind::Pipelined => "pipelined",
            StrategyKind::PipelinedBatch2Ebe => "pipelined_batch2_ebe",
        }
    }

    pub fn uses_crs(self) -> bool {
        self != StrategyKind::PipelinedBatch2Ebe
    }

    pub fn is_pipelined(self) -> bool {
        matches!(self, StrategyKind::Pipelined | StrategyKind::PipelinedBatch2Ebe)
    }

    /// Problem sets advanced together.
    pub fn max_sets(self) -> usize {
        if self == StrategyKind::PipelinedBatch2Ebe {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "1" | "slow_only" => StrategyKind::SlowOnly,
            "2" | "solver_fast" => StrategyKind::SolverFast,
            "3" | "pipelined" => StrategyKind::Pipelined,
            "4" | "pipelined_batch2_ebe" | "batch2" => StrategyKind::PipelinedBatch2Ebe,
            other => return Err(Error::invalid(format!("unknown strategy `{other}`"))),
        })
    }
}

/// Simulated channel: bandwidth in bytes/s and latency in s, per direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub bandwidth: f64,
    pub latency: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bandwidth: 25e9,
            latency: 5e-6,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !(self.latency >= 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::invalid(format!(
                "channel needs positive bandwidth and non-negative latency, got {} B/s, {} s",
                self.bandwidth, self.latency
            )));
        }
        Ok(())
    }

    /// Charged duration of one message, `ceil(1e9 (bytes / B + L))` ns.
    pub fn duration_ns(&self, bytes: u64) -> u64 {
        (1e9 * (bytes as f64 / self.bandwidth + self.latency)).ceil() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Slow to fast.
    Up,
    /// Fast to slow.
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReceipt {
    pub partition: Option<usize>,
    pub direction: Direction,
    pub bytes: u64,
    pub duration_ns: u64,
}

/// Byte and busy-time counters of the two directions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransferChannel {
    pub config: ChannelConfig,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub busy_up_ns: u64,
    pub busy_down_ns: u64,
}

impl TransferChannel {
    pub fn new(config: ChannelConfig) -> Result<Self> {
        config.validate()?;
        Ok(TransferChannel {
            config,
            ..Default::default()
        })
    }

    /// Charges one message and returns its receipt.
    pub fn charge(&mut self, partition: Option<usize>, direction: Direction, bytes: u64) -> TransferReceipt {
        let duration_ns = self.config.duration_ns(bytes);
        match direction {
            Direction::Up => {
                self.bytes_up += bytes;
                self.busy_up_ns += duration_ns;
            }
            Direction::Down => {
                self.bytes_down += bytes;
                self.busy_down_ns += duration_ns;
            }
        }
        TransferReceipt {
            partition,
            direction,
            bytes,
            duration_ns,
        }
    }

    pub fn reset(&mut self) {
        *self = TransferChannel {
            config: self.config,
            ..Default::default()
        };
    }
}

/// Handle of a fast-arena allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct AllocId(u64);

/// Capacity ledger of the fast tier.
#[derive(Clone, Debug)]
pub struct FastArena {
    capacity: u64,
    allocated: u64,
    peak: u64,
    next: u64,
    live: BTreeMap<AllocId, (String, u64)>,
}

impl FastArena {
    /// `None` means unbounded.
    pub fn new(capacity: Option<u64>) -> Self {
        FastArena {
            capacity: capacity.unwrap_or(u64::MAX),
            allocated: 0,
            peak: 0,
            next: 0,
            live: BTreeMap::new(),
        }
    }

    pub fn alloc(&mut self, what: impl Into<String>, bytes: u64) -> Result<AllocId> {
        let what = what.into();
        let available = self.capacity - self.allocated;
        if bytes > available {
            return Err(Error::Capacity {
                what,
                requested: bytes,
                available,
                capacity: self.capacity,
            });
        }
        self.allocated += bytes;
        self.peak = self.peak.max(self.allocated);
        assert!(self.allocated <= self.capacity, "fast arena over capacity");
        let id = AllocId(self.next);
        self.next += 1;
        self.live.insert(id, (what, bytes));
        Ok(id)
    }

    pub fn free(&mut self, id: AllocId) -> Result<()> {
        let (_, bytes) = self
            .live
            .remove(&id)
            .ok_or_else(|| Error::Residency(format!("double free of arena block {id:?}")))?;
        self.allocated -= bytes;
        Ok(())
    }

    pub fn allocated(&self) -> u64 {
        self.allocated
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn reset_peak(&mut self) {
        self.peak = self.allocated;
    }

    /// Live allocations as `(label, bytes)`.
    pub fn ledger(&self) -> Vec<(String, u64)> {
        self.live.values().cloned().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residency {
    Slow,
    Fast,
    InFlightUp,
    InFlightDown,
}

/// Constitutive states of all elements, split into contiguous partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionStore {
    pub partition_elems: usize,
    pub ranges: Vec<Range<usize>>,
    pub data: Vec<Vec<SpringState>>,
    pub residency: Vec<Residency>,
}

/// Splits `n` elements into `ceil(n / count)` contiguous partitions with
/// virgin spring states.
pub fn partition_states(n: usize, count: usize) -> Result<PartitionStore> {
    if n == 0 {
        return Err(Error::invalid("cannot partition zero elements"));
    }
    if count == 0 {
        return Err(Error::invalid("partition element count must be at least 1"));
    }
    let ranges: Vec<Range<usize>> = (0..n.div_ceil(count))
        .map(|p| p * count..((p + 1) * count).min(n))
        .collect();
    let data = ranges
        .iter()
        .map(|r| vec![SpringState::VIRGIN; r.len() * SPRINGS_PER_ELEMENT])
        .collect();
    let residency = vec![Residency::Slow; ranges.len()];
    Ok(PartitionStore {
        partition_elems: count,
        ranges,
        data,
        residency,
    })
}

/// Default partition size: eight partitions.
pub fn default_partition_elems(n: usize) -> usize {
    n.div_ceil(8).max(1)
}

impl PartitionStore {
    pub fn npart(&self) -> usize {
        self.ranges.len()
    }

    pub fn n_elements(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn partition_bytes(&self, p: usize) -> u64 {
        (self.ranges[p].len() * ELEMENT_STATE_BYTES) as u64
    }

    pub fn max_partition_bytes(&self) -> u64 {
        (0..self.npart())
            .map(|p| self.partition_bytes(p))
            .max()
            .unwrap_or(0)
    }

    pub fn total_bytes(&self) -> u64 {
        (self.n_elements() * ELEMENT_STATE_BYTES) as u64
    }

    /// Springs of element `e`, wherever its partition lives in the store.
    pub fn element(&self, e: usize) -> &[SpringState] {
        let p = e / self.partition_elems;
        let o = (e - self.ranges[p].start) * SPRINGS_PER_ELEMENT;
        &self.data[p][o..o + SPRINGS_PER_ELEMENT]
    }

    /// Serialized little-endian state of every element in order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_bytes() as usize);
        for part in &self.data {
            for s in part {
                s.write_le(&mut out);
            }
        }
        out
    }

    fn set(&mut self, p: usize, from: Residency, to: Residency) -> Result<()> {
        if self.residency[p] != from {
            return Err(Error::Residency(format!(
                "partition {p} is {:?}, expected {from:?} before moving to {to:?}",
                self.residency[p]
            )));
        }
        self.residency[p] = to;
        Ok(())
    }
}

/// Per-step telemetry record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub step: usize,
    pub strategy: Option<StrategyKind>,
    pub sets: usize,
    pub solver_s: f64,
    pub solver_iterations: Vec<usize>,
    pub solver_residual: Vec<f64>,
    /// Constitutive compute time charged by the cost model.
    pub constitutive_s: f64,
    pub transfer_up_s: f64,
    pub transfer_down_s: f64,
    pub crs_update_s: f64,
    pub overlapped_s: f64,
    /// Virtual wall time of the constitutive stage including transfers.
    pub multispring_stage_s: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub peak_arena_bytes: u64,
    pub resident_high_watermark: usize,
}

/// Charged constitutive compute time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ComputeCost {
    /// Wall-clock time of the real computation.
    #[default]
    Measured,
    /// Fixed cost per element in ns.
    PerElement { ns: u64 },
}

impl ComputeCost {
    pub fn charge(&self, elements: usize, measured_ns: u64) -> u64 {
        match *self {
            ComputeCost::Measured => measured_ns,
            ComputeCost::PerElement { ns } => ns * elements as u64,
        }
    }
}

/// Bytes of one element's tangents as shipped between tiers: four packed
/// symmetric 6x6 matrices.
pub const TANGENT_BYTES_PER_ELEMENT: u64 = 4 * 21 * 8;

/// Per-spring bytes; the store is an array of these.
pub const STATE_BYTES_PER_SPRING: u64 = SPRING_BYTES as u64;
