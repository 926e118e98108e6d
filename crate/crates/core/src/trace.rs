//! Domain types shared by the monitor, the strategies, the simulator and the
//! reporting code.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::ConfidenceLevel;

/// Request-type identifier, e.g. `/owners`. Cheap to clone.
pub type TypeId = Arc<str>;

/// Milliseconds since the start of a run.
pub type Millis = u64;

/// One application request occurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEvent {
    /// Global arrival order; breaks ties between equal `start` values.
    pub seq: u64,
    pub type_id: TypeId,
    pub start: Millis,
    pub response_time: f64,
    /// Measured memory delta in KB. Negative values are invalid measurements.
    pub memory_delta: f64,
}

impl RequestEvent {
    pub fn new(type_id: impl Into<TypeId>, start: Millis, response_time: f64, memory_delta: f64) -> Self {
        RequestEvent { seq: 0, type_id: type_id.into(), start, response_time, memory_delta }
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = seq;
        self
    }
}

/// A recorded execution trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub event: RequestEvent,
    pub cycle_index: u64,
    pub recorded_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceParseError {
    #[error("expected 5 tab-separated fields, found {0}")]
    FieldCount(usize),
    #[error("invalid {field}: `{value}`")]
    Field { field: &'static str, value: String },
}

impl TraceRecord {
    /// Tab-separated `cycle_index type_id start response_time memory_delta`.
    pub fn to_line(&self) -> String {
        self.to_string()
    }

    pub fn from_line(line: &str) -> Result<Self, TraceParseError> {
        line.parse()
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.event;
        write!(f, "{}\t{}\t{}\t{}\t{}", self.cycle_index, e.type_id, e.start, e.response_time, e.memory_delta)
    }
}

impl FromStr for TraceRecord {
    type Err = TraceParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() != 5 {
            return Err(TraceParseError::FieldCount(fields.len()));
        }
        fn parse<T: FromStr>(field: &'static str, value: &str) -> Result<T, TraceParseError> {
            value.parse().map_err(|_| TraceParseError::Field { field, value: value.to_string() })
        }
        if fields[1].is_empty() {
            return Err(TraceParseError::Field { field: "type_id", value: String::new() });
        }
        let cycle_index = parse("cycle_index", fields[0])?;
        let start = parse("start", fields[2])?;
        let event = RequestEvent {
            seq: 0,
            type_id: fields[1].into(),
            start,
            response_time: parse("response_time", fields[3])?,
            memory_delta: parse("memory_delta", fields[4])?,
        };
        // The line format does not carry the record time; traces are
        // recorded when the request is admitted.
        Ok(TraceRecord { event, cycle_index, recorded_at: start })
    }
}

/// Per-request-type counters for one cycle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<TypeId, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, type_id: &TypeId) {
        match self.counts.get_mut(type_id) {
            Some(c) => *c += 1,
            None => {
                self.counts.insert(type_id.clone(), 1);
            }
        }
        self.total += 1;
    }

    pub fn count(&self, type_id: &str) -> u64 {
        self.counts.get(type_id).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Share of `type_id`; 0 for an empty table.
    pub fn proportion(&self, type_id: &str) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(type_id) as f64 / self.total as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TypeId, u64)> {
        self.counts.iter().map(|(k, v)| (k, *v))
    }

    pub fn types(&self) -> impl Iterator<Item = &TypeId> {
        self.counts.keys()
    }
}

impl<T: Into<TypeId>> FromIterator<(T, u64)> for FrequencyTable {
    fn from_iter<I: IntoIterator<Item = (T, u64)>>(iter: I) -> Self {
        let mut table = FrequencyTable::new();
        for (k, v) in iter {
            let k = k.into();
            *table.counts.entry(k).or_insert(0) += v;
            table.total += v;
        }
        table
    }
}

/// Throughput plus per-type mean response times over one adaptation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub rps: f64,
    pub mean_rt: BTreeMap<TypeId, f64>,
    pub monitoring_enabled: bool,
}

impl PerformanceRecord {
    pub fn new<T: Into<TypeId>>(
        rps: f64,
        mean_rt: impl IntoIterator<Item = (T, f64)>,
        monitoring_enabled: bool,
    ) -> Self {
        PerformanceRecord {
            rps,
            mean_rt: mean_rt.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            monitoring_enabled,
        }
    }

    /// Aligned response times of the types present in both records, in type order.
    pub fn paired_with(&self, other: &PerformanceRecord) -> (Vec<f64>, Vec<f64>) {
        self.mean_rt.iter().filter_map(|(k, v)| other.mean_rt.get(k).map(|o| (*v, *o))).unzip()
    }
}

/// Size-limited FIFO history of performance records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReferenceTable {
    records: VecDeque<PerformanceRecord>,
    capacity: usize,
}

impl PerformanceReferenceTable {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        PerformanceReferenceTable { records: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, record: PerformanceRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &PerformanceRecord> {
        self.records.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

/// Parameters of the adaptive monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub max_rate: f64,
    pub min_rate: f64,
    /// Tolerance on per-type proportions used by the resampling check.
    pub epsilon: f64,
    /// Length of a performance baseline window, seconds.
    pub baseline_duration: u64,
    /// Rate adaptation period, seconds.
    pub adaptation_frequency: u64,
    /// Cycle timeout, seconds.
    pub max_cycle_length: u64,
    pub history_capacity: usize,
    pub variability_p: f64,
    pub margin_e: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_rate: 0.5,
            min_rate: 0.01,
            epsilon: 0.05,
            baseline_duration: 3,
            adaptation_frequency: 1,
            max_cycle_length: 180,
            history_capacity: 60,
            variability_p: 0.5,
            margin_e: 0.05,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |field, message: &str| Err(ConfigError { field, message: message.to_string() });
        if !(self.min_rate > 0.0 && self.min_rate <= 1.0) {
            return err("min_rate", "must be in (0, 1]");
        }
        if !(self.max_rate >= self.min_rate && self.max_rate <= 1.0) {
            return err("max_rate", "must be in [min_rate, 1]");
        }
        if !(self.epsilon >= 0.0) {
            return err("epsilon", "must be non-negative");
        }
        if self.baseline_duration == 0 {
            return err("baseline_duration", "must be positive");
        }
        if self.adaptation_frequency == 0 {
            return err("adaptation_frequency", "must be positive");
        }
        if self.max_cycle_length == 0 {
            return err("max_cycle_length", "must be positive");
        }
        if self.history_capacity == 0 {
            return err("history_capacity", "must be positive");
        }
        if !(self.variability_p > 0.0 && self.variability_p < 1.0) {
            return err("variability_p", "must be in (0, 1)");
        }
        if !(self.margin_e > 0.0 && self.margin_e < 1.0) {
            return err("margin_e", "must be in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReleaseReason {
    Representative,
    Timeout,
}

impl fmt::Display for ReleaseReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReleaseReason::Representative => "representative",
            ReleaseReason::Timeout => "timeout",
        })
    }
}

/// A sample handed off at the end of a monitoring cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleasedSample {
    pub cycle_index: u64,
    pub traces: Vec<TraceRecord>,
    pub population_stats: FrequencyTable,
    pub sample_stats: FrequencyTable,
    /// Mean response time of every request seen in the cycle.
    pub population_mean_rt: f64,
    pub cycle_start: Millis,
    pub released_at: Millis,
    pub confidence_at_release: ConfidenceLevel,
    pub reason: ReleaseReason,
}

impl ReleasedSample {
    /// Cycle length in seconds.
    pub fn cycle_length(&self) -> f64 {
        (self.released_at - self.cycle_start) as f64 / 1000.0
    }

    pub fn summary(&self) -> CycleSummary {
        CycleSummary {
            cycle_index: self.cycle_index,
            cycle_start: self.cycle_start,
            released_at: self.released_at,
            sample_size: self.sample_stats.total(),
            population_size: self.population_stats.total(),
            confidence: self.confidence_at_release.value(),
            reason: self.reason,
        }
    }
}

/// Trace-free description of a released sample, kept in run results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub cycle_index: u64,
    pub cycle_start: Millis,
    pub released_at: Millis,
    pub sample_size: u64,
    pub population_size: u64,
    pub confidence: f64,
    pub reason: ReleaseReason,
}
