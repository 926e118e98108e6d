//! Sampling strategies compared by the simulator: the adaptive monitor (ADP),
//! a rate inversely proportional to throughput (INV), uniform sampling (UNI),
//! full monitoring (FUM) and no monitoring (NOM).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sampling::{Monitor, MonitorEvent};
use crate::stats;
use crate::trace::{ConfigError, Millis, PerformanceRecord, ReleasedSample, RequestEvent, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "ADP")]
    Adp,
    #[serde(rename = "INV")]
    Inv,
    #[serde(rename = "UNI")]
    Uni,
    #[serde(rename = "FUM")]
    Fum,
    #[serde(rename = "NOM")]
    Nom,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] =
        [StrategyKind::Nom, StrategyKind::Fum, StrategyKind::Adp, StrategyKind::Inv, StrategyKind::Uni];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Adp => "ADP",
            StrategyKind::Inv => "INV",
            StrategyKind::Uni => "UNI",
            StrategyKind::Fum => "FUM",
            StrategyKind::Nom => "NOM",
        }
    }

    /// Stream id for the strategy's private decision generator.
    pub(crate) fn stream_id(self) -> u64 {
        match self {
            StrategyKind::Adp => 1,
            StrategyKind::Inv => 2,
            StrategyKind::Uni => 3,
            StrategyKind::Fum => 4,
            StrategyKind::Nom => 5,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy `{0}` (expected one of ADP, INV, UNI, FUM, NOM)")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ADP" => Ok(StrategyKind::Adp),
            "INV" => Ok(StrategyKind::Inv),
            "UNI" => Ok(StrategyKind::Uni),
            "FUM" => Ok(StrategyKind::Fum),
            "NOM" => Ok(StrategyKind::Nom),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

/// Sampling rate inversely proportional to throughput, anchored so that the
/// rate equals `max_rate` at the running median throughput.
#[derive(Debug, Clone, PartialEq)]
pub struct InvState {
    rate: f64,
    reference_throughput: f64,
    history: VecDeque<f64>,
    capacity: usize,
}

impl InvState {
    pub fn new(config: &SamplerConfig) -> Self {
        InvState {
            rate: config.max_rate,
            reference_throughput: 0.0,
            history: VecDeque::with_capacity(config.history_capacity),
            capacity: config.history_capacity,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reference_throughput(&self) -> f64 {
        self.reference_throughput
    }

    pub fn update(&mut self, throughput: f64, config: &SamplerConfig) -> f64 {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(throughput);
        let mut sorted: Vec<f64> = self.history.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        self.reference_throughput = sorted[stats::upper_median_index(sorted.len())];
        self.rate = inverse_rate(self.reference_throughput, throughput, config);
        self.rate
    }
}

/// `clamp(max_rate · reference / max(throughput, 1), min_rate, max_rate)`.
pub fn inverse_rate(reference: f64, throughput: f64, config: &SamplerConfig) -> f64 {
    (config.max_rate * reference / throughput.max(1.0)).clamp(config.min_rate, config.max_rate)
}

/// A configured strategy together with its state.
#[derive(Debug, Clone)]
pub enum Strategy {
    Adaptive(Box<Monitor>),
    Inverse { state: InvState, config: SamplerConfig },
    Uniform { rate: f64 },
    Full,
    None,
}

/// Result of a per-request decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub traced: bool,
    pub released: Option<ReleasedSample>,
}

impl Strategy {
    pub fn new(kind: StrategyKind, config: &SamplerConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(match kind {
            StrategyKind::Adp => Strategy::Adaptive(Box::new(Monitor::new(config.clone())?)),
            StrategyKind::Inv => Strategy::Inverse { state: InvState::new(config), config: config.clone() },
            StrategyKind::Uni => Strategy::Uniform { rate: config.max_rate },
            StrategyKind::Fum => Strategy::Full,
            StrategyKind::Nom => Strategy::None,
        })
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Adaptive(_) => StrategyKind::Adp,
            Strategy::Inverse { .. } => StrategyKind::Inv,
            Strategy::Uniform { .. } => StrategyKind::Uni,
            Strategy::Full => StrategyKind::Fum,
            Strategy::None => StrategyKind::Nom,
        }
    }

    pub fn decide<R: Rng + ?Sized>(&mut self, request: &RequestEvent, rng: &mut R) -> Decision {
        let traced = match self {
            Strategy::Adaptive(monitor) => {
                let obs = monitor.observe(request, rng);
                return Decision { traced: obs.traced, released: obs.released };
            }
            Strategy::Inverse { state, .. } => stats::bernoulli(state.rate, rng).expect("clamped rate"),
            Strategy::Uniform { rate } => stats::bernoulli(*rate, rng).expect("validated rate"),
            Strategy::Full => true,
            Strategy::None => false,
        };
        Decision { traced, released: None }
    }

    /// Periodic update with the last interval's measurements.
    pub fn tick(&mut self, now: Millis, current: PerformanceRecord) -> Option<ReleasedSample> {
        match self {
            Strategy::Adaptive(monitor) => monitor.on_tick(now, current),
            Strategy::Inverse { state, config } => {
                state.update(current.rps, config);
                None
            }
            _ => None,
        }
    }

    /// Nominal sampling rate currently in force.
    pub fn rate(&self) -> f64 {
        match self {
            Strategy::Adaptive(monitor) => monitor.rate(),
            Strategy::Inverse { state, .. } => state.rate(),
            Strategy::Uniform { rate } => *rate,
            Strategy::Full => 1.0,
            Strategy::None => 0.0,
        }
    }

    pub fn monitoring_enabled(&self) -> bool {
        match self {
            Strategy::Adaptive(monitor) => monitor.monitoring_enabled(),
            Strategy::None => false,
            _ => true,
        }
    }

    /// Index of the cycle new traces belong to; 0 for strategies without cycles.
    pub fn cycle_index(&self) -> u64 {
        match self {
            Strategy::Adaptive(monitor) => monitor.cycle_index(),
            _ => 0,
        }
    }

    pub fn drain_events(&mut self) -> Vec<MonitorEvent> {
        match self {
            Strategy::Adaptive(monitor) => monitor.drain_events(),
            _ => Vec::new(),
        }
    }

    pub fn monitor(&self) -> Option<&Monitor> {
        match self {
            Strategy::Adaptive(monitor) => Some(monitor),
            _ => None,
        }
    }
}
