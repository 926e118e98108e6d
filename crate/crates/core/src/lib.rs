//! Adaptive trace sampling that only releases samples representative of the
//! observed traffic, plus a workload simulator for comparing it with simpler
//! sampling strategies.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod report;
pub mod sampling;
pub mod scenario;
pub mod sim;
pub mod stats;
pub mod strategy;
pub mod trace;

pub use sampling::{Monitor, MonitorEvent, SharedMonitor};
pub use scenario::Scenario;
pub use sim::{run, RunResult};
pub use strategy::{Strategy, StrategyKind};
pub use trace::{RequestEvent, SamplerConfig, TraceRecord};
