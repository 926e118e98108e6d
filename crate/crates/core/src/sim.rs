//! Discrete-time simulation of a request-serving application driven by a
//! closed-loop workload, with load-dependent response times and monitoring
//! overhead.
//!
//! Every user issues requests back to back. A request's response time is its
//! base time scaled by a log-normal factor and by a contention slowdown that
//! grows linearly once the effective concurrency exceeds the capacity knee.
//! Tracing a request costs the worker `trace_cost` ms after the response and
//! adds monitoring load to the effective concurrency of the next second.
//!
//! Request attributes come from one generator per user, so user `u`'s `k`-th
//! request is identical across strategies; only timing reacts to tracing.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::MonitorEvent;
use crate::scenario::{AppModel, Scenario, ScenarioError};
use crate::strategy::{Strategy, StrategyKind};
use crate::trace::{CycleSummary, FrequencyTable, PerformanceRecord, RequestEvent, TraceRecord, TypeId};

const USER_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid sampler configuration: {0}")]
    Config(#[from] crate::trace::ConfigError),
}

/// Measurements for one simulated second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStats {
    pub second: u64,
    pub users: u32,
    /// Requests started during the second.
    pub throughput: u64,
    /// Nominal sampling rate in force during the second.
    pub sampling_rate: f64,
    pub monitoring_enabled: bool,
    /// Requests traced during the second.
    pub traced: u64,
}

/// Everything produced by one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub series: Vec<SecondStats>,
    pub traces: Vec<TraceRecord>,
    /// Every request served, traced or not.
    pub events: Vec<RequestEvent>,
    /// Request counts per type over the whole run.
    pub population: FrequencyTable,
    pub cycles: Vec<CycleSummary>,
    pub monitor_events: Vec<MonitorEvent>,
}

impl RunResult {
    pub fn total_requests(&self) -> u64 {
        self.series.iter().map(|s| s.throughput).sum()
    }
}

struct RequestDraw {
    type_index: usize,
    rt_factor: f64,
    intrinsic_mem: f64,
    invalid_measurement: bool,
    noise_z: f64,
}

struct TypeTable {
    ids: Vec<TypeId>,
    cumulative: Vec<f64>,
}

impl TypeTable {
    fn new(model: &AppModel) -> Self {
        let total: f64 = model.types.iter().map(|t| t.weight).sum();
        let mut acc = 0.0;
        let cumulative = model
            .types
            .iter()
            .map(|t| {
                acc += t.weight / total;
                acc
            })
            .collect();
        TypeTable { ids: model.types.iter().map(|t| Arc::from(t.id.as_str())).collect(), cumulative }
    }

    fn pick(&self, u: f64) -> usize {
        self.cumulative.iter().position(|c| u < *c).unwrap_or(self.cumulative.len() - 1)
    }
}

fn lognormal_factor(sigma: f64, z: f64) -> f64 {
    // mean-one log-normal
    (sigma * z - 0.5 * sigma * sigma).exp()
}

struct User {
    rng: ChaCha8Rng,
    /// Time at which the user issues its next request, ms.
    clock: f64,
}

impl User {
    fn new(seed: u64, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(USER_STREAM_BASE + index as u64);
        User { rng, clock: 0.0 }
    }

    // Always consumes the same number of draws per request.
    fn draw(&mut self, types: &TypeTable, model: &AppModel) -> RequestDraw {
        let u_type: f64 = self.rng.random();
        let z_rt: f64 = self.rng.sample(StandardNormal);
        let z_mem: f64 = self.rng.sample(StandardNormal);
        let u_gc: f64 = self.rng.random();
        let noise_z: f64 = self.rng.sample(StandardNormal);
        let type_index = types.pick(u_type);
        let spec = &model.types[type_index];
        RequestDraw {
            type_index,
            rt_factor: lognormal_factor(spec.rt_dispersion, z_rt),
            intrinsic_mem: spec.base_mem * lognormal_factor(spec.mem_dispersion, z_mem),
            invalid_measurement: u_gc < model.gc_negative_prob,
            noise_z,
        }
    }
}

/// Relative overload above the capacity knee for an effective concurrency.
pub fn overload(model: &AppModel, effective_users: f64) -> f64 {
    (effective_users - model.capacity_users).max(0.0) / model.capacity_users
}

/// Effective concurrency given the traced fraction of the previous second.
pub fn effective_users(model: &AppModel, users: u32, traced_fraction: f64) -> f64 {
    users as f64 * (1.0 + model.monitor_load * traced_fraction)
}

/// Simulates `scenario` under strategy `kind` with `seed`.
pub fn run(scenario: &Scenario, kind: StrategyKind, seed: u64) -> Result<RunResult, SimError> {
    scenario.validate()?;
    let model = &scenario.model;
    let config = &scenario.sampler;
    let types = TypeTable::new(model);
    let mut strategy = Strategy::new(kind, config)?;
    let mut decision_rng = ChaCha8Rng::seed_from_u64(seed);
    decision_rng.set_stream(kind.stream_id());

    let duration = scenario.workload.total_duration();
    let mut users: Vec<User> = Vec::new();
    let mut series = Vec::with_capacity(duration as usize);
    let mut traces = Vec::new();
    let mut events = Vec::new();
    let mut cycles = Vec::new();
    let mut monitor_events = Vec::new();
    let mut population = FrequencyTable::new();

    let mut seq = 0u64;
    let mut traced_fraction = 0.0;
    let mut interval_rt: BTreeMap<usize, (f64, u64)> = BTreeMap::new();
    let mut interval_count = 0u64;

    for second in 0..duration {
        let start_ms = (second * 1000) as f64;
        let end_ms = start_ms + 1000.0;
        let active = scenario.workload.users_at(second as f64).expect("second within schedule") as usize;
        while users.len() < active {
            users.push(User::new(seed, users.len()));
        }

        let effective = effective_users(model, active as u32, traced_fraction);
        let stress = overload(model, effective);
        let slowdown = 1.0 + model.contention_gamma * stress;
        let noise_sigma = model.mem_noise * stress / (1.0 + stress);
        let rate = strategy.rate();
        let monitoring = strategy.monitoring_enabled();

        let mut queue: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::with_capacity(active);
        for (i, user) in users.iter_mut().enumerate().take(active) {
            user.clock = user.clock.max(start_ms);
            if user.clock < end_ms {
                queue.push(Reverse((user.clock.to_bits(), i)));
            }
        }

        let mut throughput = 0u64;
        let mut traced_count = 0u64;
        while let Some(Reverse((bits, u))) = queue.pop() {
            let at = f64::from_bits(bits);
            let user = &mut users[u];
            let draw = user.draw(&types, model);
            let spec = &model.types[draw.type_index];
            let response_time = spec.base_rt * draw.rt_factor * slowdown;
            let memory_delta = if draw.invalid_measurement {
                -draw.intrinsic_mem
            } else {
                draw.intrinsic_mem * lognormal_factor(noise_sigma, draw.noise_z)
            };
            let event = RequestEvent {
                seq,
                type_id: types.ids[draw.type_index].clone(),
                start: at as u64,
                response_time,
                memory_delta,
            };
            seq += 1;

            let cycle_index = strategy.cycle_index();
            let decision = strategy.decide(&event, &mut decision_rng);
            let mut service = response_time;
            if decision.traced {
                service += model.trace_cost;
                traced_count += 1;
                traces.push(TraceRecord { event: event.clone(), cycle_index, recorded_at: event.start });
            }
            if let Some(released) = decision.released {
                cycles.push(released.summary());
            }
            let slot = interval_rt.entry(draw.type_index).or_insert((0.0, 0));
            slot.0 += response_time;
            slot.1 += 1;
            throughput += 1;
            population.add(&event.type_id);
            events.push(event);

            user.clock = at + service;
            if user.clock < end_ms {
                queue.push(Reverse((user.clock.to_bits(), u)));
            }
        }
        interval_count += throughput;
        traced_fraction = if throughput == 0 { 0.0 } else { traced_count as f64 / throughput as f64 };

        series.push(SecondStats {
            second,
            users: active as u32,
            throughput,
            sampling_rate: rate,
            monitoring_enabled: monitoring,
            traced: traced_count,
        });

        if (second + 1) % config.adaptation_frequency == 0 {
            let current = PerformanceRecord {
                rps: interval_count as f64 / config.adaptation_frequency as f64,
                mean_rt: interval_rt.iter().map(|(i, (sum, n))| (types.ids[*i].clone(), sum / *n as f64)).collect(),
                monitoring_enabled: monitoring,
            };
            interval_rt.clear();
            interval_count = 0;
            if let Some(released) = strategy.tick((second + 1) * 1000, current) {
                cycles.push(released.summary());
            }
        }
        monitor_events.extend(strategy.drain_events());
    }

    Ok(RunResult { strategy: kind, seed, series, traces, events, population, cycles, monitor_events })
}
