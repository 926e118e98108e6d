//! The adaptive monitor: per-request sampling decision with resampling,
//! periodic sampling-rate adaptation against performance baselines, and
//! continuous evaluation of sample representativeness in monitoring cycles.

use std::mem;

use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, ConfidenceLevel, SignificanceLevel};
use crate::trace::{
    ConfigError, FrequencyTable, Millis, PerformanceRecord, PerformanceReferenceTable, ReleaseReason, ReleasedSample,
    RequestEvent, SamplerConfig, TraceRecord,
};

/// Significance level of the paired test used for rate adaptation, and the
/// base level of the sample-equivalence test.
pub const ADAPTATION_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error("performance records share no request type")]
    NoCommonTypes,
}

/// Notifications emitted by the monitor, in the order they happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MonitorEvent {
    RateChanged { at: Millis, from: f64, to: f64 },
    BaselineStarted { at: Millis, until: Millis },
    BaselineEnded { at: Millis },
    SampleReleased { at: Millis, cycle_index: u64, sample_size: u64, reason: ReleaseReason },
}

/// Streaming mean/variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Mutable state of one adaptive monitor.
#[derive(Debug, Clone)]
pub struct Monitor {
    config: SamplerConfig,
    rate: f64,
    monitoring_enabled: bool,
    baseline_until: Option<Millis>,
    population: FrequencyTable,
    sample: FrequencyTable,
    sample_traces: Vec<TraceRecord>,
    sample_rt: Moments,
    population_rt_sum: f64,
    population_rt_count: u64,
    perf_ref: PerformanceReferenceTable,
    cycle_start: Millis,
    cycle_index: u64,
    events: Vec<MonitorEvent>,
}

/// Outcome of feeding one request to [`Monitor::observe`].
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub traced: bool,
    pub released: Option<ReleasedSample>,
}

impl Monitor {
    /// Starts at `max_rate` with monitoring enabled and the first cycle at t = 0.
    pub fn new(config: SamplerConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Monitor {
            rate: config.max_rate,
            monitoring_enabled: true,
            baseline_until: None,
            population: FrequencyTable::new(),
            sample: FrequencyTable::new(),
            sample_traces: Vec::new(),
            sample_rt: Moments::default(),
            population_rt_sum: 0.0,
            population_rt_count: 0,
            perf_ref: PerformanceReferenceTable::new(config.history_capacity),
            cycle_start: 0,
            cycle_index: 0,
            events: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn monitoring_enabled(&self) -> bool {
        self.monitoring_enabled
    }

    pub fn baseline_until(&self) -> Option<Millis> {
        self.baseline_until
    }

    pub fn population(&self) -> &FrequencyTable {
        &self.population
    }

    pub fn sample(&self) -> &FrequencyTable {
        &self.sample
    }

    pub fn sample_traces(&self) -> &[TraceRecord] {
        &self.sample_traces
    }

    pub fn performance_reference(&self) -> &PerformanceReferenceTable {
        &self.perf_ref
    }

    pub fn cycle_index(&self) -> u64 {
        self.cycle_index
    }

    pub fn cycle_start(&self) -> Millis {
        self.cycle_start
    }

    pub fn population_mean_rt(&self) -> f64 {
        if self.population_rt_count == 0 {
            0.0
        } else {
            self.population_rt_sum / self.population_rt_count as f64
        }
    }

    pub fn drain_events(&mut self) -> Vec<MonitorEvent> {
        mem::take(&mut self.events)
    }

    /// Replaces the current cycle's counters. Intended for replaying a known
    /// state (tests, warm starts); traces are left untouched.
    pub fn seed_frequencies(&mut self, population: FrequencyTable, sample: FrequencyTable) {
        self.population = population;
        self.sample = sample;
    }

    pub fn set_monitoring_enabled(&mut self, enabled: bool) {
        self.monitoring_enabled = enabled;
        if enabled {
            self.baseline_until = None;
        }
    }

    pub fn set_rate(&mut self, rate: f64) {
        self.rate = rate.clamp(self.config.min_rate, self.config.max_rate);
    }

    /// Sampling decision for one request.
    ///
    /// The request always enters the population. It is traced when monitoring
    /// is on, the Bernoulli draw at the current rate succeeds, and its type is
    /// not over-represented in the sample: the population share (before this
    /// request) must be at least the sample share minus `epsilon`. An empty
    /// sample accepts anything.
    pub fn decide<R: Rng + ?Sized>(&mut self, request: &RequestEvent, rng: &mut R) -> bool {
        let population_share = self.population.proportion(&request.type_id);
        self.population.add(&request.type_id);
        self.population_rt_sum += request.response_time;
        self.population_rt_count += 1;

        if !self.monitoring_enabled {
            return false;
        }
        let draw = stats::bernoulli(self.rate, rng).expect("rate is kept within [min_rate, max_rate]");
        if !draw {
            return false;
        }
        let under_represented = self.sample.is_empty()
            || population_share >= self.sample.proportion(&request.type_id) - self.config.epsilon;
        if !under_represented {
            return false;
        }
        self.sample.add(&request.type_id);
        self.sample_rt.push(request.response_time);
        self.sample_traces.push(TraceRecord {
            event: request.clone(),
            cycle_index: self.cycle_index,
            recorded_at: request.start,
        });
        true
    }

    /// [`decide`](Self::decide) followed by a sample evaluation when the
    /// request was traced.
    pub fn observe<R: Rng + ?Sized>(&mut self, request: &RequestEvent, rng: &mut R) -> Observation {
        let traced = self.decide(request, rng);
        let released = if traced { self.evaluate_sample(request.start) } else { None };
        Observation { traced, released }
    }

    pub fn record_performance(&mut self, current: PerformanceRecord) {
        self.perf_ref.push(current);
    }

    /// Rate adaptation for one interval whose measurements are `current`.
    ///
    /// The branch taken depends on whether monitoring was on while `current`
    /// was measured. With monitoring on, a similar or faster interval raises
    /// the rate by `rate·|diff|`; a significantly slower one starts a
    /// performance baseline. Inside a baseline, a significantly slower
    /// interval means the workload itself is heavier, and the rate drops by
    /// `rate·|diff|`.
    pub fn adapt_rate(&mut self, current: PerformanceRecord, now: Millis) -> f64 {
        let measured_with_monitoring = current.monitoring_enabled;
        self.record_performance(current);
        let current = self.perf_ref.iter().last().expect("record just pushed");

        let Some(normal) = select_normal_behavior(&self.perf_ref, measured_with_monitoring) else {
            return self.rate;
        };
        let (normal_rt, current_rt) = normal.paired_with(current);
        if normal_rt.len() < 2 {
            return self.rate;
        }
        let alpha = SignificanceLevel::new(ADAPTATION_ALPHA).expect("constant in range");
        let equal = stats::paired_t_test(&normal_rt, &current_rt, alpha).expect("two or more pairs");
        let diff = perf_diff(current, normal).expect("common types checked above");

        let old = self.rate;
        if measured_with_monitoring {
            if equal || diff <= 0.0 {
                self.rate = (self.rate + self.rate * diff.abs()).min(self.config.max_rate);
            } else if self.monitoring_enabled {
                let until = now + self.config.baseline_duration * 1000;
                self.monitoring_enabled = false;
                self.baseline_until = Some(until);
                self.events.push(MonitorEvent::BaselineStarted { at: now, until });
            }
        } else if !equal && diff > 0.0 {
            self.rate = (self.rate - self.rate * diff.abs()).max(self.config.min_rate);
        }
        if self.rate != old {
            self.events.push(MonitorEvent::RateChanged { at: now, from: old, to: self.rate });
        }
        self.rate
    }

    /// Checks whether the current sample is representative of the cycle's
    /// population and releases it if so, or if the cycle timed out.
    ///
    /// With `conf` the decayed confidence of the cycle, the sample must
    /// (1) exceed Cochran's size for `conf`, (2) have a mean response time
    /// not significantly different from the population's at `0.05·conf`,
    /// and (3) keep every type's share within `(1 − conf) + epsilon` of
    /// its population share.
    pub fn evaluate_sample(&mut self, now: Millis) -> Option<ReleasedSample> {
        let elapsed_ms = now.saturating_sub(self.cycle_start);
        if elapsed_ms >= self.config.max_cycle_length * 1000 {
            return self.release(now, ReleaseReason::Timeout);
        }
        let conf = stats::decayed_confidence(elapsed_ms as f64 / 1000.0, self.config.max_cycle_length as f64);
        if self.is_representative(conf) {
            self.release(now, ReleaseReason::Representative)
        } else {
            None
        }
    }

    fn is_representative(&self, conf: ConfidenceLevel) -> bool {
        let sample_size = self.sample.total();
        if sample_size < 2 || self.population.is_empty() {
            return false;
        }
        let required =
            stats::cochran_sample_size(conf, self.config.variability_p, self.config.margin_e, self.population.total())
                .expect("config validated");
        if sample_size as f64 <= required {
            return false;
        }
        let Ok(alpha) = SignificanceLevel::new(ADAPTATION_ALPHA * conf.value()) else {
            return false;
        };
        let equivalent = stats::one_sample_t_from_moments(
            self.sample_rt.n as usize,
            self.sample_rt.mean,
            self.sample_rt.variance(),
            self.population_mean_rt(),
        )
        .map(|t| t.equal_at(alpha))
        .unwrap_or(false);
        if !equivalent {
            return false;
        }
        let margin = (1.0 - conf.value()) + self.config.epsilon;
        self.population.types().all(|t| (self.population.proportion(t) - self.sample.proportion(t)).abs() <= margin)
    }

    fn release(&mut self, now: Millis, reason: ReleaseReason) -> Option<ReleasedSample> {
        let elapsed = now.saturating_sub(self.cycle_start) as f64 / 1000.0;
        let conf = stats::decayed_confidence(elapsed, self.config.max_cycle_length as f64);
        let population_mean_rt = self.population_mean_rt();
        let population = mem::take(&mut self.population);
        let sample = mem::take(&mut self.sample);
        let traces = mem::take(&mut self.sample_traces);
        self.sample_rt = Moments::default();
        self.population_rt_sum = 0.0;
        self.population_rt_count = 0;
        let cycle_start = mem::replace(&mut self.cycle_start, now);
        let cycle_index = self.cycle_index;
        self.cycle_index += 1;
        if population.is_empty() {
            // Nothing observed: restart the cycle timer without a release.
            self.cycle_index = cycle_index;
            return None;
        }
        self.events.push(MonitorEvent::SampleReleased { at: now, cycle_index, sample_size: sample.total(), reason });
        Some(ReleasedSample {
            cycle_index,
            traces,
            population_stats: population,
            sample_stats: sample,
            population_mean_rt,
            cycle_start,
            released_at: now,
            confidence_at_release: conf,
            reason,
        })
    }

    /// Periodic entry point: ends an expired baseline, adapts the rate with
    /// the interval's measurements and enforces the cycle timeout.
    pub fn on_tick(&mut self, now: Millis, current: PerformanceRecord) -> Option<ReleasedSample> {
        if let Some(until) = self.baseline_until {
            if now >= until {
                self.monitoring_enabled = true;
                self.baseline_until = None;
                self.events.push(MonitorEvent::BaselineEnded { at: now });
            }
        }
        self.adapt_rate(current, now);
        if now.saturating_sub(self.cycle_start) >= self.config.max_cycle_length * 1000 {
            self.evaluate_sample(now)
        } else {
            None
        }
    }
}

/// The record at the (upper) median throughput among those with the given
/// monitoring flag. For an even count the higher of the two middle values
/// wins; among equal throughputs the oldest record is taken.
pub fn select_normal_behavior(
    perf_ref: &PerformanceReferenceTable,
    monitoring_enabled: bool,
) -> Option<&PerformanceRecord> {
    let mut matching: Vec<&PerformanceRecord> =
        perf_ref.iter().filter(|r| r.monitoring_enabled == monitoring_enabled).collect();
    if matching.is_empty() {
        return None;
    }
    matching.sort_by(|a, b| a.rps.total_cmp(&b.rps));
    Some(matching[stats::upper_median_index(matching.len())])
}

/// Relative change of the summed per-type response times over the types
/// both records share: `Σ current / Σ normal − 1`.
pub fn perf_diff(current: &PerformanceRecord, normal: &PerformanceRecord) -> Result<f64, SamplingError> {
    let (cur, norm) = current.paired_with(normal);
    if cur.is_empty() {
        return Err(SamplingError::NoCommonTypes);
    }
    Ok(cur.iter().sum::<f64>() / norm.iter().sum::<f64>() - 1.0)
}

/// A monitor shared between request-processing threads and the periodic
/// adaptation context. Every operation runs under one lock, so a cycle reset
/// is observed entirely before or after any concurrent decision.
#[derive(Debug)]
pub struct SharedMonitor {
    inner: Mutex<Monitor>,
}

impl SharedMonitor {
    pub fn new(monitor: Monitor) -> Self {
        SharedMonitor { inner: Mutex::new(monitor) }
    }

    pub fn observe<R: Rng + ?Sized>(&self, request: &RequestEvent, rng: &mut R) -> Observation {
        self.inner.lock().observe(request, rng)
    }

    pub fn on_tick(&self, now: Millis, current: PerformanceRecord) -> Option<ReleasedSample> {
        self.inner.lock().on_tick(now, current)
    }

    pub fn rate(&self) -> f64 {
        self.inner.lock().rate()
    }

    pub fn with<T>(&self, f: impl FnOnce(&mut Monitor) -> T) -> T {
        f(&mut self.inner.lock())
    }

    pub fn into_inner(self) -> Monitor {
        self.inner.into_inner()
    }
}
