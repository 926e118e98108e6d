//! Invariants of the sampler, the statistics kit, the simulator and the
//! report as property checks. Shared by the `properties` and `acceptance`
//! targets; each check runs `cases` generated cases and returns the first
//! (shrunk) counterexample on failure.

#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reprtrace::report::{self, ComparisonReport, TypeMeans};
use reprtrace::stats;
use reprtrace::strategy::InvState;
use reprtrace::trace::{FrequencyTable, PerformanceRecord, ReleaseReason, ReleasedSample, RequestEvent, TypeId};
use reprtrace::{Monitor, SamplerConfig, Scenario, StrategyKind};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub const CASES: u32 = 1000;
const TYPES: [&str; 4] = ["/a", "/b", "/c", "/d"];

pub type Check = fn(u32) -> Result<(), String>;

/// Every check, by name.
pub const ALL: [(&str, Check); 10] = [
    ("rate clamping (adaptive)", rate_stays_within_bounds),
    ("rate clamping (inverse)", inverse_rate_stays_within_bounds),
    ("release criteria re-verification", releases_satisfy_release_criteria),
    ("frequency-table conservation", frequency_table_conserves_counts),
    ("monitor population conservation", monitor_population_is_conserved),
    ("decayed-confidence monotonicity", decayed_confidence_is_monotone),
    ("sample size shrinks with confidence", cochran_size_shrinks_as_confidence_decays),
    ("RMSE of identical means", rmse_of_identical_means_is_zero),
    ("simulator determinism", simulation_is_deterministic),
    ("RMSE(FUM vs FUM) = 0", fum_against_fum_has_zero_rmse),
];

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn config_strategy() -> impl Strategy<Value = SamplerConfig> {
    (0.001f64..0.5, 0.0f64..1.0, 0.0f64..0.2, 1u64..6, 2u64..40, 1usize..20, 0.02f64..0.4).prop_map(
        |(min_rate, span, epsilon, baseline, max_len, capacity, margin_e)| SamplerConfig {
            min_rate,
            max_rate: min_rate + span * (1.0 - min_rate),
            epsilon,
            baseline_duration: baseline,
            max_cycle_length: max_len,
            history_capacity: capacity,
            margin_e,
            ..SamplerConfig::default()
        },
    )
}

fn record_strategy() -> impl Strategy<Value = PerformanceRecord> {
    (0.0f64..300.0, prop::collection::vec(prop::option::of(1.0f64..500.0), 4), any::<bool>()).prop_map(
        |(rps, rts, me)| {
            PerformanceRecord::new(rps, TYPES.iter().zip(rts).filter_map(|(t, rt)| rt.map(|v| (*t, v))), me)
        },
    )
}

/// One step of a driver: a batch of requests then a tick.
#[derive(Debug, Clone)]
struct Step {
    requests: Vec<(usize, f64)>,
    record: PerformanceRecord,
    forced_rate: Option<f64>,
}

fn step_strategy() -> impl Strategy<Value = Step> {
    (
        prop::collection::vec((0usize..4, 1.0f64..400.0), 0..25),
        record_strategy(),
        prop::option::weighted(0.1, -1.0f64..2.0),
    )
        .prop_map(|(requests, record, forced_rate)| Step { requests, record, forced_rate })
}

fn drive_strategy(max_steps: usize) -> impl Strategy<Value = (SamplerConfig, Vec<Step>, u64)> {
    (config_strategy(), prop::collection::vec(step_strategy(), 1..max_steps), any::<u64>())
}

/// Feeds the steps to a monitor, one second apart, and returns every
/// release; `after_tick` sees the monitor after each tick.
fn drive(
    monitor: &mut Monitor,
    steps: &[Step],
    seed: u64,
    mut after_tick: impl FnMut(&Monitor) -> Result<(), TestCaseError>,
) -> Result<Vec<ReleasedSample>, TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut released = Vec::new();
    for (s, step) in steps.iter().enumerate() {
        let base = s as u64 * 1000;
        let n = step.requests.len().max(1) as u64;
        for (i, (ty, rt)) in step.requests.iter().enumerate() {
            let req = RequestEvent::new(TYPES[*ty], base + i as u64 * 1000 / n, *rt, 100.0);
            released.extend(monitor.observe(&req, &mut rng).released);
        }
        if let Some(r) = step.forced_rate {
            monitor.set_rate(r);
        }
        released.extend(monitor.on_tick(base + 1000, step.record.clone()));
        after_tick(monitor)?;
    }
    Ok(released)
}

pub fn rate_stays_within_bounds(cases: u32) -> Result<(), String> {
    check(cases, drive_strategy(40), |(cfg, steps, seed)| {
        let mut m = Monitor::new(cfg.clone()).unwrap();
        let (lo, hi) = (cfg.min_rate, cfg.max_rate);
        drive(&mut m, &steps, seed, |m| {
            prop_assert!(m.rate() >= lo && m.rate() <= hi, "rate {} outside [{}, {}]", m.rate(), lo, hi);
            Ok(())
        })?;
        Ok(())
    })
}

pub fn inverse_rate_stays_within_bounds(cases: u32) -> Result<(), String> {
    check(cases, (config_strategy(), prop::collection::vec(0.0f64..1e4, 1..100)), |(cfg, throughputs)| {
        let mut inv = InvState::new(&cfg);
        for t in throughputs {
            let r = inv.update(t, &cfg);
            prop_assert!(r >= cfg.min_rate && r <= cfg.max_rate);
        }
        Ok(())
    })
}

/// Every released sample satisfies the release rule when re-checked from
/// its own contents with an independent normal and t distribution.
pub fn releases_satisfy_release_criteria(cases: u32) -> Result<(), String> {
    check(cases, drive_strategy(40), |(cfg, steps, seed)| {
        let mut m = Monitor::new(cfg.clone()).unwrap();
        let released = drive(&mut m, &steps, seed, |_| Ok(()))?;
        let max_s = cfg.max_cycle_length as f64;
        for r in released {
            let len = r.cycle_length();
            let conf = r.confidence_at_release.value();
            prop_assert!((conf - (-len / max_s).exp()).abs() < 1e-12);
            prop_assert_eq!(r.sample_stats.total() as usize, r.traces.len());
            prop_assert!(r.population_stats.total() >= r.sample_stats.total());
            match r.reason {
                ReleaseReason::Timeout => prop_assert!(len >= max_s),
                ReleaseReason::Representative => {
                    prop_assert!(len < max_s);
                    let n = r.traces.len();
                    let big_n = r.population_stats.total() as f64;
                    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - (1.0 - conf) / 2.0);
                    let p = cfg.variability_p;
                    let n0 = z * z * p * (1.0 - p) / cfg.margin_e.powi(2);
                    prop_assert!(n as f64 > n0 / (1.0 + (n0 - 1.0) / big_n), "size {}", n);

                    let rts: Vec<f64> = r.traces.iter().map(|t| t.event.response_time).collect();
                    let mean = rts.iter().sum::<f64>() / n as f64;
                    let var = rts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    let pval = if var <= 1e-9 * mean * mean {
                        if (mean - r.population_mean_rt).abs() <= 1e-9 * mean {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        let t = (mean - r.population_mean_rt) / (var / n as f64).sqrt();
                        2.0 * StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap().cdf(-t.abs())
                    };
                    prop_assert!(pval > 0.05 * conf - 1e-9, "p {} at conf {}", pval, conf);

                    let margin = 1.0 - conf + cfg.epsilon;
                    for (ty, _) in r.population_stats.iter() {
                        let d = r.population_stats.proportion(ty) - r.sample_stats.proportion(ty);
                        prop_assert!(d.abs() <= margin + 1e-12, "{}: {} > {}", ty, d, margin);
                    }
                }
            }
        }
        Ok(())
    })
}

pub fn frequency_table_conserves_counts(cases: u32) -> Result<(), String> {
    check(cases, prop::collection::vec(0usize..6, 0..500), |adds| {
        let names = ["/a", "/b", "/c", "/d", "/e", "/f"];
        let mut table = FrequencyTable::new();
        let mut expected = BTreeMap::new();
        for i in &adds {
            table.add(&TypeId::from(names[*i]));
            *expected.entry(names[*i]).or_insert(0u64) += 1;
        }
        prop_assert_eq!(table.total(), adds.len() as u64);
        prop_assert_eq!(table.iter().map(|(_, n)| n).sum::<u64>(), table.total());
        for name in names {
            prop_assert_eq!(table.count(name), expected.get(name).copied().unwrap_or(0));
        }
        if !adds.is_empty() {
            let sum: f64 = table.types().map(|t| table.proportion(t)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        Ok(())
    })
}

/// Released cycles plus the open one partition the observed requests: no
/// request is lost or counted twice.
pub fn monitor_population_is_conserved(cases: u32) -> Result<(), String> {
    check(cases, drive_strategy(30), |(cfg, steps, seed)| {
        let mut m = Monitor::new(cfg).unwrap();
        let released = drive(&mut m, &steps, seed, |_| Ok(()))?;
        let seen: u64 = steps.iter().map(|s| s.requests.len() as u64).sum();
        let in_cycles: u64 = released.iter().map(|r| r.population_stats.total()).sum();
        prop_assert_eq!(in_cycles + m.population().total(), seen);
        for r in &released {
            for (ty, n) in r.sample_stats.iter() {
                prop_assert!(n <= r.population_stats.count(ty));
            }
        }
        Ok(())
    })
}

pub fn decayed_confidence_is_monotone(cases: u32) -> Result<(), String> {
    check(cases, (0.0f64..1e4, 0.0f64..1e4, 1.0f64..1e3), |(a, b, max)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c_lo = stats::decayed_confidence(lo, max).value();
        let c_hi = stats::decayed_confidence(hi, max).value();
        prop_assert!(c_lo >= c_hi);
        prop_assert!(c_hi > 0.0 && c_lo <= 1.0);
        prop_assert_eq!(stats::decayed_confidence(0.0, max).value(), 1.0);
        Ok(())
    })
}

pub fn cochran_size_shrinks_as_confidence_decays(cases: u32) -> Result<(), String> {
    check(cases, (0.0f64..500.0, 0.0f64..500.0, 1u64..100_000), |(t1, dt, pop)| {
        let c1 = stats::decayed_confidence(t1, 180.0);
        let c2 = stats::decayed_confidence(t1 + dt, 180.0);
        let n1 = stats::cochran_sample_size(c1, 0.5, 0.05, pop).unwrap();
        let n2 = stats::cochran_sample_size(c2, 0.5, 0.05, pop).unwrap();
        prop_assert!(n2 <= n1 + 1e-9);
        prop_assert!(n1 <= pop as f64 + 1e-9);
        Ok(())
    })
}

pub fn rmse_of_identical_means_is_zero(cases: u32) -> Result<(), String> {
    check(cases, prop::collection::btree_map("[a-z/]{1,6}", 0.0f64..1e5, 1..12), |values| {
        let g: TypeMeans = values.into_iter().map(|(k, v)| (TypeId::from(k.as_str()), v)).collect();
        let r = report::rmse(&g, &g).unwrap();
        prop_assert_eq!(r.value, 0.0);
        prop_assert!(r.missing.is_empty());
        Ok(())
    })
}

const TINY: &str = r#"
[sampler]
max_cycle_length = 5

[model]
capacity_users = 3.0
contention_gamma = 1.0
trace_cost = 10.0
monitor_load = 0.5
gc_negative_prob = 0.05
mem_noise = 2.0

[[model.types]]
id = "/x"
weight = 3.0
base_rt = 120.0
rt_dispersion = 0.3
base_mem = 500.0
mem_dispersion = 0.2

[[model.types]]
id = "/y"
weight = 1.0
base_rt = 300.0
rt_dispersion = 0.3
base_mem = 900.0
mem_dispersion = 0.2

[[workload]]
kind = "burst"
base_users = 2
peak_users = 5
at = 4.0
width = 4.0
duration = 8
"#;

fn tiny() -> Scenario {
    Scenario::from_toml_str(TINY, "tiny").unwrap()
}

pub fn simulation_is_deterministic(cases: u32) -> Result<(), String> {
    let sc = tiny();
    check(cases, (any::<u64>(), prop::sample::select(StrategyKind::ALL.to_vec())), |(seed, kind)| {
        let a = reprtrace::run(&sc, kind, seed).unwrap();
        let b = reprtrace::run(&sc, kind, seed).unwrap();
        prop_assert_eq!(a, b);
        Ok(())
    })
}

/// Ground truth against itself: a single FUM run has zero error.
pub fn fum_against_fum_has_zero_rmse(cases: u32) -> Result<(), String> {
    let sc = tiny();
    check(cases, any::<u64>(), |seed| {
        let fum = reprtrace::run(&sc, StrategyKind::Fum, seed).unwrap();
        let valid = fum.traces.iter().any(|t| t.event.memory_delta >= 0.0);
        let report = ComparisonReport::build(std::slice::from_ref(&fum));
        let rmse = report.runs[0].rmse.as_ref();
        if valid {
            prop_assert_eq!(rmse.map(|r| r.value), Some(0.0));
        } else {
            prop_assert!(rmse.is_none());
        }
        Ok(())
    })
}
