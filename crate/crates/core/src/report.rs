//! Throughput, sampling-rate and memory-accuracy metrics over simulation
//! runs, plus the CSV artifacts written by `compare` and `report`.
//!
//! All CSV files start with a `# format: <name> v<N>` line; columns are fixed
//! and ordered as documented on each writer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::MonitorEvent;
use crate::sim::{RunResult, SecondStats};
use crate::strategy::StrategyKind;
use crate::trace::{CycleSummary, FrequencyTable, TraceParseError, TraceRecord, TypeId};

pub const SUMMARY_FORMAT: &str = "# format: reprtrace-summary v1";
pub const SERIES_FORMAT: &str = "# format: reprtrace-series v1";
pub const CYCLES_FORMAT: &str = "# format: reprtrace-cycles v1";
pub const DISTRIBUTION_FORMAT: &str = "# format: reprtrace-distribution v1";
pub const RUNS_FORMAT: &str = "# format: reprtrace-runs v1";

/// Mean memory delta per request type.
pub type TypeMeans = BTreeMap<TypeId, f64>;

/// Per-type mean memory delta; negative (invalid) measurements are dropped.
pub fn mean_memory_by_type<'a>(traces: impl IntoIterator<Item = &'a TraceRecord>) -> TypeMeans {
    let mut acc: BTreeMap<TypeId, (f64, u64)> = BTreeMap::new();
    for t in traces {
        if t.event.memory_delta < 0.0 {
            continue;
        }
        let slot = acc.entry(t.event.type_id.clone()).or_insert((0.0, 0));
        slot.0 += t.event.memory_delta;
        slot.1 += 1;
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub value: f64,
    /// Ground-truth types without any valid sampled measurement.
    pub missing: Vec<TypeId>,
    /// Percentage of ground-truth types covered by the sample.
    pub coverage_pct: f64,
}

/// Root-mean-square difference of per-type means over the ground-truth types.
///
/// Types absent from `sampled` are reported in `missing` and left out of the
/// mean instead of counting as zero. `None` when no type is covered.
pub fn rmse(ground: &TypeMeans, sampled: &TypeMeans) -> Option<Rmse> {
    let mut sq = 0.0;
    let mut covered = 0usize;
    let mut missing = Vec::new();
    for (ty, g) in ground {
        match sampled.get(ty) {
            Some(s) => {
                sq += (g - s) * (g - s);
                covered += 1;
            }
            None => missing.push(ty.clone()),
        }
    }
    if covered == 0 {
        return None;
    }
    Some(Rmse {
        value: (sq / covered as f64).sqrt(),
        missing,
        coverage_pct: 100.0 * covered as f64 / ground.len() as f64,
    })
}

/// Ground truth for RMSE: per-type means pooled over every FUM run given.
/// Pooling across seeds averages out the contention noise of any single
/// fully-monitored execution. `None` without FUM runs.
pub fn ground_truth(runs: &[RunResult]) -> Option<TypeMeans> {
    let fum: Vec<&RunResult> = runs.iter().filter(|r| r.strategy == StrategyKind::Fum).collect();
    if fum.is_empty() {
        return None;
    }
    Some(mean_memory_by_type(fum.iter().flat_map(|r| r.traces.iter())))
}

/// Mean requests per second.
pub fn throughput_stats(run: &RunResult) -> f64 {
    mean(run.series.iter().map(|s| s.throughput as f64))
}

/// Mean per-second sampling rate.
pub fn sampling_rate_stats(run: &RunResult) -> f64 {
    mean(run.series.iter().map(|s| s.sampling_rate))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanSd { mean, sd })
    }
}

/// Metrics of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub throughput: f64,
    pub sampling_rate: f64,
    /// Against the FUM run with the same seed, when there is one.
    pub rmse: Option<Rmse>,
    pub cycles: usize,
    pub timeouts: usize,
}

/// One row of the strategy comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub runs: usize,
    pub throughput: MeanSd,
    /// Relative to the NOM mean throughput, in percent.
    pub throughput_delta_pct: Option<f64>,
    pub sampling_rate: MeanSd,
    pub rmse: Option<MeanSd>,
    /// Runs with at least one uncovered request type.
    pub runs_with_missing_types: usize,
}

/// Request-type shares: the population and each tracing strategy's samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub type_id: TypeId,
    pub population_pct: f64,
    pub sampled_pct: BTreeMap<StrategyKind, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: Vec<RunMetrics>,
    pub summaries: Vec<StrategySummary>,
    pub distribution: Vec<DistributionRow>,
    pub warnings: Vec<String>,
    /// False when no FUM run provides ground truth.
    pub has_rmse: bool,
}

impl ComparisonReport {
    pub fn build(runs: &[RunResult]) -> ComparisonReport {
        let mut warnings = Vec::new();
        let ground = ground_truth(runs);
        let has_rmse = ground.is_some();
        if !has_rmse {
            warnings.push("no FUM run: RMSE columns omitted".to_string());
        }

        let mut ordered: Vec<&RunResult> = runs.iter().collect();
        ordered.sort_by_key(|r| (strategy_order(r.strategy), r.seed));

        let mut metrics = Vec::with_capacity(ordered.len());
        for run in &ordered {
            let rmse = match &ground {
                Some(g) if run.strategy != StrategyKind::Nom => {
                    let r = rmse(g, &mean_memory_by_type(&run.traces));
                    if r.is_none() {
                        warnings.push(format!("{} seed {}: no sampled type, RMSE undefined", run.strategy, run.seed));
                    }
                    r
                }
                _ => None,
            };
            if let Some(r) = &rmse {
                if !r.missing.is_empty() {
                    let names: Vec<&str> = r.missing.iter().map(|t| &**t).collect();
                    warnings.push(format!(
                        "{} seed {}: no valid samples for {} (coverage {:.1}%)",
                        run.strategy,
                        run.seed,
                        names.join(", "),
                        r.coverage_pct
                    ));
                }
            }
            metrics.push(RunMetrics {
                strategy: run.strategy,
                seed: run.seed,
                throughput: throughput_stats(run),
                sampling_rate: sampling_rate_stats(run),
                rmse,
                cycles: run.cycles.len(),
                timeouts: run.cycles.iter().filter(|c| c.reason == crate::trace::ReleaseReason::Timeout).count(),
            });
        }

        let kinds: BTreeSet<StrategyKind> = metrics.iter().map(|m| m.strategy).collect();
        let mut kinds: Vec<StrategyKind> = kinds.into_iter().collect();
        kinds.sort_by_key(|k| strategy_order(*k));
        let nom_mean = {
            let v: Vec<f64> =
                metrics.iter().filter(|m| m.strategy == StrategyKind::Nom).map(|m| m.throughput).collect();
            MeanSd::of(&v).map(|m| m.mean)
        };
        let summaries = kinds
            .iter()
            .map(|&kind| {
                let of_kind: Vec<&RunMetrics> = metrics.iter().filter(|m| m.strategy == kind).collect();
                let tr: Vec<f64> = of_kind.iter().map(|m| m.throughput).collect();
                let sr: Vec<f64> = of_kind.iter().map(|m| m.sampling_rate).collect();
                let rm: Vec<f64> = of_kind.iter().filter_map(|m| m.rmse.as_ref().map(|r| r.value)).collect();
                let throughput = MeanSd::of(&tr).expect("at least one run");
                StrategySummary {
                    strategy: kind,
                    runs: of_kind.len(),
                    throughput,
                    throughput_delta_pct: nom_mean.filter(|n| *n > 0.0).map(|n| 100.0 * (throughput.mean / n - 1.0)),
                    sampling_rate: MeanSd::of(&sr).expect("at least one run"),
                    rmse: if has_rmse { MeanSd::of(&rm) } else { None },
                    runs_with_missing_types: of_kind
                        .iter()
                        .filter(|m| m.rmse.as_ref().is_some_and(|r| !r.missing.is_empty()))
                        .count(),
                }
            })
            .collect();

        ComparisonReport { runs: metrics, summaries, distribution: distribution(&ordered), warnings, has_rmse }
    }

    pub fn summary(&self, kind: StrategyKind) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == kind)
    }

    /// Human-readable comparison table with `mean ± sd` cells.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}{:>24}{:>10}{:>20}", "strategy", "throughput (req/s)", "vs NOM", "sampling rate (%)");
        if self.has_rmse {
            let _ = write!(out, "{:>22}", "RMSE (KB)");
        }
        out.push('\n');
        for s in &self.summaries {
            let delta = s.throughput_delta_pct.map_or("-".to_string(), |d| format!("{d:+.1}%"));
            let _ = write!(
                out,
                "{:<8}{:>24}{:>10}{:>20}",
                s.strategy.name(),
                format!("{:.1} ± {:.1}", s.throughput.mean, s.throughput.sd),
                delta,
                format!("{:.1} ± {:.1}", 100.0 * s.sampling_rate.mean, 100.0 * s.sampling_rate.sd),
            );
            if self.has_rmse {
                let cell = s.rmse.map_or("-".to_string(), |r| format!("{:.1} ± {:.1}", r.mean, r.sd));
                let _ = write!(out, "{cell:>22}");
            }
            out.push('\n');
        }
        out
    }
}

fn strategy_order(kind: StrategyKind) -> usize {
    StrategyKind::ALL.iter().position(|k| *k == kind).expect("listed")
}

fn distribution(runs: &[&RunResult]) -> Vec<DistributionRow> {
    let mut population = BTreeMap::<TypeId, u64>::new();
    let mut sampled = BTreeMap::<StrategyKind, FrequencyTable>::new();
    for run in runs {
        for (ty, n) in run.population.iter() {
            *population.entry(ty.clone()).or_insert(0) += n;
        }
        if run.traces.is_empty() {
            continue;
        }
        let table = sampled.entry(run.strategy).or_default();
        for t in &run.traces {
            table.add(&t.event.type_id);
        }
    }
    let total: u64 = population.values().sum();
    population
        .into_iter()
        .map(|(ty, n)| DistributionRow {
            population_pct: 100.0 * n as f64 / total as f64,
            sampled_pct: sampled.iter().map(|(k, t)| (*k, 100.0 * t.proportion(&ty))).collect(),
            type_id: ty,
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}:{line}: {source}")]
    Trace { path: PathBuf, line: usize, source: TraceParseError },
    #[error("no stored runs in {0}")]
    Empty(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, ReportError> {
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Writes `summary.csv`, `runs.csv`, `distribution.csv`, `cycles.csv` and one
/// `series_<STRATEGY>_seed<N>.csv` per run into `out_dir`.
pub fn write_report(runs: &[RunResult], out_dir: &Path) -> Result<ComparisonReport, ReportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let report = ComparisonReport::build(runs);
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_summary(&report, &out_dir.join("summary.csv"))?;
    write_runs(&report, &out_dir.join("runs.csv"))?;
    write_distribution(&report, &out_dir.join("distribution.csv"))?;
    let mut ordered: Vec<&RunResult> = runs.iter().collect();
    ordered.sort_by_key(|r| (strategy_order(r.strategy), r.seed));
    write_cycles(&ordered, &out_dir.join("cycles.csv"))?;
    for run in ordered {
        write_series(&run.series, &out_dir.join(format!("series_{}_seed{}.csv", run.strategy, run.seed)))?;
    }
    Ok(report)
}

/// Columns: strategy, runs, throughput mean/sd, delta vs NOM (%), sampling
/// rate mean/sd, then RMSE mean/sd and runs with missing types when a FUM
/// ground truth exists.
pub fn write_summary(report: &ComparisonReport, path: &Path) -> Result<(), ReportError> {
    let mut f = create(path)?;
    let mut body = String::new();
    body.push_str(SUMMARY_FORMAT);
    body.push('\n');
    body.push_str(
        "strategy,runs,throughput_mean,throughput_sd,throughput_delta_vs_nom_pct,sampling_rate_mean,sampling_rate_sd",
    );
    if report.has_rmse {
        body.push_str(",rmse_mean,rmse_sd,runs_with_missing_types");
    }
    body.push('\n');
    for s in &report.summaries {
        let _ = write!(
            body,
            "{},{},{},{},{},{},{}",
            s.strategy,
            s.runs,
            s.throughput.mean,
            s.throughput.sd,
            fmt_opt(s.throughput_delta_pct),
            s.sampling_rate.mean,
            s.sampling_rate.sd
        );
        if report.has_rmse {
            let _ = write!(
                body,
                ",{},{},{}",
                fmt_opt(s.rmse.map(|r| r.mean)),
                fmt_opt(s.rmse.map(|r| r.sd)),
                s.runs_with_missing_types
            );
        }
        body.push('\n');
    }
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// Columns: strategy, seed, throughput, sampling_rate, rmse, coverage_pct,
/// cycles, timeouts.
pub fn write_runs(report: &ComparisonReport, path: &Path) -> Result<(), ReportError> {
    let mut body = format!("{RUNS_FORMAT}\nstrategy,seed,throughput,sampling_rate,rmse,coverage_pct,cycles,timeouts\n");
    for m in &report.runs {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{}",
            m.strategy,
            m.seed,
            m.throughput,
            m.sampling_rate,
            fmt_opt(m.rmse.as_ref().map(|r| r.value)),
            fmt_opt(m.rmse.as_ref().map(|r| r.coverage_pct)),
            m.cycles,
            m.timeouts
        );
    }
    let mut f = create(path)?;
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// Columns: type, population_pct, then one `<STRATEGY>_pct` per strategy
/// with traces. Every percentage column sums to 100.
pub fn write_distribution(report: &ComparisonReport, path: &Path) -> Result<(), ReportError> {
    let kinds: Vec<StrategyKind> = report.distribution.first().map_or(Vec::new(), |r| {
        let mut k: Vec<StrategyKind> = r.sampled_pct.keys().copied().collect();
        k.sort_by_key(|k| strategy_order(*k));
        k
    });
    let mut body = format!("{DISTRIBUTION_FORMAT}\ntype,population_pct");
    for k in &kinds {
        let _ = write!(body, ",{k}_pct");
    }
    body.push('\n');
    for row in &report.distribution {
        let _ = write!(body, "{},{}", row.type_id, row.population_pct);
        for k in &kinds {
            let _ = write!(body, ",{}", row.sampled_pct[k]);
        }
        body.push('\n');
    }
    let mut f = create(path)?;
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// Columns: strategy, seed, cycle_index, cycle_start_s, released_at_s,
/// length_s, sample_size, population_size, confidence, reason.
pub fn write_cycles(runs: &[&RunResult], path: &Path) -> Result<(), ReportError> {
    let mut f = create(path)?;
    let mut body = format!(
        "{CYCLES_FORMAT}\nstrategy,seed,cycle_index,cycle_start_s,released_at_s,length_s,sample_size,population_size,confidence,reason\n"
    );
    for run in runs {
        for c in &run.cycles {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{},{},{},{},{}",
                run.strategy,
                run.seed,
                c.cycle_index,
                c.cycle_start as f64 / 1000.0,
                c.released_at as f64 / 1000.0,
                (c.released_at - c.cycle_start) as f64 / 1000.0,
                c.sample_size,
                c.population_size,
                c.confidence,
                c.reason
            );
        }
    }
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// Columns: second, users, throughput, sampling_rate, monitoring_enabled, traced.
pub fn write_series(series: &[SecondStats], path: &Path) -> Result<(), ReportError> {
    let mut body = format!("{SERIES_FORMAT}\nsecond,users,throughput,sampling_rate,monitoring_enabled,traced\n");
    for s in series {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{}",
            s.second, s.users, s.throughput, s.sampling_rate, s.monitoring_enabled as u8, s.traced
        );
    }
    let mut f = create(path)?;
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(io_err(path))
}

/// A run as stored on disk: everything but the request log and traces, which
/// go to a separate trace file.
#[derive(Debug, Serialize, Deserialize)]
struct StoredRun {
    strategy: StrategyKind,
    seed: u64,
    series: Vec<SecondStats>,
    population: FrequencyTable,
    cycles: Vec<CycleSummary>,
    monitor_events: Vec<MonitorEvent>,
}

/// File stem used for a stored run.
pub fn run_stem(kind: StrategyKind, seed: u64) -> String {
    format!("{kind}_seed{seed}")
}

/// Writes `<stem>.json` and the trace file `<stem>.traces.tsv` into `dir`.
/// The request log is not stored.
pub fn save_run(run: &RunResult, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let stem = run_stem(run.strategy, run.seed);
    let meta = StoredRun {
        strategy: run.strategy,
        seed: run.seed,
        series: run.series.clone(),
        population: run.population.clone(),
        cycles: run.cycles.clone(),
        monitor_events: run.monitor_events.clone(),
    };
    let path = dir.join(format!("{stem}.json"));
    let mut f = create(&path)?;
    serde_json::to_writer(&mut f, &meta)
        .map_err(|e| ReportError::Format { path: path.clone(), message: e.to_string() })?;
    f.flush().map_err(io_err(&path))?;
    write_traces(&run.traces, &dir.join(format!("{stem}.traces.tsv")))
}

/// One trace per line in the tab-separated trace format.
pub fn write_traces(traces: &[TraceRecord], path: &Path) -> Result<(), ReportError> {
    let mut f = create(path)?;
    for t in traces {
        writeln!(f, "{t}").map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>, ReportError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let record =
            line.parse().map_err(|source| ReportError::Trace { path: path.to_path_buf(), line: i + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

/// Loads every run stored by [`save_run`] in `dir`, ordered by strategy and seed.
/// Loaded runs have an empty request log.
pub fn load_runs(dir: &Path) -> Result<Vec<RunResult>, ReportError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    paths.sort();
    let mut runs = Vec::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let meta: StoredRun = match serde_json::from_str(&text) {
            Ok(m) => m,
            // Other JSON files (e.g. the report itself) may share the directory.
            Err(_) => continue,
        };
        let traces_path = path.with_extension("traces.tsv");
        let traces = if traces_path.exists() { read_traces(&traces_path)? } else { Vec::new() };
        runs.push(RunResult {
            strategy: meta.strategy,
            seed: meta.seed,
            series: meta.series,
            traces,
            events: Vec::new(),
            population: meta.population,
            cycles: meta.cycles,
            monitor_events: meta.monitor_events,
        });
    }
    if runs.is_empty() {
        return Err(ReportError::Empty(dir.to_path_buf()));
    }
    runs.sort_by_key(|r| (strategy_order(r.strategy), r.seed));
    Ok(runs)
}
