//! Command-line front end: `validate`, `run`, `compare` and `report`.
//!
//! Every flag has a scenario-file equivalent (`seed`, `strategy`,
//! `[compare] strategies/seeds`, `[output] dir/strict`); flags win. The
//! effective scenario is written to `<out>/scenario.toml`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::report::{self, ComparisonReport, ReportError};
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{self, RunResult, SimError};
use crate::strategy::StrategyKind;

pub const THREADS_ENV: &str = "REPRTRACE_THREADS";
const DEFAULT_OUT: &str = "reprtrace-out";

#[derive(Debug, Parser)]
#[command(name = "reprtrace", version, about = "Simulate and compare trace sampling strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Simulate one strategy with one seed.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate every strategy × seed pair and write a comparison report.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list, e.g. `ADP,INV,FUM`.
        #[arg(long = "strategy", alias = "strategies", value_delimiter = ',')]
        strategies: Option<Vec<StrategyKind>>,
        /// `1..10` (inclusive), `3-5`, or a comma-separated list.
        #[arg(long, alias = "seed")]
        seeds: Option<SeedList>,
    },
    /// Rebuild the report from runs stored by `run` or `compare`.
    Report {
        #[arg(long = "in")]
        in_dir: PathBuf,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file; the shipped default scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit non-zero when the results carry warnings.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl std::str::FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let range = s.split_once("..=").or_else(|| s.split_once("..")).or_else(|| s.split_once('-'));
        let seeds: Vec<u64> = if let Some((a, b)) = range {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?;
            if b < a {
                return Err(format!("empty seed range `{s}`"));
            }
            (a..=b).collect()
        } else {
            s.split(',')
                .map(|p| p.trim().parse::<u64>().map_err(|_| format!("bad seed `{p}`")))
                .collect::<Result<_, _>>()?
        };
        if seeds.is_empty() {
            return Err("no seeds given".into());
        }
        Ok(SeedList(seeds))
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} warning(s) in strict mode")]
    Strict(usize),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scenario(s) => CliError::Scenario(s),
            SimError::Config(c) => CliError::Config(c.to_string()),
        }
    }
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { scenario } => {
            let sc = load_scenario(scenario.as_deref())?;
            println!(
                "ok: {} request types, {} workload segments, {} s",
                sc.model.types.len(),
                sc.workload.segments.len(),
                sc.workload.total_duration()
            );
            Ok(())
        }
        Command::Run { common, strategy, seed } => {
            let mut sc = load_scenario(common.scenario.as_deref())?;
            if let Some(k) = strategy {
                sc.strategy = k;
            }
            if let Some(s) = seed {
                sc.seed = s;
            }
            let (out, strict) = apply_output(&mut sc, &common)?;
            let result = sim::run(&sc, sc.strategy, sc.seed)?;
            write_run(&result, &out)?;
            let timeouts = result.cycles.iter().filter(|c| c.reason == crate::trace::ReleaseReason::Timeout).count();
            println!(
                "{} seed {}: {} requests, {} traced, {} cycles ({} timed out) -> {}",
                result.strategy,
                result.seed,
                result.total_requests(),
                result.traces.len(),
                result.cycles.len(),
                timeouts,
                out.display()
            );
            if strict && timeouts > 0 {
                log::warn!("{timeouts} cycle(s) released by timeout");
                return Err(CliError::Strict(timeouts));
            }
            Ok(())
        }
        Command::Compare { common, strategies, seeds } => {
            let mut sc = load_scenario(common.scenario.as_deref())?;
            if let Some(k) = strategies {
                sc.compare.strategies = k;
            }
            if let Some(s) = seeds {
                sc.compare.seeds = s.0;
            }
            let (out, strict) = apply_output(&mut sc, &common)?;
            let runs = compare(&sc)?;
            let runs_dir = out.join("runs");
            for run in &runs {
                report::save_run(run, &runs_dir)?;
            }
            let report = report::write_report(&runs, &out)?;
            print!("{}", report.render_table());
            finish(&report, strict)
        }
        Command::Report { in_dir, out, strict } => {
            let runs = report::load_runs(&in_dir)?;
            let out = out.unwrap_or(in_dir);
            let report = report::write_report(&runs, &out)?;
            print!("{}", report.render_table());
            finish(&report, strict)
        }
    }
}

/// Runs the configured strategies × seeds, in parallel when allowed.
/// Results are ordered by strategy list then seed.
pub fn compare(sc: &Scenario) -> Result<Vec<RunResult>, CliError> {
    let jobs: Vec<(StrategyKind, u64)> =
        sc.compare.strategies.iter().flat_map(|&k| sc.compare.seeds.iter().map(move |&s| (k, s))).collect();
    let pool = thread_pool()?;
    let results: Vec<Result<RunResult, SimError>> =
        pool.install(|| jobs.par_iter().map(|&(k, s)| sim::run(sc, k, s)).collect());
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}: expected a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn load_scenario(path: Option<&Path>) -> Result<Scenario, CliError> {
    Ok(match path {
        Some(p) => Scenario::load(p)?,
        None => Scenario::default_scenario(),
    })
}

/// Folds `--out`/`--strict` into the scenario, revalidates it, creates the
/// output directory and echoes the effective scenario there.
fn apply_output(sc: &mut Scenario, common: &Common) -> Result<(PathBuf, bool), CliError> {
    if let Some(o) = &common.out {
        sc.output.dir = Some(o.clone());
    }
    sc.output.strict |= common.strict;
    sc.validate()?;
    let out = sc.output.dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
    let echo = out.join("scenario.toml");
    fs::write(&echo, sc.to_toml_string()).map_err(|source| CliError::Io { path: echo, source })?;
    Ok((out, sc.output.strict))
}

/// Stored run, trace file, monitor events (JSON lines) and per-second series.
fn write_run(run: &RunResult, out: &Path) -> Result<(), CliError> {
    report::save_run(run, out)?;
    let stem = report::run_stem(run.strategy, run.seed);
    let path = out.join(format!("{stem}.events.jsonl"));
    let mut f = fs::File::create(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    for e in &run.monitor_events {
        let line = serde_json::to_string(e).expect("events serialize");
        writeln!(f, "{line}").map_err(|source| CliError::Io { path: path.clone(), source })?;
    }
    report::write_series(&run.series, &out.join(format!("{stem}.series.csv")))?;
    Ok(())
}

// Warnings were already logged while the report was written.
fn finish(report: &ComparisonReport, strict: bool) -> Result<(), CliError> {
    if strict && !report.warnings.is_empty() {
        return Err(CliError::Strict(report.warnings.len()));
    }
    Ok(())
}
