//! Scenario files: application model, workload schedule, sampler parameters
//! and run settings, stored as TOML.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strategy::StrategyKind;
use crate::trace::SamplerConfig;

/// The scenario shipped with the crate.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}{}: {key}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Invalid { origin: String, line: Option<usize>, key: String, message: String },
}

impl ScenarioError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ScenarioError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

/// Profile of one request type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestTypeSpec {
    pub id: String,
    /// Relative popularity.
    pub weight: f64,
    /// Uncontended mean response time, ms.
    pub base_rt: f64,
    /// Log-normal sigma of the response time.
    pub rt_dispersion: f64,
    /// Mean memory delta, KB.
    pub base_mem: f64,
    /// Log-normal sigma of the memory delta.
    pub mem_dispersion: f64,
}

/// Synthetic model of the monitored application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppModel {
    pub types: Vec<RequestTypeSpec>,
    /// Effective concurrency above which response times degrade.
    pub capacity_users: f64,
    /// Slowdown per unit of relative overload.
    pub contention_gamma: f64,
    /// Worker time spent recording one trace, ms.
    pub trace_cost: f64,
    /// Extra effective users per user when every request is traced.
    #[serde(default)]
    pub monitor_load: f64,
    /// Probability that a memory measurement is invalid (negative).
    pub gc_negative_prob: f64,
    /// Log-normal sigma of memory measurement noise under unbounded overload;
    /// at relative overload `s` the sigma is `mem_noise · s / (1 + s)`.
    #[serde(default)]
    pub mem_noise: f64,
}

/// One piece of the workload schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Segment {
    Stationary { users: u32, duration: u64 },
    Seasonal { base_users: u32, amplitude: u32, period: f64, duration: u64 },
    Burst { base_users: u32, peak_users: u32, at: f64, width: f64, duration: u64 },
}

impl Segment {
    pub fn duration(&self) -> u64 {
        match self {
            Segment::Stationary { duration, .. }
            | Segment::Seasonal { duration, .. }
            | Segment::Burst { duration, .. } => *duration,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Segment::Stationary { .. } => "stationary",
            Segment::Seasonal { .. } => "seasonal",
            Segment::Burst { .. } => "burst",
        }
    }

    /// Users at `t` seconds into this segment.
    pub fn users_at(&self, t: f64) -> u32 {
        match *self {
            Segment::Stationary { users, .. } => users,
            Segment::Seasonal { base_users, amplitude, period, .. } => {
                let wave = (2.0 * std::f64::consts::PI * t / period).sin().max(0.0);
                (base_users as f64 + amplitude as f64 * wave).round() as u32
            }
            Segment::Burst { base_users, peak_users, at, width, .. } => {
                let ramp = (1.0 - (t - at).abs() / (width / 2.0)).max(0.0);
                (base_users as f64 + (peak_users as f64 - base_users as f64) * ramp).round() as u32
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("time {t}s is beyond the {total}s workload schedule")]
pub struct OutOfSchedule {
    pub t: f64,
    pub total: u64,
}

/// Ordered workload schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkloadSpec {
    pub segments: Vec<Segment>,
}

impl WorkloadSpec {
    pub fn total_duration(&self) -> u64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    /// Segment index and offset within it for absolute time `t` seconds.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), OutOfSchedule> {
        if t < 0.0 {
            return Err(OutOfSchedule { t, total: self.total_duration() });
        }
        let mut start = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let end = start + seg.duration() as f64;
            if t < end {
                return Ok((i, t - start));
            }
            start = end;
        }
        Err(OutOfSchedule { t, total: self.total_duration() })
    }

    pub fn users_at(&self, t: f64) -> Result<u32, OutOfSchedule> {
        let (i, offset) = self.locate(t)?;
        Ok(self.segments[i].users_at(offset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    pub strategies: Vec<StrategyKind>,
    pub seeds: Vec<u64>,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings { strategies: StrategyKind::ALL.to_vec(), seeds: (1..=10).collect() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    pub strict: bool,
}

fn default_seed() -> u64 {
    1
}

fn default_strategy() -> StrategyKind {
    StrategyKind::Adp
}

/// A complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: StrategyKind,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub model: AppModel,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub compare: CompareSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

/// Where a validation problem sits in the document.
#[derive(Debug, Clone, PartialEq)]
struct KeyPath {
    table: Option<&'static str>,
    index: Option<usize>,
    key: &'static str,
}

impl fmt::Display for KeyPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.table, self.index) {
            (Some(t), Some(i)) => write!(f, "{t}[{i}].{}", self.key),
            (Some(t), None) => write!(f, "{t}.{}", self.key),
            _ => f.write_str(self.key),
        }
    }
}

fn at(table: &'static str, index: Option<usize>, key: &'static str) -> KeyPath {
    KeyPath { table: Some(table), index, key }
}

impl Scenario {
    pub fn default_scenario() -> Self {
        Scenario::from_toml_str(DEFAULT_SCENARIO, "<default scenario>").expect("shipped scenario is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        Scenario::from_toml_str(&text, &path.display().to_string())
    }

    /// Parses and validates; `origin` names the source in error messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)
            .map_err(|e| ScenarioError::Parse { origin: origin.to_string(), message: e.to_string() })?;
        if let Err((path, message)) = scenario.check() {
            return Err(ScenarioError::Invalid {
                origin: origin.to_string(),
                line: locate_key(text, &path),
                key: path.to_string(),
                message,
            });
        }
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.check().map_err(|(path, message)| ScenarioError::Invalid {
            origin: "<scenario>".into(),
            line: None,
            key: path.to_string(),
            message,
        })
    }

    fn check(&self) -> Result<(), (KeyPath, String)> {
        let fail = |path: KeyPath, msg: &str| Err((path, msg.to_string()));
        if let Err(e) = self.sampler.validate() {
            return Err((at("sampler", None, e.field), e.message));
        }
        let m = &self.model;
        if m.types.is_empty() {
            return fail(at("model", None, "types"), "at least one request type is required");
        }
        let mut seen = BTreeSet::new();
        for (i, t) in m.types.iter().enumerate() {
            let p = |key| at("model.types", Some(i), key);
            if t.id.is_empty() || t.id.chars().any(char::is_whitespace) {
                return fail(p("id"), "must be non-empty and contain no whitespace");
            }
            if !seen.insert(t.id.as_str()) {
                return fail(p("id"), "duplicate request type");
            }
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return fail(p("weight"), "must be > 0");
            }
            if !(t.base_rt > 0.0 && t.base_rt.is_finite()) {
                return fail(p("base_rt"), "must be > 0");
            }
            if !(t.rt_dispersion >= 0.0) {
                return fail(p("rt_dispersion"), "must be >= 0");
            }
            if !(t.base_mem > 0.0 && t.base_mem.is_finite()) {
                return fail(p("base_mem"), "must be > 0");
            }
            if !(t.mem_dispersion >= 0.0) {
                return fail(p("mem_dispersion"), "must be >= 0");
            }
        }
        if !(m.capacity_users >= 1.0) {
            return fail(at("model", None, "capacity_users"), "must be >= 1");
        }
        if !(m.contention_gamma >= 0.0) {
            return fail(at("model", None, "contention_gamma"), "must be >= 0");
        }
        if !(m.trace_cost >= 0.0) {
            return fail(at("model", None, "trace_cost"), "must be >= 0");
        }
        if !(m.monitor_load >= 0.0) {
            return fail(at("model", None, "monitor_load"), "must be >= 0");
        }
        if !(0.0..1.0).contains(&m.gc_negative_prob) {
            return fail(at("model", None, "gc_negative_prob"), "must be in [0, 1)");
        }
        if !(m.mem_noise >= 0.0) {
            return fail(at("model", None, "mem_noise"), "must be >= 0");
        }
        if self.workload.segments.is_empty() {
            return fail(KeyPath { table: None, index: None, key: "workload" }, "at least one segment is required");
        }
        for (i, seg) in self.workload.segments.iter().enumerate() {
            let p = |key| at("workload", Some(i), key);
            if seg.duration() == 0 {
                return fail(p("duration"), "must be > 0");
            }
            match *seg {
                Segment::Stationary { users, .. } => {
                    if users < 1 {
                        return fail(p("users"), "must be >= 1");
                    }
                }
                Segment::Seasonal { base_users, period, .. } => {
                    if base_users < 1 {
                        return fail(p("base_users"), "must be >= 1");
                    }
                    if !(period > 0.0) {
                        return fail(p("period"), "must be > 0");
                    }
                }
                Segment::Burst { base_users, peak_users, at: centre, width, duration } => {
                    if base_users < 1 {
                        return fail(p("base_users"), "must be >= 1");
                    }
                    if peak_users < base_users {
                        return fail(p("peak_users"), "must be >= base_users");
                    }
                    if !(width > 0.0) {
                        return fail(p("width"), "must be > 0");
                    }
                    if !(centre >= 0.0 && centre < duration as f64) {
                        return fail(p("at"), "must lie inside the segment");
                    }
                }
            }
        }
        if self.compare.strategies.is_empty() {
            return fail(at("compare", None, "strategies"), "must not be empty");
        }
        if self.compare.seeds.is_empty() {
            return fail(at("compare", None, "seeds"), "must not be empty");
        }
        Ok(())
    }
}

/// 1-based line of `path` in a TOML document, following `[table]` and
/// `[[array]]` headers. Returns the header line when the key is absent.
fn locate_key(text: &str, path: &KeyPath) -> Option<usize> {
    let key_line = |line: &str| {
        let line = line.trim_start();
        line.strip_prefix(path.key).map(|rest| rest.trim_start().starts_with('=')).unwrap_or(false)
    };
    let header_of = |line: &str| -> Option<(bool, String)> {
        let t = line.trim();
        if let Some(inner) = t.strip_prefix("[[").and_then(|r| r.split("]]").next()) {
            return Some((true, inner.trim().to_string()));
        }
        if let Some(inner) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            return Some((false, inner.trim().to_string()));
        }
        None
    };

    let mut in_target = path.table.is_none();
    let mut occurrence = 0usize;
    let mut header_line = None;
    for (n, line) in text.lines().enumerate() {
        if let Some((is_array, name)) = header_of(line) {
            if in_target && header_line.is_some() {
                break;
            }
            in_target = false;
            if Some(name.as_str()) == path.table {
                match (is_array, path.index) {
                    (true, Some(i)) => {
                        if occurrence == i {
                            in_target = true;
                            header_line = Some(n + 1);
                        }
                        occurrence += 1;
                    }
                    (false, None) => {
                        in_target = true;
                        header_line = Some(n + 1);
                    }
                    _ => {}
                }
            }
            continue;
        }
        if in_target && key_line(line) {
            return Some(n + 1);
        }
    }
    header_line
}
