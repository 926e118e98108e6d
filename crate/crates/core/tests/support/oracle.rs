//! A deliberately naive re-implementation of the three monitor algorithms
//! (resampling decision, rate adaptation, sample evaluation) and a driver
//! that feeds it and the real monitor the same scripted requests and the
//! same random tape.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprtrace::trace::{Millis, PerformanceRecord, ReleaseReason, RequestEvent, SamplerConfig};
use reprtrace::Monitor;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Replays a fixed list of 64-bit words.
struct TapeRng {
    tape: Vec<u64>,
    pos: usize,
}

impl TapeRng {
    fn new(tape: Vec<u64>) -> Self {
        TapeRng { tape, pos: 0 }
    }
}

impl RngCore for TapeRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }
    fn next_u64(&mut self) -> u64 {
        let v = self.tape[self.pos];
        self.pos += 1;
        v
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

fn tape(len: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a9e);
    (0..len).map(|_| rng.next_u64()).collect()
}

/// A uniform in [0, 1) from the top 53 bits of a word.
fn unit(word: u64) -> f64 {
    (word >> 11) as f64 / (1u64 << 53) as f64
}

struct Req {
    second: u64,
    ty: &'static str,
    start: Millis,
    base_rt: f64,
}

const SECONDS: u64 = 20;

/// 200 requests over 20 s. Types rotate so every second sees all four;
/// the seconds slowed by monitoring (5–9) also carry fewer requests.
fn script() -> Vec<Req> {
    const TYPES: [(&str, f64); 7] =
        [("/a", 40.0), ("/b", 80.0), ("/a", 40.0), ("/c", 120.0), ("/a", 40.0), ("/b", 80.0), ("/d", 60.0)];
    let counts = [12u64, 14, 11, 13, 12, 7, 7, 8, 7, 7, 12, 11, 14, 9, 10, 12, 10, 8, 9, 7];
    assert_eq!(counts.iter().sum::<u64>(), 200);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut out = Vec::new();
    let mut k = 0;
    for (s, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let ty = TYPES[k % TYPES.len()];
            k += 1;
            let jitter = 0.8 + 0.4 * unit(rng.next_u64());
            out.push(Req { second: s as u64, ty: ty.0, start: s as u64 * 1000 + i * 1000 / n, base_rt: ty.1 * jitter });
        }
    }
    out
}

/// Response time of a scripted request given the sampler's monitoring flag:
/// monitoring slows seconds 5–9, and the workload itself is heavier in 12–15.
fn response_time(r: &Req, monitoring: bool) -> f64 {
    let mut rt = r.base_rt;
    if monitoring && (5..=9).contains(&r.second) {
        rt *= 2.0;
    }
    if (12..=15).contains(&r.second) {
        rt *= 1.3 + 0.1 * (r.second - 12) as f64;
    }
    rt
}

fn config() -> SamplerConfig {
    SamplerConfig { max_cycle_length: 6, history_capacity: 10, margin_e: 0.1, ..SamplerConfig::default() }
}

#[derive(Debug, Default, PartialEq)]
pub struct Trajectory {
    pub traced: Vec<bool>,
    /// Rate after each tick.
    pub rates: Vec<f64>,
    /// (time, cycle, sample size, timed out)
    pub releases: Vec<(Millis, u64, u64, bool)>,
    pub baselines: usize,
    /// Random words consumed.
    pub draws: usize,
}

/// Common driver: feeds the script second by second and ticks at every
/// second boundary with that second's measurements.
fn drive(sampler: &mut dyn Sampler) -> Trajectory {
    let reqs = script();
    let mut out = Trajectory::default();
    for s in 0..SECONDS {
        let me = sampler.monitoring();
        let mut per_type: BTreeMap<&str, (f64, u32)> = BTreeMap::new();
        let mut count = 0;
        for r in reqs.iter().filter(|r| r.second == s) {
            let rt = response_time(r, sampler.monitoring());
            let slot = per_type.entry(r.ty).or_default();
            slot.0 += rt;
            slot.1 += 1;
            count += 1;
            let (traced, released) = sampler.request(r.ty, r.start, rt);
            out.traced.push(traced);
            out.releases.extend(released);
        }
        let record =
            PerformanceRecord::new(count as f64, per_type.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)), me);
        let was_on = sampler.monitoring();
        out.releases.extend(sampler.tick((s + 1) * 1000, record));
        if was_on && !sampler.monitoring() {
            out.baselines += 1;
        }
        out.rates.push(sampler.rate());
    }
    out
}

type Release = Option<(Millis, u64, u64, bool)>;

trait Sampler {
    fn monitoring(&self) -> bool;
    fn rate(&self) -> f64;
    fn request(&mut self, ty: &str, start: Millis, rt: f64) -> (bool, Release);
    fn tick(&mut self, now: Millis, record: PerformanceRecord) -> Release;
}

struct Main {
    monitor: Monitor,
    rng: TapeRng,
}

fn summarize(s: reprtrace::trace::ReleasedSample) -> (Millis, u64, u64, bool) {
    (s.released_at, s.cycle_index, s.sample_stats.total(), s.reason == ReleaseReason::Timeout)
}

impl Sampler for Main {
    fn monitoring(&self) -> bool {
        self.monitor.monitoring_enabled()
    }
    fn rate(&self) -> f64 {
        self.monitor.rate()
    }
    fn request(&mut self, ty: &str, start: Millis, rt: f64) -> (bool, Release) {
        let obs = self.monitor.observe(&RequestEvent::new(ty, start, rt, 0.0), &mut self.rng);
        (obs.traced, obs.released.map(summarize))
    }
    fn tick(&mut self, now: Millis, record: PerformanceRecord) -> Release {
        self.monitor.on_tick(now, record).map(summarize)
    }
}

// ---- independent re-implementation ----

struct Naive {
    cfg: SamplerConfig,
    tape: Vec<u64>,
    pos: usize,
    rate: f64,
    on: bool,
    baseline_end: Option<Millis>,
    pop: Vec<String>,
    pop_rt: Vec<f64>,
    sample: Vec<String>,
    sample_rt: Vec<f64>,
    history: VecDeque<(f64, BTreeMap<String, f64>, bool)>,
    cycle_start: Millis,
    cycle: u64,
}

fn share(list: &[String], ty: &str) -> f64 {
    if list.is_empty() {
        0.0
    } else {
        list.iter().filter(|t| *t == ty).count() as f64 / list.len() as f64
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * dist.cdf(-t.abs())
}

impl Naive {
    fn new(cfg: SamplerConfig, tape: Vec<u64>) -> Self {
        Naive {
            rate: cfg.max_rate,
            cfg,
            tape,
            pos: 0,
            on: true,
            baseline_end: None,
            pop: vec![],
            pop_rt: vec![],
            sample: vec![],
            sample_rt: vec![],
            history: VecDeque::new(),
            cycle_start: 0,
            cycle: 0,
        }
    }

    fn release(&mut self, now: Millis, timeout: bool) -> Release {
        let size = self.sample.len() as u64;
        let had_population = !self.pop.is_empty();
        self.pop.clear();
        self.pop_rt.clear();
        self.sample.clear();
        self.sample_rt.clear();
        self.cycle_start = now;
        if !had_population {
            return None;
        }
        self.cycle += 1;
        Some((now, self.cycle - 1, size, timeout))
    }

    fn evaluate(&mut self, now: Millis) -> Release {
        let age = (now - self.cycle_start) as f64 / 1000.0;
        let max = self.cfg.max_cycle_length as f64;
        if age >= max {
            return self.release(now, true);
        }
        let conf = (-age / max).exp();
        let n = self.sample.len();
        if n < 2 || self.pop.is_empty() {
            return None;
        }
        // sample size
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - (1.0 - conf) / 2.0);
        let p = self.cfg.variability_p;
        let n0 = z * z * p * (1.0 - p) / (self.cfg.margin_e * self.cfg.margin_e);
        let needed = n0 / (1.0 + (n0 - 1.0) / self.pop.len() as f64);
        if n as f64 <= needed {
            return None;
        }
        // mean response time
        let m = mean(&self.sample_rt);
        let mu = mean(&self.pop_rt);
        let var = self.sample_rt.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let pval = if var == 0.0 {
            if m == mu {
                1.0
            } else {
                0.0
            }
        } else {
            two_sided_p((m - mu) / (var / n as f64).sqrt(), (n - 1) as f64)
        };
        if pval <= 0.05 * conf {
            return None;
        }
        // type balance
        let margin = 1.0 - conf + self.cfg.epsilon;
        for ty in &self.pop {
            if (share(&self.pop, ty) - share(&self.sample, ty)).abs() > margin {
                return None;
            }
        }
        self.release(now, false)
    }
}

impl Sampler for Naive {
    fn monitoring(&self) -> bool {
        self.on
    }
    fn rate(&self) -> f64 {
        self.rate
    }

    fn request(&mut self, ty: &str, start: Millis, rt: f64) -> (bool, Release) {
        let pop_share = share(&self.pop, ty);
        self.pop.push(ty.to_string());
        self.pop_rt.push(rt);
        if !self.on {
            return (false, None);
        }
        let u = unit(self.tape[self.pos]);
        self.pos += 1;
        if u >= self.rate {
            return (false, None);
        }
        if !self.sample.is_empty() && pop_share < share(&self.sample, ty) - self.cfg.epsilon {
            return (false, None);
        }
        self.sample.push(ty.to_string());
        self.sample_rt.push(rt);
        (true, self.evaluate(start))
    }

    fn tick(&mut self, now: Millis, record: PerformanceRecord) -> Release {
        if self.baseline_end.is_some_and(|end| now >= end) {
            self.on = true;
            self.baseline_end = None;
        }
        let me = record.monitoring_enabled;
        let rts: BTreeMap<String, f64> = record.mean_rt.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        if self.history.len() == self.cfg.history_capacity {
            self.history.pop_front();
        }
        self.history.push_back((record.rps, rts.clone(), me));

        let mut same: Vec<&(f64, BTreeMap<String, f64>, bool)> = self.history.iter().filter(|h| h.2 == me).collect();
        same.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let normal = &same[same.len() / 2].1;
        let mut cur = vec![];
        let mut norm = vec![];
        for (ty, v) in &rts {
            if let Some(o) = normal.get(ty) {
                cur.push(*v);
                norm.push(*o);
            }
        }
        if cur.len() >= 2 {
            let d: Vec<f64> = norm.iter().zip(&cur).map(|(a, b)| a - b).collect();
            let dm = mean(&d);
            let dv = d.iter().map(|x| (x - dm).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            let pval = if dv == 0.0 {
                if dm == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                two_sided_p(dm / (dv / d.len() as f64).sqrt(), (d.len() - 1) as f64)
            };
            let equal = pval > 0.05;
            let diff = cur.iter().sum::<f64>() / norm.iter().sum::<f64>() - 1.0;
            if me {
                if equal || diff <= 0.0 {
                    self.rate = (self.rate * (1.0 + diff.abs())).min(self.cfg.max_rate);
                } else if self.on {
                    self.on = false;
                    self.baseline_end = Some(now + self.cfg.baseline_duration * 1000);
                }
            } else if !equal && diff > 0.0 {
                self.rate = (self.rate * (1.0 - diff.abs())).max(self.cfg.min_rate);
            }
        }
        if now - self.cycle_start >= self.cfg.max_cycle_length * 1000 {
            self.evaluate(now)
        } else {
            None
        }
    }
}

const TAPE_LEN: usize = 400;

/// Runs the real monitor over the script.
pub fn main_trajectory() -> Trajectory {
    let mut main = Main { monitor: Monitor::new(config()).unwrap(), rng: TapeRng::new(tape(TAPE_LEN)) };
    let mut t = drive(&mut main);
    t.draws = main.rng.pos;
    t
}

/// Runs the naive re-implementation over the script.
pub fn naive_trajectory() -> Trajectory {
    let mut naive = Naive::new(config(), tape(TAPE_LEN));
    let mut t = drive(&mut naive);
    t.draws = naive.pos;
    t
}

/// First difference between two trajectories, if any.
pub fn difference(a: &Trajectory, b: &Trajectory) -> Option<String> {
    if a.traced != b.traced {
        let i = a.traced.iter().zip(&b.traced).position(|(x, y)| x != y).unwrap_or(0);
        return Some(format!("accept/reject differs at request {i}"));
    }
    if a.rates.len() != b.rates.len() {
        return Some("tick counts differ".into());
    }
    for (i, (x, y)) in a.rates.iter().zip(&b.rates).enumerate() {
        if (x - y).abs() > 1e-12 {
            return Some(format!("rate after tick {i}: {x} vs {y}"));
        }
    }
    if a.releases != b.releases {
        return Some(format!("release points differ: {:?} vs {:?}", a.releases, b.releases));
    }
    if a.baselines != b.baselines {
        return Some("baseline counts differ".into());
    }
    if a.draws != b.draws {
        return Some(format!("random tape consumption differs: {} vs {}", a.draws, b.draws));
    }
    None
}
