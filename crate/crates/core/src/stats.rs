//! Statistical primitives used by the sampling decision, rate adaptation and
//! sample evaluation: Bernoulli trials, Student t-tests, the standard normal
//! quantile, Cochran's sample size and exponentially decaying confidence.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("parameter `{name}` out of range: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Significance level of a hypothesis test, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SignificanceLevel(f64);

impl SignificanceLevel {
    pub const FIVE_PERCENT: SignificanceLevel = SignificanceLevel(0.05);

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(SignificanceLevel(alpha))
        } else {
            Err(StatsError::InvalidParameter { name: "alpha", value: alpha })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Confidence level in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ConfidenceLevel(f64);

impl ConfidenceLevel {
    pub const FULL: ConfidenceLevel = ConfidenceLevel(1.0);

    pub fn new(conf: f64) -> Result<Self> {
        if conf > 0.0 && conf <= 1.0 {
            Ok(ConfidenceLevel(conf))
        } else {
            Err(StatsError::InvalidParameter { name: "conf", value: conf })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// One Bernoulli trial. Always consumes exactly one `f64` draw from `rng`.
pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool> {
    if !(0.0..=1.0).contains(&p) {
        return Err(StatsError::InvalidParameter { name: "p", value: p });
    }
    let u: f64 = rng.random();
    Ok(u < p)
}

/// Result of a Student t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub statistic: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

impl TTest {
    /// `true` when the null hypothesis of equal means is not rejected.
    pub fn equal_at(&self, alpha: SignificanceLevel) -> bool {
        self.p_value > alpha.value()
    }
}

/// Paired two-sided t-test on the differences `xs[i] - ys[i]`.
///
/// Zero-variance differences give a p-value of 1 when every difference is
/// zero and 0 otherwise.
pub fn paired_t(xs: &[f64], ys: &[f64]) -> Result<TTest> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: xs.len() });
    }
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let df = n - 1.0;
    if diffs.iter().all(|d| *d == diffs[0]) {
        let (statistic, p_value) = if diffs[0] == 0.0 { (0.0, 1.0) } else { (diffs[0].signum() * f64::INFINITY, 0.0) };
        return Ok(TTest { statistic, df, p_value });
    }
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df;
    let statistic = mean / (var / n).sqrt();
    Ok(TTest { statistic, df, p_value: two_sided_p(statistic, df) })
}

/// `true` ("equal") iff the paired test does not reject at `alpha`.
pub fn paired_t_test(xs: &[f64], ys: &[f64], alpha: SignificanceLevel) -> Result<bool> {
    Ok(paired_t(xs, ys)?.equal_at(alpha))
}

/// One-sample two-sided t-test of `values` against the postulated mean `mu0`.
pub fn one_sample_t(values: &[f64], mu0: f64) -> Result<TTest> {
    if values.len() < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    one_sample_t_from_moments(values.len(), mean, var, mu0)
}

/// One-sample test from summary moments (`var` is the unbiased sample variance).
/// A zero variance yields p = 1 when `mean == mu0`, else p = 0.
pub fn one_sample_t_from_moments(n: usize, mean: f64, var: f64, mu0: f64) -> Result<TTest> {
    if n < 2 {
        return Err(StatsError::InsufficientData { needed: 2, got: n });
    }
    let df = (n - 1) as f64;
    if var <= 0.0 {
        let p_value = if mean == mu0 { 1.0 } else { 0.0 };
        let statistic = if mean == mu0 { 0.0 } else { (mean - mu0).signum() * f64::INFINITY };
        return Ok(TTest { statistic, df, p_value });
    }
    let statistic = (mean - mu0) / (var / n as f64).sqrt();
    Ok(TTest { statistic, df, p_value: two_sided_p(statistic, df) })
}

pub fn one_sample_t_test(values: &[f64], mu0: f64, alpha: SignificanceLevel) -> Result<bool> {
    Ok(one_sample_t(values, mu0)?.equal_at(alpha))
}

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast for x < (a + 1) / (a + b + 2).
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
pub fn standard_normal_inverse_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -standard_normal_inverse_cdf(1.0 - p)
    }
}

/// Two-sided critical value: Φ⁻¹(1 − (1 − conf)/2).
pub fn normal_quantile(conf: ConfidenceLevel) -> Result<f64> {
    let c = conf.value();
    if c >= 1.0 {
        return Err(StatsError::InvalidParameter { name: "conf", value: c });
    }
    Ok(standard_normal_inverse_cdf(1.0 - (1.0 - c) / 2.0))
}

/// Cochran's minimum sample size with finite population correction.
///
/// At full confidence the uncorrected size diverges and the corrected size
/// tends to the population size, which is what is returned.
pub fn cochran_sample_size(
    conf: ConfidenceLevel,
    variability_p: f64,
    margin_e: f64,
    population_size: u64,
) -> Result<f64> {
    if !(variability_p > 0.0 && variability_p < 1.0) {
        return Err(StatsError::InvalidParameter { name: "variability_p", value: variability_p });
    }
    if !(margin_e > 0.0 && margin_e < 1.0) {
        return Err(StatsError::InvalidParameter { name: "margin_e", value: margin_e });
    }
    if population_size == 0 {
        return Err(StatsError::InvalidParameter { name: "population_size", value: 0.0 });
    }
    let big_n = population_size as f64;
    if conf.value() >= 1.0 {
        return Ok(big_n);
    }
    let n_inf = cochran_unbounded(conf, variability_p, margin_e)?;
    Ok(n_inf / (1.0 + (n_inf - 1.0) / big_n))
}

/// Cochran's n∞ = z²·p(1−p)/e² for an infinite population.
pub fn cochran_unbounded(conf: ConfidenceLevel, variability_p: f64, margin_e: f64) -> Result<f64> {
    let z = normal_quantile(conf)?;
    Ok(z * z * variability_p * (1.0 - variability_p) / (margin_e * margin_e))
}

/// Confidence e^(−t / max_length) for a cycle that is `t` seconds old.
pub fn decayed_confidence(t: f64, max_length: f64) -> ConfidenceLevel {
    debug_assert!(max_length > 0.0);
    let t = t.max(0.0);
    ConfidenceLevel((-t / max_length).exp().max(f64::MIN_POSITIVE))
}

/// Upper median index rule: for an even count the higher of the two middle
/// values is chosen. `sorted` must be non-empty and ascending.
pub(crate) fn upper_median_index(len: usize) -> usize {
    len / 2
}
