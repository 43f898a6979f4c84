//! Summary statistics over per-seed success rates.
//!
//! Intervals are Student-t over seeds; p-values are two-sided. The
//! t-distribution CDF goes through the regularized incomplete beta function,
//! evaluated by a modified Lentz continued fraction.

use libm::{exp, fabs, lgamma, log, sqrt};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite sample value")]
    NonFinite,
    #[error("degrees of freedom must be positive")]
    Dof,
    #[error("probability must lie in (0, 1)")]
    Probability,
}

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (`n − 1` denominator); exactly 0 for constant
/// samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if fabs(d) < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if fabs(d) < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if fabs(d) < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x ∈ [0, 1]`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log(1.0 - x);
    let front = exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `dof > 0` degrees of freedom.
pub fn t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * inc_beta(0.5 * dof, 0.5, dof / (dof + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided tail probability `P(|T| ≥ |t|)`.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(0.5 * dof, 0.5, dof / (dof + t * t))
}

/// Quantile of Student's t, by bisection on the CDF.
pub fn t_quantile(prob: f64, dof: f64) -> Result<f64, StatsError> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(StatsError::Probability);
    }
    if !(dof > 0.0) {
        return Err(StatsError::Dof);
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while t_cdf(lo, dof) > prob {
        lo *= 2.0;
    }
    while t_cdf(hi, dof) < prob {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, dof) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * (1.0 + fabs(mid)) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mean and two-sided confidence interval half-width over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
}

fn check(xs: &[f64]) -> Result<(), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFewSamples(xs.len()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Student-t interval at `level` (e.g. 0.9): `t_{(1+level)/2, n−1}·s/√n`.
pub fn t_interval(xs: &[f64], level: f64) -> Result<Interval, StatsError> {
    check(xs)?;
    let n = xs.len() as f64;
    let s = sqrt(sample_variance(xs));
    let half_width = if s == 0.0 { 0.0 } else { t_quantile(0.5 + 0.5 * level, n - 1.0)? * s / sqrt(n) };
    Ok(Interval { mean: mean(xs), half_width })
}

/// 90% interval, the reporting convention.
pub fn aggregate(rates: &[f64]) -> Result<Interval, StatsError> {
    t_interval(rates, 0.9)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    /// Two-sided.
    pub p: f64,
    /// Both samples have zero variance and different means.
    pub degenerate: bool,
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom. Zero variance in both samples yields `t = 0, p = 1` for equal
/// means, else `t = ±∞, p = 0` flagged degenerate.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, StatsError> {
    check(a)?;
    check(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    let dof_flat = na + nb - 2.0;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            WelchResult { t: 0.0, dof: dof_flat, p: 1.0, degenerate: false }
        } else {
            let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
            WelchResult { t, dof: dof_flat, p: 0.0, degenerate: true }
        });
    }
    let t = (ma - mb) / sqrt(se2);
    let dof = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = if t == 0.0 { 1.0 } else { t_two_sided_p(t, dof) };
    Ok(WelchResult { t, dof, p, degenerate: false })
}
