//! Evaluation statistics: proportions with Wilson intervals, percentile
//! bootstrap, Welch and proportion tests, and the clinical case harness.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

mod cases;
mod mcq;
mod special;

pub use cases::{
    accuracy, accuracy_by_disease, assisted_comparison, correction_stats, error_taxonomy,
    judge_accuracy, misdiagnosis_rate, relevance_stats, validate_cases, AssistedDelta,
    AssistedReport, CorrectionStats, DimensionSummary, ErrorLabels, EvalCase, GroundTruth,
    RelevanceSummary, Round, Severity, TaxonomyReport, Timing, HEALTHY, RESPONDERS,
};
pub use mcq::{
    build_questions, multiple_choice_eval, McqCase, McqQuestion, McqReport, OracleResponder,
    RandomResponder, Responder, OPTIONS,
};
pub use special::{normal_cdf, normal_quantile, regularized_incomplete_beta};

/// `k` out of `n`, with the real value alongside the counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub k: usize,
    pub n: usize,
    pub value: f64,
}

impl Rate {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if n == 0 || k > n {
            return Err(contract(alloc::format!("rate: need 0 <= k <= n and n >= 1, got {k}/{n}")));
        }
        Ok(Self { k, n, value: k as f64 / n as f64 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
}

/// A rate together with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub rate: Rate,
    pub ci: WilsonInterval,
}

impl Proportion {
    pub fn new(k: usize, n: usize, confidence: f64) -> Result<Self> {
        Ok(Self { rate: Rate::new(k, n)?, ci: wilson_interval(k, n, confidence)? })
    }
}

fn check_confidence(confidence: f64) -> Result<()> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(contract(alloc::format!("confidence {confidence} outside (0, 1)")))
    }
}

/// Two-sided normal critical value for `confidence`.
fn critical_z(confidence: f64) -> f64 {
    normal_quantile(0.5 + confidence / 2.0)
}

/// Wilson score interval. The bounds are pinned to exactly 0 and 1 at
/// `k = 0` and `k = n`, where the closed form is exact only up to rounding.
pub fn wilson_interval(successes: usize, n: usize, confidence: f64) -> Result<WilsonInterval> {
    if n == 0 {
        return Err(contract("wilson_interval: n must be at least 1"));
    }
    if successes > n {
        return Err(contract(alloc::format!("wilson_interval: {successes} successes out of {n}")));
    }
    check_confidence(confidence)?;
    let (half, center) = wilson_parts(successes, n, critical_z(confidence));
    let point = successes as f64 / n as f64;
    let lower = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, point) };
    let upper = if successes == n { 1.0 } else { (center + half).clamp(point, 1.0) };
    Ok(WilsonInterval { point, lower, upper, confidence })
}

/// `(half-width, center)` of the Wilson interval.
fn wilson_parts(k: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / den;
    let half = z / den * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    (half, center)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { resamples: 10_000, confidence: 0.95, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    /// Sample mean.
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    pub n: usize,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile bootstrap of the mean, quantiles by linear interpolation
/// between order statistics.
pub fn bootstrap_ci(values: &[f64], resamples: usize, confidence: f64, seed: u64) -> Result<BootstrapInterval> {
    if values.is_empty() {
        return Err(contract("bootstrap_ci: no values"));
    }
    if resamples == 0 {
        return Err(contract("bootstrap_ci: resamples must be positive"));
    }
    check_confidence(confidence)?;
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(crate::Error::Numeric(alloc::format!("bootstrap_ci: non-finite value {bad}")));
    }
    let n = values.len();
    let estimate = mean(values);
    if values.iter().all(|&v| v == values[0]) {
        let c = values[0];
        return Ok(BootstrapInterval { estimate: c, lower: c, upper: c, confidence, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    Ok(BootstrapInterval {
        estimate,
        lower: quantile_sorted(&means, alpha / 2.0),
        upper: quantile_sorted(&means, 1.0 - alpha / 2.0),
        confidence,
        n,
    })
}

/// Linear-interpolation quantile of sorted data (`h = (N−1)·q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Welch's two-sided t-test.
///
/// When both samples have zero variance the statistic is undefined; the
/// p-value is then 1 for equal means and 0 otherwise.
pub fn t_test_two_sided(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(contract(alloc::format!(
            "t_test_two_sided: need at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(bad) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(crate::Error::Numeric(alloc::format!("t_test_two_sided: non-finite value {bad}")));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (sample_variance(a) / a.len() as f64, sample_variance(b) / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / libm::sqrt(se2);
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    Ok(student_t_two_sided(t, df))
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Two-sided z-test of two proportions, each standard error taken as the
/// Wilson half-width divided by the critical value.
///
/// Same degenerate-case convention as [`t_test_two_sided`].
pub fn proportion_test(k1: usize, n1: usize, k2: usize, n2: usize, confidence: f64) -> Result<f64> {
    Rate::new(k1, n1)?;
    Rate::new(k2, n2)?;
    check_confidence(confidence)?;
    let z = critical_z(confidence);
    let se = |k, n| wilson_parts(k, n, z).0 / z;
    let (s1, s2) = (se(k1, n1), se(k2, n2));
    let diff = k1 as f64 / n1 as f64 - k2 as f64 / n2 as f64;
    let s = libm::hypot(s1, s2);
    if s == 0.0 {
        return Ok(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(libm::erfc(libm::fabs(diff) / s / core::f64::consts::SQRT_2).clamp(0.0, 1.0))
}
