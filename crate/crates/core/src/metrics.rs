//! Scoring rules and sample-based distances.

use serde::{Deserialize, Serialize};

use crate::degradation::FailureMode;
use crate::error::{Error, Result};

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical CRPS, `E|X - y| - 1/2 E|X - X'|`, with self-pairs included in the
/// second expectation.
pub fn crps_empirical(samples: &[f64], truth: f64) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "CRPS needs at least 2 samples, got {n}"
        )));
    }
    let x = sorted(samples);
    let nf = n as f64;
    let mae = x.iter().map(|v| (v - truth).abs()).sum::<f64>() / nf;
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - n - 1) x_(i), 1-based ranks
    let spread: f64 = x
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i + 1) as f64 - nf - 1.0) * v)
        .sum::<f64>()
        * 2.0
        / (nf * nf);
    Ok((mae - 0.5 * spread).max(0.0))
}

/// 1-Wasserstein distance between two empirical distributions, as the
/// integral of the absolute difference of their quantile functions.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate(
            "Wasserstein needs non-empty samples".into(),
        ));
    }
    let (xa, xb) = (sorted(a), sorted(b));
    if xa.len() == xb.len() {
        return Ok(xa.iter().zip(&xb).map(|(p, q)| (p - q).abs()).sum::<f64>() / xa.len() as f64);
    }
    let (na, nb) = (xa.len(), xb.len());
    // walk the merged quantile breakpoints i/na and j/nb with exact
    // integer comparisons (i * nb vs j * na)
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) * nb;
        let next_b = (j + 1) * na;
        let next = next_a.min(next_b) as f64 / (na * nb) as f64;
        total += (next - prev) * (xa[i] - xb[j]).abs();
        prev = next;
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
    }
    Ok(total)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let h = (x.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

pub fn quantile(samples: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(samples), q)
}

pub fn median(samples: &[f64]) -> f64 {
    quantile(samples, 0.5)
}

/// Central equal-tailed interval at `level`.
pub fn credible_interval(samples: &[f64], level: f64) -> (f64, f64) {
    let x = sorted(samples);
    let tail = 0.5 * (1.0 - level);
    (quantile_sorted(&x, tail), quantile_sorted(&x, 1.0 - tail))
}

/// Whether `truth` falls inside the central interval at `level`.
pub fn coverage(samples: &[f64], truth: f64, level: f64) -> Result<bool> {
    if samples.len() < 10 {
        return Err(Error::Degenerate(format!(
            "coverage needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Domain(format!(
            "coverage level {level} outside [0, 1]"
        )));
    }
    let (lo, hi) = credible_interval(samples, level);
    Ok(lo <= truth && truth <= hi)
}

pub fn classification_accuracy(predicted: &[FailureMode], truth: &[FailureMode]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "label arrays",
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Degenerate("no labels to score".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Degenerate(
            "pearson needs two equal-length series".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance series".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// One-sample Kolmogorov-Smirnov test against U(0, 1). Returns `(D, p)`
/// with the asymptotic Kolmogorov p-value (Stephens' small-sample correction).
pub fn ks_uniform(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Degenerate("KS test on empty sample".into()));
    }
    let x = sorted(values);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - v).max(v - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok((d, kolmogorov_survival(lambda)))
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_survival(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Per-parameter scores of one posterior against ground truth and, when
/// available, against a reference posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamScore {
    pub name: String,
    pub truth: f64,
    pub median: f64,
    pub crps: f64,
    pub covered_50: bool,
    pub covered_90: bool,
    /// Wasserstein distance to the reference posterior divided by `|truth|`.
    pub wasserstein_normalized: Option<f64>,
    /// Set when `truth == 0` and the distance is reported unnormalized.
    pub wasserstein_unnormalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub params: Vec<ParamScore>,
    pub mode_correct: bool,
}

pub fn score_param(
    name: &str,
    samples: &[f64],
    truth: f64,
    reference: Option<&[f64]>,
) -> Result<ParamScore> {
    let wasserstein = reference.map(|r| wasserstein_1d(samples, r)).transpose()?;
    let (w_norm, flagged) = match wasserstein {
        Some(w) if truth != 0.0 => (Some(w / truth.abs()), false),
        Some(w) => (Some(w), true),
        None => (None, false),
    };
    Ok(ParamScore {
        name: name.to_string(),
        truth,
        median: median(samples),
        crps: crps_empirical(samples, truth)?,
        covered_50: coverage(samples, truth, 0.5)?,
        covered_90: coverage(samples, truth, 0.9)?,
        wasserstein_normalized: w_norm,
        wasserstein_unnormalized: flagged,
    })
}
