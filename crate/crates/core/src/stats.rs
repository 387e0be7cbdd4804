//! Sample statistics: moments, batch-means standard errors, log-log fits and
//! a moment-based normality check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    if n == 0 {
        return Moments { n, mean: f64::NAN, variance: f64::NAN, skewness: f64::NAN, excess_kurtosis: f64::NAN };
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let variance = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Moments { n, mean, variance, skewness, excess_kurtosis }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0)
}

/// Batch-means standard error of a statistic: the statistic is evaluated on
/// `batches` contiguous blocks of `0..n` and the spread of the block values,
/// scaled by `sqrt(batches)`, estimates the error of the full-sample value.
pub fn batch_se<F: Fn(std::ops::Range<usize>) -> f64>(n: usize, batches: usize, stat: F) -> f64 {
    let b = batches.min(n).max(2);
    let values: Vec<f64> = (0..b).map(|k| stat(k * n / b..(k + 1) * n / b)).collect();
    (moments(&values).variance / b as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares on `(ln t, ln value)`.
pub fn fit_exponent(series: &[(f64, f64)]) -> Result<ExponentFit> {
    if series.len() < 5 {
        return Err(Error::Data(format!("need at least 5 points, got {}", series.len())));
    }
    if let Some(&(t, v)) = series.iter().find(|&&(t, v)| !(t > 0.0 && v > 0.0)) {
        return Err(Error::Data(format!("log-log fit needs positive data, got ({t}, {v})")));
    }
    let xs: Vec<f64> = series.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ExponentFit { slope, intercept, r_squared })
}

/// `n` log-spaced points spanning `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianityCheck {
    pub passed: bool,
    pub n: usize,
    /// Mean of the standardized sample and its standard error.
    pub mean: f64,
    pub mean_se: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub skewness_bound: f64,
    pub kurtosis_bound: f64,
}

pub const GAUSSIANITY_MIN_SAMPLES: usize = 1000;

/// Standardizes by `sqrt(target_variance)` and passes iff the mean is within
/// 4 standard errors of 0, `|skewness| <= 4 sqrt(6/n)` and
/// `|excess kurtosis| <= 4 sqrt(24/n)`.
pub fn gaussianity_check(samples: &[f64], target_variance: f64) -> Result<GaussianityCheck> {
    if samples.len() < GAUSSIANITY_MIN_SAMPLES {
        return Err(Error::Data(format!(
            "gaussianity check needs at least {GAUSSIANITY_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(target_variance > 0.0) {
        return Err(Error::Data(format!("target variance must be positive, got {target_variance}")));
    }
    let scale = target_variance.sqrt();
    let z: Vec<f64> = samples.iter().map(|x| x / scale).collect();
    let m = moments(&z);
    let n = m.n as f64;
    let mean_se = (m.variance / n).sqrt();
    let skewness_bound = 4.0 * (6.0 / n).sqrt();
    let kurtosis_bound = 4.0 * (24.0 / n).sqrt();
    let passed = m.mean.abs() <= 4.0 * mean_se
        && m.skewness.abs() <= skewness_bound
        && m.excess_kurtosis.abs() <= kurtosis_bound;
    Ok(GaussianityCheck {
        passed,
        n: m.n,
        mean: m.mean,
        mean_se,
        skewness: m.skewness,
        excess_kurtosis: m.excess_kurtosis,
        skewness_bound,
        kurtosis_bound,
    })
}
