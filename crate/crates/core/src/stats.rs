//! Small statistical toolkit for the verification harness: Wilson score
//! intervals, normal-theory mean intervals and the one-sample
//! Kolmogorov–Smirnov test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided standard normal quantile for confidence `level`.
pub fn z_value(level: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(0.5 + 0.5 * level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson(successes: u64, n: u64, level: f64) -> Interval {
    assert!(n > 0, "Wilson interval needs at least one trial");
    let z = z_value(level);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Interval {
        lo: (centre - half).max(0.0),
        hi: (centre + half).min(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub std_error: f64,
    pub ci: Interval,
}

/// Sample mean with a normal-theory confidence interval.
pub fn mean_ci(samples: &[f64], level: f64) -> MeanEstimate {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let std_dev = var.sqrt();
    let std_error = std_dev / (n as f64).sqrt();
    let z = z_value(level);
    MeanEstimate {
        n,
        mean,
        std_dev,
        std_error,
        ci: Interval {
            lo: mean - z * std_error,
            hi: mean + z * std_error,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

/// One-sample Kolmogorov–Smirnov test of `samples` against `cdf`.
///
/// For distributions with atoms the test is conservative.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < n {
        // ties: step the empirical CDF over the whole block
        let x = sorted[i];
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((j + 1) as f64 / nf - f);
        i = j + 1;
    }
    KsResult {
        n,
        statistic: d,
        p_value: kolmogorov_p_value(d, n),
    }
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
