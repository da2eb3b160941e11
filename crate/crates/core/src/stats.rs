//! Small statistics helpers: stable log-sum-exp, sample means with standard
//! errors, jackknife and bootstrap.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;

/// `log Σ exp(v)`, max-shifted. Empty input gives `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }

    /// Difference of two independent estimates.
    pub fn minus(self, other: Estimate) -> Estimate {
        Estimate {
            value: self.value - other.value,
            std_error: self.std_error.hypot(other.std_error),
        }
    }

    /// `|self - other| / combined SE`; infinite when both are exact and differ.
    pub fn z_score(self, other: Estimate) -> f64 {
        let se = self.std_error.hypot(other.std_error);
        let gap = (self.value - other.value).abs();
        if se == 0.0 {
            if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            gap / se
        }
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(samples: &[f64]) -> Estimate {
    let n = samples.len();
    if n == 0 {
        return Estimate {
            value: f64::NAN,
            std_error: f64::NAN,
        };
    }
    // Relative to the first sample, so constant input is exact.
    let x0 = samples[0];
    let mean = x0 + samples.iter().map(|x| x - x0).sum::<f64>() / n as f64;
    if n < 2 {
        return Estimate {
            value: mean,
            std_error: 0.0,
        };
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Estimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
    }
}

/// Delete-one jackknife for a statistic of the sample.
pub fn jackknife<F>(samples: &[f64], stat: F) -> Estimate
where
    F: Fn(&[f64]) -> f64,
{
    let n = samples.len();
    let full = stat(samples);
    if n < 2 {
        return Estimate {
            value: full,
            std_error: 0.0,
        };
    }
    let mut buf = Vec::with_capacity(n - 1);
    let leave: Vec<f64> = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend_from_slice(&samples[..i]);
            buf.extend_from_slice(&samples[i + 1..]);
            stat(&buf)
        })
        .collect();
    let mean = leave.iter().sum::<f64>() / n as f64;
    let var = leave.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Estimate {
        value: full,
        std_error: var.sqrt(),
    }
}

/// Nonparametric bootstrap standard error of `stat` over `n_items` units.
///
/// `stat` receives resampled unit indices. Each resample owns the stream
/// `(seed, "bootstrap", b)`.
pub fn bootstrap_se<F>(n_items: usize, resamples: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n_items < 2 || resamples < 2 {
        return 0.0;
    }
    let values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, "bootstrap", b as u64);
            let idx: Vec<usize> = (0..n_items).map(|_| rng.random_range(0..n_items)).collect();
            stat(&idx)
        })
        .collect();
    mean_se(&values).std_error * (resamples as f64).sqrt()
}

/// `log C(n; counts)` for a multinomial coefficient.
pub fn log_multinomial(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    ln_factorial(n) - counts.iter().map(|&c| ln_factorial(c)).sum::<f64>()
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((logsumexp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        let mut acc = LogSumExp::default();
        for x in [-3.0, 2.0, 700.0, 1.5] {
            acc.push(x);
        }
        assert!((acc.value() - logsumexp(&[-3.0, 2.0, 700.0, 1.5])).abs() < 1e-12);
    }

    #[test]
    fn jackknife_of_mean_matches_classical_se() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let jk = jackknife(&x, |s| s.iter().sum::<f64>() / s.len() as f64);
        let cl = mean_se(&x);
        assert!((jk.value - cl.value).abs() < 1e-12);
        assert!((jk.std_error - cl.std_error).abs() < 1e-12);
    }

    #[test]
    fn multinomial_counts() {
        assert!((log_multinomial(&[2, 2]) - 6f64.ln()).abs() < 1e-12);
        assert!((log_multinomial(&[4, 4]) - 70f64.ln()).abs() < 1e-12);
    }
}
