use rand::seq::IndexedRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{overlap, Configuration};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng;
use crate::stats::{mean_se, Estimate};

/// One sampled covariance compared with its closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub name: String,
    pub pair: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub target: f64,
    pub z: f64,
    pub pass: bool,
}

impl CovarianceCheck {
    fn new(name: String, pair: usize, est: Estimate, target: f64) -> Self {
        let gap = (est.value - target).abs();
        let z = if est.std_error > 0.0 { gap / est.std_error } else if gap < 1e-12 { 0.0 } else { f64::INFINITY };
        Self { name, pair, estimate: est.value, std_error: est.std_error, target, z, pass: z <= 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub kappa: usize,
    pub n_draws: usize,
    pub pairs: Vec<(Configuration, Configuration)>,
    pub checks: Vec<CovarianceCheck>,
    pub pass: bool,
}

/// Deterministic replica pairs: a configuration with itself, then random pairs.
fn replica_pairs(n: usize, kappa: usize, n_pairs: usize, seed: u64) -> Vec<(Configuration, Configuration)> {
    let mut g = rng::stream(seed, "ass-pairs", 0);
    let states: Vec<usize> = (0..kappa).collect();
    let mut draw = || Configuration { sigma: (0..n).map(|_| *states.choose(&mut g).unwrap()).collect() };
    let mut out = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let a = draw();
        let b = if i == 0 { a.clone() } else { draw() };
        out.push((a, b));
    }
    out
}

fn cavity_sum(g: &Mat, n: usize, sigma: &[usize], state: usize, i: usize) -> f64 {
    (0..n)
        .filter(|&j| sigma[j] == state)
        .map(|j| g[(n + i, j)] + g[(j, n + i)])
        .sum()
}

/// Checks the cavity decomposition of `H_{N+M}` by sampling disorder.
///
/// For each replica pair compares, over `n_draws` independent disorders,
/// the sample covariances of `Z_i(k)`, of `Y`, and of `H′_N + √M·Y` with
/// `(2N/(N+M)) R`, `(N/(N+M)) Σ R²` and `N Σ R²`.
pub fn ass_covariance_check(
    n: usize,
    m: usize,
    kappa: usize,
    n_pairs: usize,
    n_draws: usize,
    seed: u64,
) -> Result<AssReport> {
    if n == 0 || kappa == 0 || n_pairs == 0 || n_draws < 2 {
        return Err(Error::Malformed("N, kappa and n_pairs must be positive and n_draws at least 2".into()));
    }
    let pairs = replica_pairs(n, kappa, n_pairs, seed);
    let total = n + m;
    let scale = 1.0 / (total as f64).sqrt();
    let y_scale = 1.0 / ((n * total) as f64).sqrt();
    let kk = kappa * kappa;
    // Per pair: κ² Z products, Y product, decomposed-H product.
    let width = kk + 2;
    let samples: Vec<Vec<f64>> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let mut g = rng::stream(seed, "ass-disorder", d as u64);
            let coupling = Mat::from_fn(total, total, |_, _| StandardNormal.sample(&mut g));
            let copy = Mat::from_fn(n, n, |_, _| StandardNormal.sample(&mut g));
            let common = |s: &[usize], w: &Mat| -> f64 {
                let mut e = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        if s[i] == s[j] {
                            e += w[(i, j)];
                        }
                    }
                }
                e
            };
            let mut row = Vec::with_capacity(pairs.len() * width);
            for (a, b) in &pairs {
                let (sa, sb) = (a.states(), b.states());
                for k in 0..kappa {
                    for k2 in 0..kappa {
                        let v = if m == 0 {
                            0.0
                        } else {
                            (0..m)
                                .map(|i| {
                                    scale * cavity_sum(&coupling, n, sa, k, i)
                                        * scale
                                        * cavity_sum(&coupling, n, sb, k2, i)
                                })
                                .sum::<f64>()
                                / m as f64
                        };
                        row.push(v);
                    }
                }
                let (ya, yb) = (y_scale * common(sa, &copy), y_scale * common(sb, &copy));
                row.push(ya * yb);
                let ha = scale * common(sa, &coupling) + (m as f64).sqrt() * ya;
                let hb = scale * common(sb, &coupling) + (m as f64).sqrt() * yb;
                row.push(ha * hb);
            }
            row
        })
        .collect();

    let column = |c: usize| -> Estimate { mean_se(&samples.iter().map(|r| r[c]).collect::<Vec<_>>()) };
    let nf = n as f64;
    let mut checks = Vec::new();
    for (p, (a, b)) in pairs.iter().enumerate() {
        let r = overlap(a, b, kappa)?.into_matrix();
        let sum_sq: f64 = r.iter().map(|v| v * v).sum();
        let base = p * width;
        if m > 0 {
            for k in 0..kappa {
                for k2 in 0..kappa {
                    let target = 2.0 * nf / total as f64 * r[(k, k2)];
                    checks.push(CovarianceCheck::new(format!("Z({},{})", k + 1, k2 + 1), p, column(base + k * kappa + k2), target));
                }
            }
        }
        checks.push(CovarianceCheck::new("Y".into(), p, column(base + kk), nf / total as f64 * sum_sq));
        checks.push(CovarianceCheck::new("H".into(), p, column(base + kk + 1), nf * sum_sq));
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(AssReport { n, m, kappa, n_draws, pairs, checks, pass })
}
