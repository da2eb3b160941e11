//! Gauss–Hermite rules for expectations over Gaussian vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vect};

/// Settings for tensor-product Gauss–Hermite quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    /// Nodes per retained eigen-direction; odd so the mean is a node.
    pub nodes_per_dim: usize,
    /// Eigenvalues at or below this are treated as zero.
    pub rank_tolerance: f64,
    /// Maximum number of leaf evaluations of the recursion.
    pub budget: u64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes_per_dim: 15,
            rank_tolerance: 1e-12,
            budget: 20_000_000,
        }
    }
}

impl QuadratureSpec {
    pub fn with_nodes(nodes_per_dim: usize) -> Self {
        Self {
            nodes_per_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_dim < 3 || self.nodes_per_dim % 2 == 0 {
            return Err(Error::Malformed(format!(
                "nodes_per_dim must be odd and at least 3, got {}",
                self.nodes_per_dim
            )));
        }
        if !(self.rank_tolerance >= 0.0) {
            return Err(Error::Malformed("rank_tolerance must be nonnegative".into()));
        }
        if self.budget < self.nodes_per_dim as u64 {
            return Err(Error::Malformed("budget must be at least nodes_per_dim".into()));
        }
        Ok(())
    }
}

/// Nodes and weights for `E f(ξ)`, `ξ ~ N(0, 1)`; weights sum to 1.
///
/// Nodes from the Jacobi matrix of the probabilists' Hermite polynomials.
/// Weights come from the Christoffel function `1/Σ_k p_k(x)²` with `p_k`
/// orthonormal, which keeps the small tail weights accurate relative to
/// their size.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = Mat::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let (vals, _) = linalg::sym_eigen(&jacobi);
    let mut nodes: Vec<f64> = vals.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (mut prev, mut cur) = (0.0, 1.0);
            let mut sum = 1.0;
            for k in 1..n {
                let next = (x * cur - (k as f64 - 1.0).sqrt() * prev) / (k as f64).sqrt();
                prev = cur;
                cur = next;
                sum += cur * cur;
            }
            1.0 / sum
        })
        .collect();
    // Exact symmetry about zero; the eigensolver leaves ~1e-16 asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// A discrete approximation of `N(mean, cov)` as weighted points.
#[derive(Debug, Clone)]
pub struct GaussianRule {
    pub points: Vec<Vect>,
    pub weights: Vec<f64>,
    /// Number of retained eigen-directions.
    pub rank: usize,
}

/// Tensor rule for `N(mean, cov)` in the eigenbasis of `cov`.
pub fn gaussian_rule(mean: &Vect, cov: &Mat, spec: &QuadratureSpec) -> GaussianRule {
    let dim = mean.len();
    let (vals, vecs) = linalg::sym_eigen(cov);
    let dirs: Vec<Vect> = (0..dim)
        .filter(|&i| vals[i] > spec.rank_tolerance)
        .map(|i| vecs.column(i) * vals[i].sqrt())
        .collect();
    let (nodes, w1) = gauss_hermite(spec.nodes_per_dim);
    let n = nodes.len();
    let total = n.pow(dirs.len() as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dirs.len()];
    for _ in 0..total {
        let mut pt = mean.clone();
        let mut w = 1.0;
        for (dir, &i) in dirs.iter().zip(&idx) {
            pt.axpy(nodes[i], dir, 1.0);
            w *= w1[i];
        }
        points.push(pt);
        weights.push(w);
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    GaussianRule {
        points,
        weights,
        rank: dirs.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for n in [3, 5, 9, 15] {
            let (x, w) = gauss_hermite(n);
            let m = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
            assert!((m(0) - 1.0).abs() < 1e-14);
            assert!(m(1).abs() < 1e-14);
            assert!((m(2) - 1.0).abs() < 1e-12);
            assert!((m(4) - 3.0).abs() < 1e-11);
            if n >= 5 {
                assert!((m(8) - 105.0).abs() < 1e-8 * 105.0);
            }
        }
    }

    #[test]
    fn rule_matches_covariance() {
        let cov = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mean = Vect::from_column_slice(&[0.3, -0.2]);
        let rule = gaussian_rule(&mean, &cov, &QuadratureSpec::with_nodes(5));
        assert_eq!(rule.rank, 2);
        let mut c = Mat::zeros(2, 2);
        let mut m = Vect::zeros(2);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            m += p * *w;
        }
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let dv = p - &m;
            c += &dv * dv.transpose() * *w;
        }
        assert!((m - mean).abs().max() < 1e-14);
        assert!((c - cov).abs().max() < 1e-12);
    }

    #[test]
    fn degenerate_directions_are_skipped() {
        let cov = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rule = gaussian_rule(&Vect::zeros(2), &cov, &QuadratureSpec::with_nodes(7));
        assert_eq!(rule.rank, 1);
        assert_eq!(rule.points.len(), 7);
        let rule = gaussian_rule(&Vect::zeros(2), &Mat::zeros(2, 2), &QuadratureSpec::default());
        assert_eq!(rule.points.len(), 1);
    }
}
