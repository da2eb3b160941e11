use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{overlap, Configuration};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::rng;

/// Largest configuration set whose perturbation covariance is factorized.
pub const FIELD_BUDGET: usize = 512;

/// `θ = (p, m, n_1..n_m, λ^1..λ^m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub p: u32,
    pub n: Vec<u32>,
    pub lambdas: Vec<Vec<f64>>,
}

impl PerturbationSpec {
    pub fn new(p: u32, n: Vec<u32>, lambdas: Vec<Vec<f64>>) -> Result<Self> {
        let s = Self { p, n, lambdas };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n.is_empty() || self.n.iter().any(|&v| v == 0) {
            return Err(Error::Malformed("p, m and every n_j must be at least 1".into()));
        }
        if self.n.len() != self.lambdas.len() {
            return Err(Error::Dimension("one lambda per factor is required".into()));
        }
        let k = self.lambdas[0].len();
        if self
            .lambdas
            .iter()
            .any(|l| l.len() != k || l.iter().any(|v| !(*v >= -1.0 && *v <= 1.0)))
        {
            return Err(Error::Malformed("lambda entries must lie in [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.n.len()
    }

    pub fn kappa(&self) -> usize {
        self.lambdas[0].len()
    }

    /// `j(θ) = p + Σ n_j + Σ j_0(λ^j) + 4m` with `j_0` from [`lambda_index`].
    pub fn weight_index(&self) -> Result<u32> {
        let mut j = self.p + self.n.iter().sum::<u32>() + 4 * self.m() as u32;
        for l in &self.lambdas {
            j += lambda_index(l)?;
        }
        Ok(j)
    }
}

/// `((R^{∘p} λ^j, λ^j))_j`.
pub fn quadratic_forms(r: &Mat, p: u32, lambdas: &[Vec<f64>]) -> Vec<f64> {
    let k = r.nrows();
    let pw = r.map(|v| v.powi(p as i32));
    lambdas
        .iter()
        .map(|l| {
            let mut s = 0.0;
            for a in 0..k {
                for b in 0..k {
                    s += l[a] * pw[(a, b)] * l[b];
                }
            }
            s
        })
        .collect()
}

/// `Π_j forms_j^{n_j}`.
pub fn product_of_powers(forms: &[f64], n: &[u32]) -> f64 {
    forms
        .iter()
        .zip(n)
        .fold(1.0, |acc, (f, &e)| acc * f.powi(e as i32))
}

/// `C^θ = Π_j ((R^{∘p} λ^j, λ^j))^{n_j}`.
pub fn perturbation_covariance(spec: &PerturbationSpec, r: &Mat) -> f64 {
    product_of_powers(&quadratic_forms(r, spec.p, &spec.lambdas), &spec.n)
}

const GRID: [(i32, i32); 5] = [(0, 1), (1, 2), (-1, 2), (1, 1), (-1, 1)];

/// The rational vectors with entries in `{0, ±1/2, ±1}`, ordered by common
/// denominator, then L1 norm, then lexicographically.
pub fn lambda_grid(kappa: usize) -> Vec<Vec<f64>> {
    let total = GRID.len().pow(kappa as u32);
    let mut items: Vec<(i32, i32, Vec<i32>, Vec<f64>)> = (0..total)
        .map(|code| {
            let mut c = code;
            let mut num = Vec::with_capacity(kappa);
            let mut denom = 1;
            let mut vals = Vec::with_capacity(kappa);
            for _ in 0..kappa {
                let (a, b) = GRID[c % GRID.len()];
                c /= GRID.len();
                denom = denom.max(b);
                num.push(a * (2 / b));
                vals.push(a as f64 / b as f64);
            }
            let l1 = num.iter().map(|v| v.abs()).sum();
            (denom, l1, num, vals)
        })
        .collect();
    items.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));
    items.into_iter().map(|t| t.3).collect()
}

/// `j_0(λ)`, the 1-based position of `λ` in [`lambda_grid`].
pub fn lambda_index(lambda: &[f64]) -> Result<u32> {
    lambda_grid(lambda.len())
        .iter()
        .position(|v| v == lambda)
        .map(|i| i as u32 + 1)
        .ok_or_else(|| {
            Error::Malformed(format!(
                "lambda {lambda:?} is not on the grid of entries {{0, ±1/2, ±1}}"
            ))
        })
}

/// A perturbation term with its weight `2^{−j(θ)} u_θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSpec {
    pub spec: PerturbationSpec,
    pub j: u32,
    pub u: f64,
}

impl WeightedSpec {
    pub fn weight(&self) -> f64 {
        self.u * 0.5f64.powi(self.j as i32)
    }
}

/// Every `θ` with `j(θ) ≤ max_j`, each with the same `u`.
pub fn truncated_family(kappa: usize, max_j: u32, u: f64) -> Vec<WeightedSpec> {
    let grid = lambda_grid(kappa);
    let mut out = Vec::new();
    // Each factor costs at least n_j + j_0 + 4 ≥ 6, and p ≥ 1.
    let max_m = (max_j.saturating_sub(1) / 6) as usize;
    for m in 1..=max_m.max(1) {
        let base = 4 * m as u32;
        if 1 + base + 2 * m as u32 > max_j {
            break;
        }
        let mut stack: Vec<(Vec<u32>, Vec<usize>)> = vec![(Vec::new(), Vec::new())];
        while let Some((ns, ls)) = stack.pop() {
            let used: u32 = base + ns.iter().sum::<u32>() + ls.iter().map(|&i| i as u32 + 1).sum::<u32>();
            if ns.len() == m {
                for p in 1..=max_j.saturating_sub(used) {
                    let spec = PerturbationSpec {
                        p,
                        n: ns.clone(),
                        lambdas: ls.iter().map(|&i| grid[i].clone()).collect(),
                    };
                    out.push(WeightedSpec { spec, j: used + p, u });
                }
                continue;
            }
            let left = m - ns.len() - 1;
            for n in 1..=max_j {
                for (li, _) in grid.iter().enumerate() {
                    let cost = used + n + li as u32 + 1 + 2 * left as u32 + 1;
                    if cost > max_j {
                        break;
                    }
                    let mut ns2 = ns.clone();
                    ns2.push(n);
                    let mut ls2 = ls.clone();
                    ls2.push(li);
                    stack.push((ns2, ls2));
                }
            }
        }
    }
    out.sort_by(|a, b| {
        (a.j, a.spec.p, &a.spec.n)
            .cmp(&(b.j, b.spec.p, &b.spec.n))
            .then_with(|| {
                a.spec
                    .lambdas
                    .iter()
                    .flatten()
                    .zip(b.spec.lambdas.iter().flatten())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    out
}

/// `s_N = N^γ`.
pub fn perturbation_scale(n: usize, gamma: f64) -> f64 {
    (n as f64).powf(gamma)
}

/// One joint draw of `h_N(σ) = Σ_θ 2^{−j(θ)} u_θ h_θ(σ)` over a configuration set.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationField {
    pub values: Vec<f64>,
}

impl PerturbationField {
    pub fn value(&self, index: usize) -> f64 {
        self.values[index]
    }
}

/// Samples the Gaussian process `h_N` on `configs` through its covariance.
///
/// Each `h_θ` is drawn as `L ξ` with `L Lᵀ = (C^θ(R(σ_a, σ_b)))_{ab}`, using the
/// stream `(seed, "perturbation", θ index)`.
pub fn perturbation_hamiltonian(
    family: &[WeightedSpec],
    configs: &[Configuration],
    kappa: usize,
    seed: u64,
) -> Result<PerturbationField> {
    let s = configs.len();
    if s > FIELD_BUDGET {
        return Err(Error::Budget {
            what: "perturbation configurations",
            required: s as u128,
            limit: FIELD_BUDGET as u128,
        });
    }
    let mut values = vec![0.0; s];
    if family.is_empty() || s == 0 {
        return Ok(PerturbationField { values });
    }
    let mut overlaps = Vec::with_capacity(s * s);
    for a in configs {
        for b in configs {
            overlaps.push(overlap(a, b, kappa)?.into_matrix());
        }
    }
    for (t, w) in family.iter().enumerate() {
        w.spec.validate()?;
        let cov = Mat::from_fn(s, s, |a, b| perturbation_covariance(&w.spec, &overlaps[a * s + b]));
        let f = linalg::psd_factor(&cov, 1e-12);
        let mut g = rng::stream(seed, "perturbation", t as u64);
        let xi: Vec<f64> = (0..f.ncols()).map(|_| StandardNormal.sample(&mut g)).collect();
        let wt = w.weight();
        for (a, v) in values.iter_mut().enumerate() {
            let mut h = 0.0;
            for (c, x) in xi.iter().enumerate() {
                h += f[(a, c)] * x;
            }
            *v += wt * h;
        }
    }
    Ok(PerturbationField { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::StateDistribution;

    #[test]
    fn covariance_examples() {
        let r = Mat::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.4]);
        let e0 = PerturbationSpec::new(1, vec![1], vec![vec![1.0, 0.0]]).unwrap();
        assert!((perturbation_covariance(&e0, &r) - 0.3).abs() < 1e-15);
        let ones = PerturbationSpec::new(1, vec![1], vec![vec![1.0, 1.0]]).unwrap();
        assert!((perturbation_covariance(&ones, &r) - 1.0).abs() < 1e-15);
        let d = StateDistribution::new(vec![0.25, 0.75]).unwrap();
        let spec = PerturbationSpec::new(2, vec![2, 1], vec![vec![0.5, -1.0], vec![1.0, 0.5]]).unwrap();
        let want = (0.0625 * 0.25 + 0.5625 * 1.0f64).powi(2) * (0.0625 + 0.5625 * 0.25);
        assert!((perturbation_covariance(&spec, &d.diag()) - want).abs() < 1e-15);
    }

    #[test]
    fn grid_order() {
        let g = lambda_grid(2);
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert!(g[..9].iter().all(|v| v.iter().all(|x| x.fract() == 0.0)));
        assert_eq!(lambda_index(&[0.0, 0.0]).unwrap(), 1);
        assert!(lambda_index(&[0.3, 0.0]).is_err());
    }

    #[test]
    fn truncated_family_respects_the_cutoff() {
        let f = truncated_family(2, 12, 1.5);
        assert!(!f.is_empty());
        for w in &f {
            assert!(w.j <= 12);
            assert_eq!(w.spec.weight_index().unwrap(), w.j);
        }
        // m = 1 only: p + n + j0 <= 8.
        let expected: usize = (1..=6).map(|j0| (2..=8 - j0).map(|s| s - 1).sum::<usize>()).sum();
        assert_eq!(f.len(), expected);
        assert!(truncated_family(2, 6, 1.5).is_empty());
    }

    #[test]
    fn empty_family_is_zero() {
        let c = vec![Configuration::new(vec![0, 1], 2).unwrap()];
        let f = perturbation_hamiltonian(&[], &c, 2, 0).unwrap();
        assert_eq!(f.values, vec![0.0]);
    }
}
