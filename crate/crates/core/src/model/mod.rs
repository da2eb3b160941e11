//! The finite-size Potts spin glass.

mod ass;
mod enumerate;
mod mcmc;
mod perturbation;

pub use ass::{ass_covariance_check, AssReport, CovarianceCheck};
pub use enumerate::{
    enumerate_free_energy, enumerate_free_energy_grid, for_each_energy, ConfigSpace, Constraint,
    FreeEnergyReport, ENUMERATION_BUDGET,
};
pub use mcmc::{gibbs_replicas, mcmc_free_energy, GibbsMethod, GibbsSample, McmcReport, SamplerParams};
pub use perturbation::{
    lambda_grid, lambda_index, perturbation_covariance, perturbation_hamiltonian, perturbation_scale,
    product_of_powers, quadratic_forms, truncated_family, PerturbationField, PerturbationSpec,
    WeightedSpec, FIELD_BUDGET,
};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng;

/// Gaussian couplings `g_ij` for `N` sites, regenerated from `(seed, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DisorderKey", into = "DisorderKey")]
pub struct DisorderInstance {
    n: usize,
    seed: u64,
    g: Mat,
}

#[derive(Serialize, Deserialize)]
struct DisorderKey {
    seed: u64,
    #[serde(rename = "N")]
    n: usize,
}

impl TryFrom<DisorderKey> for DisorderInstance {
    type Error = Error;
    fn try_from(k: DisorderKey) -> Result<Self> {
        DisorderInstance::new(k.n, k.seed)
    }
}

impl From<DisorderInstance> for DisorderKey {
    fn from(d: DisorderInstance) -> Self {
        DisorderKey { seed: d.seed, n: d.n }
    }
}

impl DisorderInstance {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Malformed("N must be at least 1".into()));
        }
        let mut g = rng::stream(seed, "couplings", n as u64);
        let m = Mat::from_fn(n, n, |_, _| StandardNormal.sample(&mut g));
        Ok(Self { n, seed, g: m })
    }

    /// The `index`-th disorder draw of an experiment seeded with `seed`.
    pub fn draw(n: usize, seed: u64, index: usize) -> Result<Self> {
        Self::new(n, rng::derive_seed(seed, "disorder", index as u64))
    }

    pub fn from_matrix(g: Mat) -> Result<Self> {
        if g.nrows() != g.ncols() || g.nrows() == 0 || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed("couplings must be a finite nonempty square matrix".into()));
        }
        Ok(Self {
            n: g.nrows(),
            seed: 0,
            g,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn couplings(&self) -> &Mat {
        &self.g
    }
}

/// A spin configuration with 0-based state labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    sigma: Vec<usize>,
}

impl Configuration {
    pub fn new(sigma: Vec<usize>, kappa: usize) -> Result<Self> {
        if let Some(&bad) = sigma.iter().find(|&&s| s >= kappa) {
            return Err(Error::Malformed(format!("label {bad} is out of range for kappa = {kappa}")));
        }
        Ok(Self { sigma })
    }

    /// From labels in `1..=κ`.
    pub fn from_labels(labels: &[usize], kappa: usize) -> Result<Self> {
        if labels.iter().any(|&l| l == 0) {
            return Err(Error::Malformed("labels start at 1".into()));
        }
        Self::new(labels.iter().map(|l| l - 1).collect(), kappa)
    }

    pub fn states(&self) -> &[usize] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn counts(&self, kappa: usize) -> Vec<usize> {
        let mut c = vec![0; kappa];
        self.sigma.iter().for_each(|&s| c[s] += 1);
        c
    }
}

/// `R^{kk′} = (1/N) Σ_i 1{a_i = k} 1{b_i = k′}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    m: Mat,
}

impl OverlapMatrix {
    pub fn matrix(&self) -> &Mat {
        &self.m
    }

    pub fn into_matrix(self) -> Mat {
        self.m
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }
}

pub fn overlap(a: &Configuration, b: &Configuration, kappa: usize) -> Result<OverlapMatrix> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "configurations have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut m = Mat::zeros(kappa, kappa);
    for (&x, &y) in a.sigma.iter().zip(&b.sigma) {
        if x >= kappa || y >= kappa {
            return Err(Error::Malformed(format!("label out of range for kappa = {kappa}")));
        }
        m[(x, y)] += 1.0;
    }
    m /= a.len() as f64;
    Ok(OverlapMatrix { m })
}

/// `H(σ) = N^{−1/2} Σ_{i,j} g_ij 1{σ_i = σ_j}` over all ordered pairs.
pub fn hamiltonian(g: &DisorderInstance, sigma: &Configuration) -> Result<f64> {
    if sigma.len() != g.n {
        return Err(Error::Dimension(format!(
            "configuration has {} sites, disorder has {}",
            sigma.len(),
            g.n
        )));
    }
    Ok(raw_energy(&g.g, &sigma.sigma) / (g.n as f64).sqrt())
}

/// `Σ_{i,j} g_ij 1{σ_i = σ_j}` without the `N^{−1/2}` factor.
pub(crate) fn raw_energy<S: Copy + PartialEq>(g: &Mat, sigma: &[S]) -> f64 {
    let n = sigma.len();
    let mut e = 0.0;
    for i in 0..n {
        for j in 0..n {
            if sigma[i] == sigma[j] {
                e += g[(i, j)];
            }
        }
    }
    e
}
