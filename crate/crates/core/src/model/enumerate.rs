use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DisorderInstance;
use crate::error::{Error, Result};
use crate::paths::StateDistribution;
use crate::stats::{self, LogSumExp};

/// Largest `κ^N` that exhaustive enumeration will visit.
pub const ENUMERATION_BUDGET: u128 = 20_000_000;

/// Which configurations enter a partition function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Constraint {
    None,
    /// Exactly `N·d_k` sites in state `k`.
    Exact { d: StateDistribution },
    /// `|N_k/N − d_k| ≤ eps` for every state, closed intervals.
    Relaxed { d: StateDistribution, eps: f64 },
}

impl Constraint {
    pub fn check(&self, n: usize, kappa: usize) -> Result<()> {
        match self {
            Constraint::None => Ok(()),
            Constraint::Exact { d } | Constraint::Relaxed { d, .. } => {
                if d.kappa() != kappa {
                    return Err(Error::Dimension(format!(
                        "constraint has {} states, model has {kappa}",
                        d.kappa()
                    )));
                }
                if let Constraint::Exact { d } = self {
                    if d.counts(n).is_none() {
                        return Err(Error::Infeasible(format!(
                            "{:?} is not representable with N = {n}",
                            d.d()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub(crate) fn allows(&self, counts: &[usize], n: usize) -> bool {
        match self {
            Constraint::None => true,
            Constraint::Exact { d } => d
                .d()
                .iter()
                .zip(counts)
                .all(|(&dk, &c)| (dk * n as f64 - c as f64).abs() < 1e-9),
            Constraint::Relaxed { d, eps } => d
                .d()
                .iter()
                .zip(counts)
                .all(|(&dk, &c)| (c as f64 / n as f64 - dk).abs() <= eps + 1e-12),
        }
    }

    pub fn distribution(&self) -> Option<&StateDistribution> {
        match self {
            Constraint::None => None,
            Constraint::Exact { d } | Constraint::Relaxed { d, .. } => Some(d),
        }
    }
}

fn check_budget(n: usize, kappa: usize) -> Result<()> {
    let total = (kappa as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > ENUMERATION_BUDGET {
        return Err(Error::Budget {
            what: "configurations",
            required: total,
            limit: ENUMERATION_BUDGET,
        });
    }
    Ok(())
}

/// Calls `f(σ, Σ_ij g_ij 1{σ_i=σ_j})` for every allowed configuration, in
/// odometer order with site 0 varying fastest.
pub fn for_each_energy<F>(g: &DisorderInstance, kappa: usize, constraint: &Constraint, mut f: F) -> Result<()>
where
    F: FnMut(&[u8], f64),
{
    let n = g.n();
    if kappa == 0 || kappa > u8::MAX as usize {
        return Err(Error::Malformed(format!("unsupported kappa = {kappa}")));
    }
    constraint.check(n, kappa)?;
    check_budget(n, kappa)?;
    let m = g.couplings();
    let sym: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            if i == j {
                0.0
            } else {
                m[(i, j)] + m[(j, i)]
            }
        })
        .collect();
    let mut sigma = vec![0u8; n];
    let mut counts = vec![0usize; kappa];
    counts[0] = n;
    let mut e: f64 = m.iter().sum();
    let kap = kappa as u8;
    let flip = |sigma: &mut [u8], s: usize, to: u8, e: &mut f64| {
        let from = sigma[s];
        let row = &sym[s * n..(s + 1) * n];
        let mut delta = 0.0;
        for (j, &v) in sigma.iter().enumerate() {
            if v == to {
                delta += row[j];
            } else if v == from {
                delta -= row[j];
            }
        }
        *e += delta;
        sigma[s] = to;
    };
    loop {
        if constraint.allows(&counts, n) {
            f(&sigma, e);
        }
        let mut s = 0;
        loop {
            if s == n {
                return Ok(());
            }
            let cur = sigma[s];
            let next = if cur + 1 == kap { 0 } else { cur + 1 };
            counts[cur as usize] -= 1;
            counts[next as usize] += 1;
            flip(&mut sigma, s, next, &mut e);
            if next != 0 {
                break;
            }
            s += 1;
        }
    }
}

/// Allowed configurations together with their energies `H(σ)`.
#[derive(Debug, Clone)]
pub struct ConfigSpace {
    pub kappa: usize,
    pub n: usize,
    pub configs: Vec<Vec<u8>>,
    pub energies: Vec<f64>,
}

impl ConfigSpace {
    pub fn build(g: &DisorderInstance, kappa: usize, constraint: &Constraint, limit: usize) -> Result<Self> {
        let scale = (g.n() as f64).sqrt();
        let mut configs = Vec::new();
        let mut energies = Vec::new();
        let mut over = false;
        for_each_energy(g, kappa, constraint, |s, e| {
            if configs.len() >= limit {
                over = true;
                return;
            }
            configs.push(s.to_vec());
            energies.push(e / scale);
        })?;
        if over {
            return Err(Error::Budget {
                what: "stored configurations",
                required: limit as u128 + 1,
                limit: limit as u128,
            });
        }
        if configs.is_empty() {
            return Err(Error::Infeasible("constraint admits no configuration".into()));
        }
        Ok(Self {
            kappa,
            n: g.n(),
            configs,
            energies,
        })
    }
}

/// Disorder-averaged free energy with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub kappa: usize,
    pub beta: f64,
    pub d: Option<Vec<f64>>,
    pub estimate: f64,
    pub se: f64,
    pub method: String,
    pub samples: usize,
}

/// `(1/N) log Σ_σ exp(β H(σ))` per disorder draw, for several `β` at once.
fn per_draw(
    n: usize,
    kappa: usize,
    betas: &[f64],
    n_disorder: usize,
    seed: u64,
    constraint: &Constraint,
) -> Result<Vec<Vec<f64>>> {
    if n_disorder == 0 {
        return Err(Error::Malformed("at least one disorder draw is required".into()));
    }
    constraint.check(n, kappa)?;
    check_budget(n, kappa)?;
    let scale = (n as f64).sqrt();
    (0..n_disorder)
        .into_par_iter()
        .map(|i| {
            let g = DisorderInstance::draw(n, seed, i)?;
            let mut acc = vec![LogSumExp::default(); betas.len()];
            for_each_energy(&g, kappa, constraint, |_, e| {
                let h = e / scale;
                for (a, b) in acc.iter_mut().zip(betas) {
                    a.push(b * h);
                }
            })?;
            let vals: Vec<f64> = acc.iter().map(|a| a.value() / n as f64).collect();
            if vals.iter().any(|v| v.is_infinite()) {
                return Err(Error::Infeasible("constraint admits no configuration".into()));
            }
            Ok(vals)
        })
        .collect()
}

/// Exact enumeration of `F_N` (or `F_N(d)`), averaged over disorder draws.
pub fn enumerate_free_energy(
    n: usize,
    kappa: usize,
    beta: f64,
    n_disorder: usize,
    seed: u64,
    constraint: &Constraint,
) -> Result<FreeEnergyReport> {
    Ok(enumerate_free_energy_grid(n, kappa, &[beta], n_disorder, seed, constraint)?.remove(0))
}

/// [`enumerate_free_energy`] on a grid of `β` sharing the same disorder draws.
pub fn enumerate_free_energy_grid(
    n: usize,
    kappa: usize,
    betas: &[f64],
    n_disorder: usize,
    seed: u64,
    constraint: &Constraint,
) -> Result<Vec<FreeEnergyReport>> {
    let rows = per_draw(n, kappa, betas, n_disorder, seed, constraint)?;
    Ok(betas
        .iter()
        .enumerate()
        .map(|(b, &beta)| {
            let col: Vec<f64> = rows.iter().map(|r| r[b]).collect();
            let est = stats::mean_se(&col);
            FreeEnergyReport {
                n,
                kappa,
                beta,
                d: constraint.distribution().map(|d| d.d().to_vec()),
                estimate: est.value,
                se: est.std_error,
                method: "enumeration".into(),
                samples: n_disorder,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hamiltonian, Configuration};

    #[test]
    fn incremental_energies_match_direct() {
        let g = DisorderInstance::new(5, 3).unwrap();
        let mut seen = 0;
        for_each_energy(&g, 3, &Constraint::None, |s, e| {
            let c = Configuration::new(s.iter().map(|&v| v as usize).collect(), 3).unwrap();
            let h = hamiltonian(&g, &c).unwrap() * 5f64.sqrt();
            assert!((h - e).abs() < 1e-10);
            seen += 1;
        })
        .unwrap();
        assert_eq!(seen, 243);
    }

    #[test]
    fn beta_zero_counts() {
        let r = enumerate_free_energy(6, 3, 0.0, 3, 1, &Constraint::None).unwrap();
        assert!((r.estimate - 3f64.ln()).abs() < 1e-12);
        assert_eq!(r.se, 0.0);
        let d = StateDistribution::from_counts(&[2, 2]).unwrap();
        let r = enumerate_free_energy(4, 2, 0.0, 2, 1, &Constraint::Exact { d }).unwrap();
        assert!((r.estimate - 6f64.ln() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let e = enumerate_free_energy(40, 2, 1.0, 1, 0, &Constraint::None).unwrap_err();
        assert!(e.is_budget());
    }
}
