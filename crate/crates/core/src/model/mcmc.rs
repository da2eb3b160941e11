use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::enumerate::{ConfigSpace, Constraint};
use super::perturbation::PerturbationField;
use super::{overlap, Configuration, DisorderInstance};
use crate::cascade::OverlapArray;
use crate::error::{Error, Result};
use crate::paths::StateDistribution;
use crate::rng::{self, StreamRng};
use crate::stats;

/// Parallel-tempering and thermodynamic-integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerParams {
    /// Number of inverse temperatures on `[0, β]`; odd so Simpson's rule applies.
    pub ladder: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub n_disorder: usize,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            ladder: 17,
            sweeps: 4000,
            burn_in: 500,
            n_disorder: 50,
            seed: 0,
        }
    }
}

/// Pair-swap Metropolis chain on `Σ(d)`: exchanging two sites' labels keeps
/// the state counts fixed.
struct Chain {
    sigma: Vec<usize>,
    energy: f64,
}

struct Couplings {
    n: usize,
    sym: Vec<f64>,
    scale: f64,
}

impl Couplings {
    fn new(g: &DisorderInstance) -> Self {
        let n = g.n();
        let m = g.couplings();
        let sym = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i == j {
                    0.0
                } else {
                    m[(i, j)] + m[(j, i)]
                }
            })
            .collect();
        Self {
            n,
            sym,
            scale: (n as f64).sqrt(),
        }
    }

    /// Change of `H` when site `s` moves to state `to`.
    fn flip_delta(&self, sigma: &[usize], s: usize, to: usize) -> f64 {
        let from = sigma[s];
        let row = &self.sym[s * self.n..(s + 1) * self.n];
        let mut delta = 0.0;
        for (j, &v) in sigma.iter().enumerate() {
            if v == to {
                delta += row[j];
            } else if v == from {
                delta -= row[j];
            }
        }
        delta / self.scale
    }

    fn swap_delta(&self, sigma: &mut [usize], i: usize, j: usize) -> f64 {
        let (a, b) = (sigma[i], sigma[j]);
        let d1 = self.flip_delta(sigma, i, b);
        sigma[i] = b;
        let d2 = self.flip_delta(sigma, j, a);
        sigma[i] = a;
        d1 + d2
    }
}

fn initial_state(counts: &[usize], rng: &mut StreamRng) -> Vec<usize> {
    let mut sigma: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    for i in (1..sigma.len()).rev() {
        let j = rng.random_range(0..=i);
        sigma.swap(i, j);
    }
    sigma
}

impl Chain {
    fn sweep(&mut self, c: &Couplings, beta: f64, rng: &mut StreamRng) -> (usize, usize) {
        let n = c.n;
        let mut accepted = 0;
        let mut tried = 0;
        for _ in 0..n {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if self.sigma[i] == self.sigma[j] {
                continue;
            }
            tried += 1;
            let delta = c.swap_delta(&mut self.sigma, i, j);
            let u: f64 = rng.random();
            if beta * delta >= 0.0 || u < (beta * delta).exp() {
                self.sigma.swap(i, j);
                self.energy += delta;
                accepted += 1;
            }
        }
        (accepted, tried)
    }
}

/// Thermodynamic-integration estimate of `F_N(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub kappa: usize,
    pub beta: f64,
    pub d: Vec<f64>,
    pub estimate: f64,
    pub se: f64,
    /// Standard error across disorder draws (includes sampling noise).
    pub mc_error: f64,
    /// `|trapezoid − Simpson|` on the temperature ladder.
    pub grid_error: f64,
    pub method: String,
    pub swap_acceptance: f64,
    pub move_acceptance: f64,
    pub warnings: Vec<String>,
    /// Ladder of inverse temperatures and the disorder-averaged `F` on it.
    pub betas: Vec<f64>,
    pub curve: Vec<f64>,
}

struct DrawResult {
    trapezoid: Vec<f64>,
    simpson: f64,
    swap_rate: f64,
    move_rate: f64,
}

fn run_draw(
    g: &DisorderInstance,
    counts: &[usize],
    betas: &[f64],
    params: &SamplerParams,
    stream: u64,
) -> DrawResult {
    let c = Couplings::new(g);
    let n = g.n() as f64;
    let mut rng = rng::stream(stream, "tempering", 0);
    let mut chains: Vec<Chain> = betas
        .iter()
        .map(|_| {
            let sigma = initial_state(counts, &mut rng);
            let energy = super::raw_energy(g.couplings(), &sigma) / c.scale;
            Chain { sigma, energy }
        })
        .collect();
    let l = betas.len();
    let mut sums = vec![0.0; l];
    let mut samples = 0usize;
    let (mut sw_acc, mut sw_try, mut mv_acc, mut mv_try) = (0usize, 0usize, 0usize, 0usize);
    for sweep in 0..params.burn_in + params.sweeps {
        for (ch, &b) in chains.iter_mut().zip(betas) {
            let (a, t) = ch.sweep(&c, b, &mut rng);
            mv_acc += a;
            mv_try += t;
        }
        let start = sweep % 2;
        for i in (start..l.saturating_sub(1)).step_by(2) {
            let x = (betas[i + 1] - betas[i]) * (chains[i].energy - chains[i + 1].energy);
            sw_try += 1;
            let u: f64 = rng.random();
            if x >= 0.0 || u < x.exp() {
                chains.swap(i, i + 1);
                sw_acc += 1;
            }
        }
        if sweep >= params.burn_in {
            for (s, ch) in sums.iter_mut().zip(&chains) {
                *s += ch.energy / n;
            }
            samples += 1;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / samples as f64).collect();
    let mut trapezoid = vec![0.0; l];
    for i in 1..l {
        trapezoid[i] = trapezoid[i - 1] + 0.5 * (betas[i] - betas[i - 1]) * (means[i] + means[i - 1]);
    }
    let h = if l > 1 { betas[1] - betas[0] } else { 0.0 };
    let simpson = if l >= 3 && l % 2 == 1 {
        (h / 3.0)
            * (0..l)
                .map(|i| {
                    let w = if i == 0 || i == l - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    w * means[i]
                })
                .sum::<f64>()
    } else {
        trapezoid[l - 1]
    };
    DrawResult {
        trapezoid,
        simpson,
        swap_rate: if sw_try > 0 { sw_acc as f64 / sw_try as f64 } else { 1.0 },
        move_rate: if mv_try > 0 { mv_acc as f64 / mv_try as f64 } else { 1.0 },
    }
}

/// `F_N(d)` by thermodynamic integration of `⟨H⟩/N` from the exact `β = 0`
/// entropy, with parallel tempering on a uniform ladder.
pub fn mcmc_free_energy(
    n: usize,
    kappa: usize,
    beta: f64,
    d: &StateDistribution,
    params: &SamplerParams,
) -> Result<McmcReport> {
    if d.kappa() != kappa {
        return Err(Error::Dimension("distribution and kappa disagree".into()));
    }
    let counts = d
        .counts(n)
        .ok_or_else(|| Error::Infeasible(format!("{:?} is not representable with N = {n}", d.d())))?;
    if params.ladder < 2 || params.sweeps == 0 || params.n_disorder == 0 {
        return Err(Error::Malformed("ladder >= 2, sweeps >= 1 and n_disorder >= 1 are required".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Malformed("beta must be finite and >= 0".into()));
    }
    let entropy = stats::log_multinomial(&counts) / n as f64;
    let betas: Vec<f64> = (0..params.ladder)
        .map(|i| beta * i as f64 / (params.ladder - 1) as f64)
        .collect();
    if beta == 0.0 {
        return Ok(McmcReport {
            n,
            kappa,
            beta,
            d: d.d().to_vec(),
            estimate: entropy,
            se: 0.0,
            mc_error: 0.0,
            grid_error: 0.0,
            method: "thermodynamic-integration".into(),
            swap_acceptance: 1.0,
            move_acceptance: 1.0,
            warnings: Vec::new(),
            betas: vec![0.0],
            curve: vec![entropy],
        });
    }
    let draws: Vec<DrawResult> = (0..params.n_disorder)
        .into_par_iter()
        .map(|i| {
            let g = DisorderInstance::draw(n, params.seed, i)?;
            Ok(run_draw(
                &g,
                &counts,
                &betas,
                params,
                rng::derive_seed(params.seed, "tempering-draw", i as u64),
            ))
        })
        .collect::<Result<_>>()?;
    let last = params.ladder - 1;
    let finals: Vec<f64> = draws.iter().map(|r| entropy + r.trapezoid[last]).collect();
    let est = stats::mean_se(&finals);
    let simpson = draws.iter().map(|r| r.simpson).sum::<f64>() / draws.len() as f64;
    let trap = est.value - entropy;
    let grid_error = (trap - simpson).abs();
    let swap_acceptance = draws.iter().map(|r| r.swap_rate).sum::<f64>() / draws.len() as f64;
    let move_acceptance = draws.iter().map(|r| r.move_rate).sum::<f64>() / draws.len() as f64;
    let mut warnings = Vec::new();
    if swap_acceptance < 0.01 {
        warnings.push(format!(
            "replica-exchange acceptance {swap_acceptance:.4} is below 1%; the ladder is likely not ergodic"
        ));
    }
    let curve = (0..params.ladder)
        .map(|b| entropy + draws.iter().map(|r| r.trapezoid[b]).sum::<f64>() / draws.len() as f64)
        .collect();
    Ok(McmcReport {
        n,
        kappa,
        beta,
        d: d.d().to_vec(),
        estimate: est.value,
        se: est.std_error.hypot(grid_error),
        mc_error: est.std_error,
        grid_error,
        method: "thermodynamic-integration".into(),
        swap_acceptance,
        move_acceptance,
        warnings,
        betas,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GibbsMethod {
    /// Categorical sampling from enumerated Gibbs weights.
    Exact,
    /// A pair-swap Metropolis chain, keeping one state every `thin` sweeps.
    Mcmc { burn_in: usize, thin: usize },
}

/// Replicas from one Gibbs measure and their pairwise overlaps.
#[derive(Debug, Clone)]
pub struct GibbsSample {
    pub configs: Vec<Configuration>,
    pub array: OverlapArray,
}

/// Largest configuration set exact Gibbs sampling stores.
const EXACT_LIMIT: usize = 2_000_000;

/// i.i.d. replicas from `G(σ) ∝ exp(βH(σ) + s·h(σ))` on the constrained set.
///
/// The optional perturbation field must be defined on the same enumerated
/// configuration set and is only supported by exact sampling.
pub fn gibbs_replicas(
    g: &DisorderInstance,
    kappa: usize,
    beta: f64,
    constraint: &Constraint,
    n_replicas: usize,
    method: GibbsMethod,
    seed: u64,
    perturbation: Option<(&PerturbationField, f64)>,
) -> Result<GibbsSample> {
    if n_replicas < 2 {
        return Err(Error::Malformed("at least two replicas are required".into()));
    }
    let mut rng = rng::stream(seed, "gibbs", 0);
    let configs: Vec<Configuration> = match method {
        GibbsMethod::Exact => {
            let space = ConfigSpace::build(g, kappa, constraint, EXACT_LIMIT)?;
            let mut logw: Vec<f64> = space.energies.iter().map(|e| beta * e).collect();
            if let Some((field, s)) = perturbation {
                if field.values.len() != logw.len() {
                    return Err(Error::Dimension(
                        "perturbation field does not match the configuration set".into(),
                    ));
                }
                logw.iter_mut().zip(&field.values).for_each(|(w, h)| *w += s * h);
            }
            let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut cum = Vec::with_capacity(logw.len());
            let mut acc = 0.0;
            for w in &logw {
                acc += (w - mx).exp();
                cum.push(acc);
            }
            (0..n_replicas)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * acc;
                    let i = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
                    Configuration {
                        sigma: space.configs[i].iter().map(|&v| v as usize).collect(),
                    }
                })
                .collect()
        }
        GibbsMethod::Mcmc { burn_in, thin } => {
            if perturbation.is_some() {
                return Err(Error::Malformed(
                    "perturbation fields require exact sampling".into(),
                ));
            }
            let d = match constraint {
                Constraint::Exact { d } => d,
                _ => {
                    return Err(Error::Malformed(
                        "MCMC sampling needs an exact state-size constraint".into(),
                    ))
                }
            };
            let counts = d
                .counts(g.n())
                .ok_or_else(|| Error::Infeasible("distribution is not representable".into()))?;
            let c = Couplings::new(g);
            let sigma = initial_state(&counts, &mut rng);
            let energy = super::raw_energy(g.couplings(), &sigma) / c.scale;
            let mut chain = Chain { sigma, energy };
            for _ in 0..burn_in {
                chain.sweep(&c, beta, &mut rng);
            }
            (0..n_replicas)
                .map(|_| {
                    for _ in 0..thin.max(1) {
                        chain.sweep(&c, beta, &mut rng);
                    }
                    Configuration {
                        sigma: chain.sigma.clone(),
                    }
                })
                .collect()
        }
    };
    let blocks = configs
        .iter()
        .map(|a| {
            configs
                .iter()
                .map(|b| overlap(a, b, kappa).map(|r| r.into_matrix()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let array = OverlapArray::from_blocks(blocks)?;
    Ok(GibbsSample { configs, array })
}
