//! Statistical checks of structural properties on sampled overlap data:
//! Ghirlanda–Guerra residuals, synchronization of overlap blocks, monotonicity
//! of the interpolation between the model and the cascade functional, and the
//! duality gap of the restricted-set functional.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{sample_cascade, McParams, OverlapArray};
use crate::error::{Error, Result};
use crate::functional::{add_site_fields, eval_f1_restricted, eval_phi, increment_covariance, ConfigSet};
use crate::linalg::{self, Mat};
use crate::model::{quadratic_forms, ConfigSpace, Constraint, DisorderInstance, PerturbationSpec};
use crate::paths::{round_distribution, LagrangeMultipliers, MonotonePath, StateDistribution};
use crate::quadrature::QuadratureSpec;
use crate::rng;
use crate::stats::{self, Estimate, LogSumExp};

/// Largest `n + 1` whose replica permutations are enumerated.
pub const MAX_GG_REPLICAS: usize = 7;

/// Bootstrap settings for the residual standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Self {
            resamples: 200,
            seed: 0,
        }
    }
}

/// A view of replicas `1..=n` of an array under a relabeling.
pub struct Replicas<'a> {
    array: &'a OverlapArray,
    order: &'a [usize],
}

impl Replicas<'_> {
    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Block `R_{l,m}`, 0-based.
    pub fn block(&self, l: usize, m: usize) -> &Mat {
        self.array.block(self.order[l], self.order[m])
    }

    pub fn trace(&self, l: usize, m: usize) -> f64 {
        self.array.traces[self.order[l]][self.order[m]]
    }
}

/// Test function of the first `n` replicas.
pub type ReplicaFn<'a> = dyn Fn(&Replicas<'_>) -> f64 + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GgResidual {
    pub residual: f64,
    pub std_error: f64,
    pub n: usize,
    pub arrays: usize,
    pub pass: bool,
}

/// Mean that is exact on constant input and depends only on the multiset.
fn stable_mean(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let base = v[0];
    base + v.iter().map(|x| x - base).sum::<f64>() / v.len() as f64
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Per-array terms `(⟨f C_{1,n+1}⟩, ⟨f⟩, ⟨C_{1,2}⟩, ⟨f C_{1,ℓ}⟩ for ℓ = 2..n)`,
/// each averaged over all relabelings of the first `n + 1` replicas.
fn gg_terms(a: &OverlapArray, n: usize, f: &ReplicaFn<'_>, cov: &(dyn Fn(&Mat) -> f64 + Sync)) -> Vec<f64> {
    let k = n + 1;
    let c: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 0.0 } else { cov(a.block(i, j)) }).collect())
        .collect();
    let perms = permutations(k);
    let mut cols = vec![Vec::with_capacity(perms.len()); 3 + n - 1];
    for p in &perms {
        let fv = f(&Replicas { array: a, order: &p[..n] });
        cols[0].push(fv * c[p[0]][p[n]]);
        cols[1].push(fv);
        cols[2].push(c[p[0]][p[1]]);
        for l in 1..n {
            cols[2 + l].push(fv * c[p[0]][p[l]]);
        }
    }
    cols.iter_mut().map(|v| stable_mean(v)).collect()
}

/// `((A − B C) + Σ_ℓ (A − D_ℓ)) / n`.
fn combine(t: &[f64], n: usize) -> f64 {
    let a = t[0];
    let mut s = a - t[1] * t[2];
    for d in &t[3..] {
        s += a - d;
    }
    s / n as f64
}

fn gg_core(
    samples: &[OverlapArray],
    n: usize,
    f: &ReplicaFn<'_>,
    cov: &(dyn Fn(&Mat) -> f64 + Sync),
    boot: &Bootstrap,
) -> Result<GgResidual> {
    if n < 2 || n + 1 > MAX_GG_REPLICAS {
        return Err(Error::Malformed(format!("n must lie in 2..={}", MAX_GG_REPLICAS - 1)));
    }
    if samples.is_empty() {
        return Err(Error::Malformed("no overlap arrays supplied".into()));
    }
    if let Some(a) = samples.iter().find(|a| a.n < n + 1) {
        return Err(Error::Malformed(format!(
            "arrays need at least {} replicas, found {}",
            n + 1,
            a.n
        )));
    }
    let per: Vec<Vec<f64>> = samples.par_iter().map(|a| gg_terms(a, n, f, cov)).collect();
    let width = per[0].len();
    let totals: Vec<f64> = (0..width)
        .map(|j| stable_mean(&mut per.iter().map(|t| t[j]).collect::<Vec<_>>()))
        .collect();
    let residual = combine(&totals, n);
    let std_error = if samples.len() > 1 && boot.resamples > 1 {
        stats::bootstrap_se(samples.len(), boot.resamples, boot.seed, |idx| {
            let mut t = vec![0.0; width];
            for &i in idx {
                for (acc, v) in t.iter_mut().zip(&per[i]) {
                    *acc += v;
                }
            }
            t.iter_mut().for_each(|v| *v /= idx.len() as f64);
            combine(&t, n)
        })
    } else {
        0.0
    };
    Ok(GgResidual {
        residual,
        std_error,
        n,
        arrays: samples.len(),
        pass: residual.abs() <= 3.0 * std_error,
    })
}

/// `𝔼⟨f C_{1,n+1}⟩ − (1/n)𝔼⟨f⟩𝔼⟨C_{1,2}⟩ − (1/n)Σ_{ℓ=2}^n 𝔼⟨f C_{1,ℓ}⟩`
/// with `C = C^θ` evaluated on the blocks.
///
/// Each array is one draw of replicas from one Gibbs measure. The signed
/// residual is reported; the bootstrap resamples arrays.
pub fn gg_residual(
    samples: &[OverlapArray],
    f: &ReplicaFn<'_>,
    n: usize,
    spec: &PerturbationSpec,
    boot: &Bootstrap,
) -> Result<GgResidual> {
    spec.validate()?;
    check_kappa(samples, spec.kappa())?;
    gg_core(samples, n, f, &|r| crate::model::perturbation_covariance(spec, r), boot)
}

/// [`gg_residual`] with `C` replaced by `φ((R^{∘p}λ¹,λ¹), …, (R^{∘p}λ^m,λ^m))`.
pub fn gg_polynomial_extension_check(
    samples: &[OverlapArray],
    f: &ReplicaFn<'_>,
    n: usize,
    p: u32,
    lambdas: &[Vec<f64>],
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    boot: &Bootstrap,
) -> Result<GgResidual> {
    if p == 0 || lambdas.is_empty() {
        return Err(Error::Malformed("p and the number of forms must be at least 1".into()));
    }
    check_kappa(samples, lambdas[0].len())?;
    gg_core(samples, n, f, &|r| phi(&quadratic_forms(r, p, lambdas)), boot)
}

fn check_kappa(samples: &[OverlapArray], kappa: usize) -> Result<()> {
    if samples.iter().any(|a| a.kappa != kappa) {
        return Err(Error::Dimension("arrays and perturbation disagree on kappa".into()));
    }
    Ok(())
}

/// Smallest entry over all blocks.
pub fn min_block_entry(samples: &[OverlapArray]) -> f64 {
    samples
        .iter()
        .flat_map(|a| a.blocks.iter().flatten())
        .flat_map(|b| b.iter().copied())
        .fold(f64::INFINITY, f64::min)
}

/// Block map of a path: `q_p = tr γ_p` and `φ` linear in the trace between
/// consecutive `γ_p`. Traces must increase strictly.
pub fn path_generator(path: &MonotonePath) -> Result<(Vec<f64>, impl Fn(f64) -> Mat + Sync)> {
    let gammas = path.gammas().to_vec();
    let q: Vec<f64> = gammas.iter().map(|g| g.trace()).collect();
    if q.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidPath("traces of the path levels must increase strictly".into()));
    }
    let grid = q.clone();
    let phi = move |t: f64| {
        let i = grid.partition_point(|&v| v <= t).clamp(1, grid.len() - 1);
        let w = ((t - grid[i - 1]) / (grid[i] - grid[i - 1])).clamp(0.0, 1.0);
        &gammas[i - 1] * (1.0 - w) + &gammas[i] * w
    };
    Ok((q, phi))
}

/// `count` overlap arrays of `replicas` replicas from independent truncated
/// cascades with the path's `x` and blocks `γ_{α∧α′}`.
pub fn cascade_arrays(
    path: &MonotonePath,
    count: usize,
    replicas: usize,
    atoms: usize,
    seed: u64,
) -> Result<Vec<OverlapArray>> {
    let spec = crate::cascade::CascadeSpec::for_path(path, atoms)?;
    let (q, phi) = path_generator(path)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            crate::cascade::sample_overlap_array_lazy(
                &spec,
                rng::derive_seed(seed, "cascade", i as u64),
                &q,
                &phi,
                replicas,
                rng::derive_seed(seed, "replicas", i as u64),
            )
        })
        .collect()
}

/// Monotone fit of blocks as a function of their trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncFit {
    pub grid: Vec<f64>,
    #[serde(with = "linalg::rows_serde")]
    pub phi_hat: Vec<Mat>,
    pub residual: f64,
    pub lipschitz_hat: f64,
    pub bin_width: f64,
    pub blocks: usize,
}

impl SyncFit {
    /// `Φ̂(t)`, linear between grid points and constant outside.
    pub fn evaluate(&self, t: f64) -> Mat {
        let g = &self.grid;
        if g.len() == 1 || t <= g[0] {
            return self.phi_hat[0].clone();
        }
        let last = g.len() - 1;
        if t >= g[last] {
            return self.phi_hat[last].clone();
        }
        let i = g.partition_point(|&v| v <= t) - 1;
        let w = (t - g[i]) / (g[i + 1] - g[i]);
        &self.phi_hat[i] * (1.0 - w) + &self.phi_hat[i + 1] * w
    }
}

/// Least number of off-diagonal blocks [`sync_fit`] accepts.
pub const MIN_SYNC_BLOCKS: usize = 100;

/// Fits `R_{ℓℓ′} ≈ Φ̂(tr R_{ℓℓ′})` over all off-diagonal blocks of all arrays.
pub fn sync_fit(samples: &[OverlapArray], bins: usize) -> Result<SyncFit> {
    let mut blocks = Vec::new();
    for a in samples {
        for l in 0..a.n {
            for m in l + 1..a.n {
                blocks.push((a.traces[l][m], a.block(l, m).clone()));
            }
        }
    }
    sync_fit_blocks(&blocks, bins)
}

/// [`sync_fit`] on `(trace, block)` pairs.
///
/// Blocks are binned by trace and averaged per bin. Successive differences
/// of the bin means are projected onto the PSD cone and re-accumulated.
pub fn sync_fit_blocks(blocks: &[(f64, Mat)], bins: usize) -> Result<SyncFit> {
    if blocks.len() < MIN_SYNC_BLOCKS {
        return Err(Error::Malformed(format!(
            "need at least {MIN_SYNC_BLOCKS} off-diagonal blocks, got {}",
            blocks.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Malformed("bins must be positive".into()));
    }
    let k = blocks[0].1.nrows();
    let lo = blocks.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let hi = blocks.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let (nb, width) = if span < 1e-12 { (1, 0.0) } else { (bins, span / bins as f64) };
    // Sums are kept relative to the first member of each bin.
    let mut base: Vec<Option<(f64, Mat)>> = vec![None; nb];
    let mut sum_t = vec![0.0; nb];
    let mut sum_m = vec![Mat::zeros(k, k); nb];
    let mut count = vec![0usize; nb];
    for (t, m) in blocks {
        let b = if nb == 1 { 0 } else { (((t - lo) / width) as usize).min(nb - 1) };
        let (t0, m0) = base[b].get_or_insert_with(|| (*t, m.clone()));
        sum_t[b] += t - *t0;
        sum_m[b] += m - &*m0;
        count[b] += 1;
    }
    let mut grid = Vec::new();
    let mut phi_hat: Vec<Mat> = Vec::new();
    for b in 0..nb {
        if count[b] == 0 {
            continue;
        }
        let c = count[b] as f64;
        let (t0, m0) = base[b].as_ref().expect("occupied bin");
        let mean = m0 + &sum_m[b] / c;
        let next = match phi_hat.last() {
            None => mean,
            Some(prev) => prev + linalg::project_psd(&(mean - prev)),
        };
        grid.push(t0 + sum_t[b] / c);
        phi_hat.push(next);
    }
    let lipschitz_hat = grid
        .windows(2)
        .zip(phi_hat.windows(2))
        .map(|(t, p)| linalg::l1_norm(&(&p[1] - &p[0])) / (t[1] - t[0]))
        .fold(0.0, f64::max);
    let mut fit = SyncFit {
        grid,
        phi_hat,
        residual: 0.0,
        lipschitz_hat,
        bin_width: width,
        blocks: blocks.len(),
    };
    fit.residual = blocks
        .iter()
        .map(|(t, m)| linalg::l1_norm(&(m - fit.evaluate(*t))))
        .fold(0.0, f64::max);
    Ok(fit)
}

/// `φ(t)` on a grid with paired differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub t: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub increments: Vec<f64>,
    pub increment_se: Vec<f64>,
    pub max_positive_increment: f64,
    pub monotone: bool,
    /// Mean of `(1/N) log Σ_{σ∈Σ(d)} exp βH(σ)` over the same disorder draws.
    pub free_energy: f64,
    pub free_energy_se: f64,
    pub y_term: f64,
    /// `φ̂(1) − y_term − free_energy` and its paired standard error.
    pub endpoint_gap: f64,
    pub endpoint_se: f64,
    pub endpoint_pass: bool,
    pub reps: usize,
}

/// Largest configuration set stored for the interpolation.
pub const INTERPOLATION_CONFIGS: usize = 200_000;

/// `φ(t) = (1/N) 𝔼 log Σ_α v_α Σ_{σ∈Σ(d)} exp βH_{N,t}(σ, α)` with
/// `H_{N,t} = √t H_N(σ) + √(1−t) Σ_i Z_i^α(σ_i) + √t √N Y^α`.
///
/// Replicate `i` uses disorder draw `i` of `mc.seed` and one cascade with its
/// fields; every `t` shares them.
pub fn interpolation_curve(
    n: usize,
    d: &StateDistribution,
    beta: f64,
    path: &MonotonePath,
    t_grid: &[f64],
    mc: &McParams,
) -> Result<InterpolationReport> {
    mc.validate()?;
    if t_grid.is_empty() || t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Malformed("t grid must be increasing within [0, 1]".into()));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Malformed("beta must be finite and nonnegative".into()));
    }
    if !d.approx_eq(path.d(), crate::paths::CONSTRAINT_TOL) {
        return Err(Error::Dimension("path does not end at diag(d)".into()));
    }
    let k = path.kappa();
    let r = path.r();
    let constraint = Constraint::Exact { d: d.clone() };
    constraint.check(n, k)?;
    let spec = mc.spec_for(path)?;
    let factors: Vec<Mat> = (1..=r)
        .map(|p| increment_covariance(path, p).map(|c| linalg::psd_factor(&c, 1e-14)))
        .collect::<Result<_>>()?;
    let gam = path.gammas();
    let hs: Vec<f64> = gam.iter().map(linalg::hs_norm_sq).collect();
    let y_sd: Vec<f64> = (0..=r)
        .map(|p| if p == 0 { 0.0 } else { (hs[p] - hs[p - 1]).max(0.0).sqrt() })
        .collect();
    let nf = n as f64;
    let sq: Vec<(f64, f64)> = t_grid.iter().map(|t| (t.sqrt(), (1.0 - t).sqrt())).collect();
    let dim = n * k + 1;

    let rows: Vec<(Vec<f64>, f64)> = (0..mc.reps)
        .into_par_iter()
        .map(|i| {
            let g = DisorderInstance::draw(n, mc.seed, i)?;
            let space = ConfigSpace::build(&g, k, &constraint, INTERPOLATION_CONFIGS)?;
            let fe = stats::logsumexp(&space.energies.iter().map(|e| beta * e).collect::<Vec<_>>()) / nf;
            let c = sample_cascade(&spec, rng::derive_seed(mc.seed, "interpolation", i as u64))?;
            let eval = |f: &[f64], dust: Option<usize>, out: &mut [f64]| {
                let y = f[n * k];
                let mut acc = vec![LogSumExp::default(); sq.len()];
                for (s, e) in space.configs.iter().zip(&space.energies) {
                    let mut z = 0.0;
                    let mut var = 0.0;
                    for (site, &st) in s.iter().enumerate() {
                        let st = st as usize;
                        z += f[site * k + st];
                        if let Some(q) = dust {
                            var += gam[r][(st, st)] - gam[q][(st, st)];
                        }
                    }
                    for (a, &(st, ct)) in acc.iter_mut().zip(&sq) {
                        a.push(beta * (st * e + ct * z) + (1.0 - st * st) * beta * beta * var);
                    }
                }
                for ((o, a), &(st, _)) in out.iter_mut().zip(&acc).zip(&sq) {
                    let mut v = a.value() + beta * st * nf.sqrt() * y;
                    if let Some(q) = dust {
                        v += 0.5 * st * st * beta * beta * nf * (hs[r] - hs[q]);
                    }
                    *o = v;
                }
            };
            let vals = c.log_sums(
                dim,
                sq.len(),
                |depth, id, buf| {
                    add_site_fields(&factors[depth - 1], id, n, k, &mut buf[..n * k]);
                    let mut gy = rng::stream(id, "y-field", 0);
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut gy);
                    buf[n * k] += y_sd[depth] * z;
                },
                |f, out| eval(f, None, out),
                |q, f, out| eval(f, Some(q), out),
            );
            Ok((vals.into_iter().map(|v| v / nf).collect(), fe))
        })
        .collect::<Result<_>>()?;

    let col = |j: usize| -> Vec<f64> { rows.iter().map(|r| r.0[j]).collect() };
    let ests: Vec<Estimate> = (0..t_grid.len()).map(|j| stats::mean_se(&col(j))).collect();
    let mut increments = Vec::new();
    let mut increment_se = Vec::new();
    for j in 1..t_grid.len() {
        let diff: Vec<f64> = rows.iter().map(|r| r.0[j] - r.0[j - 1]).collect();
        let e = stats::mean_se(&diff);
        increments.push(e.value);
        increment_se.push(e.std_error);
    }
    let max_positive_increment = increments.iter().copied().fold(0.0, f64::max);
    let monotone = increments
        .iter()
        .zip(&increment_se)
        .all(|(v, s)| *v <= 3.0 * s + 1e-12);
    let fe = stats::mean_se(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let y_term = crate::cascade::y_closed_form(path, beta);
    let last = t_grid.len() - 1;
    let gap = stats::mean_se(&rows.iter().map(|r| r.0[last] - r.1 - y_term).collect::<Vec<_>>());
    let endpoint_pass = t_grid[last] == 1.0 && gap.value.abs() <= 3.0 * gap.std_error + 1e-12;
    Ok(InterpolationReport {
        t: t_grid.to_vec(),
        estimate: ests.iter().map(|e| e.value).collect(),
        se: ests.iter().map(|e| e.std_error).collect(),
        increments,
        increment_se,
        max_positive_increment,
        monotone,
        free_energy: fe.value,
        free_energy_se: fe.std_error,
        y_term,
        endpoint_gap: gap.value,
        endpoint_se: gap.std_error,
        endpoint_pass,
        reps: mc.reps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendreRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub d_m: Vec<f64>,
    pub f_m: f64,
    pub f_m_se: f64,
    pub gap: f64,
    pub gap_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendreReport {
    pub dual: f64,
    pub lambda_argmin: Vec<f64>,
    pub rows: Vec<LegendreRow>,
    pub nonnegative: bool,
    pub nonincreasing: bool,
}

/// Gap between `min_λ (−Σλ_k d_k + Φ(λ))` and `f_M(d^M)` for each `M`.
///
/// `f_M` is the restricted cascade functional at `λ = 0` on `Σ_M(d^M)`, with
/// `d^M` the largest-remainder rounding of `d`. Every `M` uses the same
/// cascade replicates.
pub fn legendre_gap(
    d: &StateDistribution,
    path: &MonotonePath,
    beta: f64,
    lambda_grid: &[Vec<f64>],
    m_list: &[usize],
    mc: &McParams,
    q: &QuadratureSpec,
) -> Result<LegendreReport> {
    if lambda_grid.is_empty() {
        return Err(Error::Malformed("lambda grid is empty".into()));
    }
    if m_list.is_empty() {
        return Err(Error::Malformed("no M values supplied".into()));
    }
    if !d.approx_eq(path.d(), crate::paths::CONSTRAINT_TOL) {
        return Err(Error::Dimension("path does not end at diag(d)".into()));
    }
    let k = d.kappa();
    let duals: Vec<f64> = lambda_grid
        .par_iter()
        .map(|l| {
            let lam = LagrangeMultipliers::new(k, l.clone())?;
            Ok(eval_phi(&lam, path, beta, q)?.value - lam.dot(d))
        })
        .collect::<Result<_>>()?;
    let best = (0..duals.len())
        .min_by(|&a, &b| duals[a].total_cmp(&duals[b]).then(a.cmp(&b)))
        .expect("nonempty grid");
    let dual = duals[best];
    let zero = LagrangeMultipliers::zeros(k);
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let dm = round_distribution(d, m)?;
        let set = ConfigSet::constrained(&dm, m)?;
        let f = eval_f1_restricted(&set, &zero, path, beta, mc)?;
        rows.push(LegendreRow {
            m,
            d_m: dm.d().to_vec(),
            f_m: f.value,
            f_m_se: f.std_error,
            gap: dual - f.value,
            gap_se: f.std_error,
        });
    }
    let nonnegative = rows.iter().all(|r| r.gap >= -3.0 * r.gap_se - 1e-12);
    let nonincreasing = rows
        .windows(2)
        .all(|w| w[1].gap <= w[0].gap + 3.0 * w[0].gap_se.hypot(w[1].gap_se) + 1e-12);
    Ok(LegendreReport {
        dual,
        lambda_argmin: lambda_grid[best].clone(),
        rows,
        nonnegative,
        nonincreasing,
    })
}
