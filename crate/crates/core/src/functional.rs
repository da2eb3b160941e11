//! The recursion value `Φ`, the Parisi functional `𝒫`, and the cascade
//! functionals `f¹`, `f²` on restricted configuration sets.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{sample_cascade, McParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vect};
use crate::paths::{LagrangeMultipliers, MonotonePath, StateDistribution};
use crate::quadrature::{gaussian_rule, QuadratureSpec};
use crate::rng;
use crate::stats::{self, logsumexp, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Quadrature,
    CascadeMc,
}

/// A functional value with its Monte Carlo error (zero for quadrature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub value: f64,
    pub std_error: f64,
    pub method: Method,
    pub diagnostics: BTreeMap<String, f64>,
}

impl EvalResult {
    fn quadrature(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            method: Method::Quadrature,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.value,
            std_error: self.std_error,
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.diagnostics.insert(key.to_string(), v);
        self
    }
}

/// `Cov(z_p) = 2(γ_p − γ_{p−1})` for `1 ≤ p ≤ r`.
pub fn increment_covariance(path: &MonotonePath, p: usize) -> Result<Mat> {
    if p == 0 || p > path.r() {
        return Err(Error::Malformed(format!(
            "level {p} is outside 1..={}",
            path.r()
        )));
    }
    let g = path.gammas();
    Ok(linalg::symmetrize(&((&g[p] - &g[p - 1]) * 2.0)))
}

fn check_lambda(lambda: &LagrangeMultipliers, path: &MonotonePath) -> Result<()> {
    if lambda.values().len() + 1 != path.kappa() {
        return Err(Error::Dimension(format!(
            "kappa = {} needs {} multipliers, got {}",
            path.kappa(),
            path.kappa() - 1,
            lambda.values().len()
        )));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Malformed(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(())
}

struct LevelRule {
    x: f64,
    offset: f64,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Backward recursion over the path levels, on the scaled field `h = β s`.
///
/// Each level integrates out `βz_{p+1}`. Since `X_p(h + c·1) = X_p(h) + c`, the
/// component along the all-ones direction is removed analytically: tilting
/// by it produces a constant and a drift, and only the projected covariance
/// is integrated numerically.
struct Recursion {
    kappa: usize,
    lambda: Vec<f64>,
    levels: Vec<LevelRule>,
}

impl Recursion {
    fn new(lambda: &LagrangeMultipliers, path: &MonotonePath, beta: f64, q: &QuadratureSpec) -> Result<Self> {
        q.validate()?;
        check_beta(beta)?;
        check_lambda(lambda, path)?;
        let kappa = path.kappa();
        let kf = kappa as f64;
        let u = Vect::from_element(kappa, 1.0 / kf.sqrt());
        let proj = Mat::identity(kappa, kappa) - &u * u.transpose();
        let mut levels = Vec::with_capacity(path.r());
        let mut total: u128 = 1;
        for p in 0..path.r() {
            let x = path.xs()[p];
            let s = increment_covariance(path, p + 1)? * (beta * beta);
            let su = &s * &u;
            let var_a = u.dot(&su);
            let (offset, drift) = if x > 0.0 {
                (x * var_a / (2.0 * kf), &proj * &su * (x / kf.sqrt()))
            } else {
                (0.0, Vect::zeros(kappa))
            };
            let cov = linalg::symmetrize(&(&proj * &s * &proj));
            let rule = gaussian_rule(&drift, &cov, q);
            total = total.saturating_mul(rule.points.len() as u128);
            levels.push(LevelRule {
                x,
                offset,
                points: rule.points.iter().flat_map(|v| v.iter().copied()).collect(),
                weights: rule.weights,
            });
        }
        if total > q.budget as u128 {
            return Err(Error::Budget {
                what: "quadrature nodes",
                required: total,
                limit: q.budget as u128,
            });
        }
        let mut lam = lambda.values().to_vec();
        lam.push(0.0);
        Ok(Self {
            kappa,
            lambda: lam,
            levels,
        })
    }

    fn node_count(&self) -> u128 {
        self.levels.iter().map(|l| l.weights.len() as u128).product()
    }

    fn leaf(&self, h: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for k in 0..self.kappa {
            m = m.max(h[k] + self.lambda[k]);
        }
        let mut s = 0.0;
        for k in 0..self.kappa {
            s += (h[k] + self.lambda[k] - m).exp();
        }
        let v = m + s.ln();
        if let Some(g) = grad {
            for (k, gk) in g.iter_mut().enumerate() {
                *gk = (h[k] + self.lambda[k] - v).exp();
            }
        }
        v
    }

    /// `X_p(h)`; with `grad`, also `∂X_p/∂λ_k` for `k < κ−1`.
    fn value(&self, p: usize, h: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        if p == self.levels.len() {
            return self.leaf(h, grad);
        }
        let lv = &self.levels[p];
        let k = self.kappa;
        let n = lv.weights.len();
        let mut vals = Vec::with_capacity(n);
        let mut grads: Vec<f64> = if grad.is_some() { vec![0.0; n * (k - 1)] } else { Vec::new() };
        let mut hn = vec![0.0; k];
        for i in 0..n {
            for j in 0..k {
                hn[j] = h[j] + lv.points[i * k + j];
            }
            let g = if grad.is_some() {
                Some(&mut grads[i * (k - 1)..(i + 1) * (k - 1)])
            } else {
                None
            };
            vals.push(self.value(p + 1, &hn, g));
        }
        let out = reduce(lv.x, lv.offset, &vals, &lv.weights);
        if let Some(g) = grad.as_deref_mut() {
            let tilt = tilt_weights(lv.x, &vals, &lv.weights);
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                for j in 0..k - 1 {
                    g[j] += tilt[i] * grads[i * (k - 1) + j];
                }
            }
        }
        out
    }

    fn root(&self, grad: Option<&mut [f64]>) -> f64 {
        let h = vec![0.0; self.kappa];
        if self.levels.is_empty() || grad.is_some() || self.node_count() < 4096 {
            return self.value(0, &h, grad);
        }
        let lv = &self.levels[0];
        let k = self.kappa;
        let vals: Vec<f64> = (0..lv.weights.len())
            .into_par_iter()
            .map(|i| {
                let hn: Vec<f64> = lv.points[i * k..(i + 1) * k].to_vec();
                self.value(1, &hn, None)
            })
            .collect();
        reduce(lv.x, lv.offset, &vals, &lv.weights)
    }
}

/// Below this `x` the reduction uses its second-order expansion in `x`.
const SMALL_X: f64 = 1e-9;

/// `offset + (1/x) log Σ w_i exp(x v_i)` for normalized `w`, or the plain
/// mean when `x = 0`.
fn reduce(x: f64, offset: f64, vals: &[f64], w: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    let mean = vals.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / wsum;
    if x == 0.0 {
        return mean;
    }
    if x < SMALL_X {
        let var = vals.iter().zip(w).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / wsum;
        return offset + mean + 0.5 * x * var;
    }
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x * (top - mean) < 600.0 {
        // Centered at the mean the sum is nonnegative, so `ln_1p` is well conditioned.
        let s: f64 = vals
            .iter()
            .zip(w)
            .map(|(v, wi)| wi * (x * (v - mean)).exp_m1())
            .sum::<f64>()
            / wsum;
        return offset + mean + s.max(0.0).ln_1p() / x;
    }
    let s: f64 = vals.iter().zip(w).map(|(v, wi)| wi * (x * (v - top)).exp()).sum::<f64>() / wsum;
    offset + top + s.ln() / x
}

fn tilt_weights(x: f64, vals: &[f64], w: &[f64]) -> Vec<f64> {
    if x == 0.0 {
        return w.to_vec();
    }
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t: Vec<f64> = vals.iter().zip(w).map(|(v, w)| w * (x * (v - m)).exp()).collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// `Φ(λ, d, r, x, γ) = X_0` by Gauss–Hermite quadrature.
pub fn eval_phi(
    lambda: &LagrangeMultipliers,
    path: &MonotonePath,
    beta: f64,
    q: &QuadratureSpec,
) -> Result<EvalResult> {
    let rec = Recursion::new(lambda, path, beta, q)?;
    let n = rec.node_count();
    Ok(EvalResult::quadrature(rec.root(None)).with("nodes", n as f64))
}

/// `Φ` together with `∂Φ/∂λ_k`, the softmax weights of the last state-sum
/// averaged under the recursion's tilted measures.
pub fn eval_phi_with_gradient(
    lambda: &LagrangeMultipliers,
    path: &MonotonePath,
    beta: f64,
    q: &QuadratureSpec,
) -> Result<(f64, Vec<f64>)> {
    let rec = Recursion::new(lambda, path, beta, q)?;
    let mut g = vec![0.0; path.kappa() - 1];
    let v = rec.root(Some(&mut g));
    Ok((v, g))
}

/// `(β²/2) Σ_p x_p (‖γ_{p+1}‖²_HS − ‖γ_p‖²_HS)`, the cascade `Y` term.
pub fn eval_f2(path: &MonotonePath, beta: f64) -> f64 {
    crate::cascade::y_closed_form(path, beta)
}

/// Same quantity as [`eval_f2`] written as `(β²/2)Σd_k² − (β²/2)∫‖π‖²_HS`.
pub fn eval_f2_rearranged(path: &MonotonePath, beta: f64) -> f64 {
    0.5 * beta * beta * (path.d().sum_sq() - path.hs_integral())
}

/// `𝒫 = Φ − Σ λ_k d_k − f²`. The diagnostics carry the rearranged form.
pub fn eval_parisi(
    lambda: &LagrangeMultipliers,
    d: &StateDistribution,
    path: &MonotonePath,
    beta: f64,
    q: &QuadratureSpec,
) -> Result<EvalResult> {
    if !d.approx_eq(path.d(), crate::paths::CONSTRAINT_TOL) {
        return Err(Error::Dimension("path does not end at diag(d)".into()));
    }
    let phi = eval_phi(lambda, path, beta, q)?;
    let lagrange = lambda.dot(d);
    let value = phi.value - lagrange - eval_f2(path, beta);
    let rearranged = phi.value - lagrange - 0.5 * beta * beta * d.sum_sq()
        + 0.5 * beta * beta * path.hs_integral();
    Ok(EvalResult::quadrature(value)
        .with("nodes", phi.diagnostics["nodes"])
        .with("phi", phi.value)
        .with("rearranged", rearranged))
}

/// A set of configurations `σ ∈ {0..κ}^M` over which the cascade sums run.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigSet {
    /// Every configuration.
    All { m: usize, kappa: usize },
    /// Configurations with exactly `counts[k]` sites in state `k`.
    Constrained { counts: Vec<usize> },
    /// Configurations whose state proportions are within `eps` of `d`.
    Relaxed { m: usize, d: Vec<f64>, eps: f64 },
    /// An explicit list.
    Explicit { kappa: usize, configs: Vec<Vec<usize>> },
}

impl ConfigSet {
    pub fn constrained(d: &StateDistribution, m: usize) -> Result<Self> {
        let counts = d.counts(m).ok_or_else(|| {
            Error::Infeasible(format!("{:?} is not representable with M = {m}", d.d()))
        })?;
        Ok(Self::Constrained { counts })
    }

    pub fn sites(&self) -> usize {
        match self {
            Self::All { m, .. } | Self::Relaxed { m, .. } => *m,
            Self::Constrained { counts } => counts.iter().sum(),
            Self::Explicit { configs, .. } => configs.first().map_or(0, Vec::len),
        }
    }

    pub fn kappa(&self) -> usize {
        match self {
            Self::All { kappa, .. } | Self::Explicit { kappa, .. } => *kappa,
            Self::Constrained { counts } => counts.len(),
            Self::Relaxed { d, .. } => d.len(),
        }
    }

    fn allows(&self, counts: &[usize]) -> bool {
        match self {
            Self::Constrained { counts: c } => c == counts,
            Self::Relaxed { m, d, eps } => counts
                .iter()
                .zip(d)
                .all(|(&c, &dk)| (c as f64 / *m as f64 - dk).abs() <= *eps + 1e-12),
            _ => true,
        }
    }

    fn caps(&self) -> Vec<usize> {
        match self {
            Self::Constrained { counts } => counts.clone(),
            _ => vec![self.sites(); self.kappa()],
        }
    }

    fn check(&self) -> Result<()> {
        if self.sites() == 0 || self.kappa() == 0 {
            return Err(Error::Malformed("configuration set is empty".into()));
        }
        if let Self::Explicit { kappa, configs } = self {
            let m = self.sites();
            if configs
                .iter()
                .any(|c| c.len() != m || c.iter().any(|&s| s >= *kappa))
            {
                return Err(Error::Malformed("explicit configurations are inconsistent".into()));
            }
        }
        if self.log_size().is_infinite() {
            return Err(Error::Malformed("configuration set is empty".into()));
        }
        Ok(())
    }

    /// `log |S|`.
    pub fn log_size(&self) -> f64 {
        let a = vec![0.0; self.sites() * self.kappa()];
        self.prepare().log_sum(&a)
    }

    fn prepare(&self) -> PreparedSet<'_> {
        let k = self.kappa();
        let m = self.sites();
        match self {
            Self::All { .. } => PreparedSet::All { m, k },
            Self::Explicit { configs, .. } => PreparedSet::Explicit { k, configs },
            _ => {
                let caps = self.caps();
                let mut radix = vec![1usize; k];
                for j in 1..k {
                    radix[j] = radix[j - 1] * (caps[j - 1] + 1);
                }
                let states = radix[k - 1] * (caps[k - 1] + 1);
                let mut counts = vec![0usize; k];
                let mut next = vec![usize::MAX; states * k];
                let mut level = vec![0usize; states];
                let mut terminal = Vec::new();
                for s in 0..states {
                    let mut rem = s;
                    for j in (0..k).rev() {
                        counts[j] = rem / radix[j];
                        rem %= radix[j];
                    }
                    level[s] = counts.iter().sum();
                    for j in 0..k {
                        if counts[j] < caps[j] {
                            next[s * k + j] = s + radix[j];
                        }
                    }
                    if level[s] == m && self.allows(&counts) {
                        terminal.push(s);
                    }
                }
                let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); m + 1];
                for s in 0..states {
                    if level[s] <= m {
                        by_level[level[s]].push(s);
                    }
                }
                PreparedSet::Counts {
                    m,
                    k,
                    next,
                    by_level,
                    terminal,
                    states,
                }
            }
        }
    }
}

enum PreparedSet<'a> {
    All {
        m: usize,
        k: usize,
    },
    Explicit {
        k: usize,
        configs: &'a [Vec<usize>],
    },
    Counts {
        m: usize,
        k: usize,
        next: Vec<usize>,
        by_level: Vec<Vec<usize>>,
        terminal: Vec<usize>,
        states: usize,
    },
}

impl PreparedSet<'_> {
    /// `log Σ_{σ∈S} exp Σ_i a[i·κ + σ_i]`.
    fn log_sum(&self, a: &[f64]) -> f64 {
        match self {
            PreparedSet::All { m, k } => (0..*m).map(|i| logsumexp(&a[i * k..(i + 1) * k])).sum(),
            PreparedSet::Explicit { k, configs, .. } => {
                let terms: Vec<f64> = configs
                    .iter()
                    .map(|c| c.iter().enumerate().map(|(i, &s)| a[i * k + s]).sum())
                    .collect();
                logsumexp(&terms)
            }
            PreparedSet::Counts {
                m,
                k,
                next,
                by_level,
                terminal,
                states,
            } => {
                let mut dp = vec![0.0; *states];
                dp[0] = 1.0;
                let mut shift = 0.0;
                let mut e = vec![0.0; *k];
                for i in 0..*m {
                    let row = &a[i * k..(i + 1) * k];
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    shift += mx;
                    for (j, ej) in e.iter_mut().enumerate() {
                        *ej = (row[j] - mx).exp();
                    }
                    for &s in &by_level[i] {
                        let v = dp[s];
                        if v == 0.0 {
                            continue;
                        }
                        dp[s] = 0.0;
                        for j in 0..*k {
                            let t = next[s * k + j];
                            if t != usize::MAX {
                                dp[t] += v * e[j];
                            }
                        }
                    }
                }
                let total: f64 = terminal.iter().map(|&s| dp[s]).sum();
                shift + total.ln()
            }
        }
    }
}

/// `(1/M) E log Σ_α v_α Σ_{σ∈S} exp Σ_i (β Z_i^α(σ_i) + λ_{σ_i})` over truncated
/// cascades, with independent copies `Z_i` of the cascade field per site.
pub fn eval_f1_restricted(
    set: &ConfigSet,
    lambda: &LagrangeMultipliers,
    path: &MonotonePath,
    beta: f64,
    mc: &McParams,
) -> Result<EvalResult> {
    mc.validate()?;
    check_beta(beta)?;
    check_lambda(lambda, path)?;
    set.check()?;
    if set.kappa() != path.kappa() {
        return Err(Error::Dimension("configuration set and path disagree on kappa".into()));
    }
    let vals = f1_samples(set, lambda, path, beta, mc, "f1")?;
    let m = set.sites() as f64;
    let est = stats::jackknife(&vals, |s| s.iter().sum::<f64>() / s.len() as f64);
    Ok(EvalResult {
        value: est.value / m,
        std_error: est.std_error / m,
        method: Method::CascadeMc,
        diagnostics: BTreeMap::from([
            ("reps".to_string(), mc.reps as f64),
            ("atoms".to_string(), mc.atoms as f64),
            ("sites".to_string(), m),
        ]),
    })
}

/// Per-replicate values of `log Σ_α v_α Σ_{σ∈S} exp(…)` (not divided by M).
fn f1_samples(
    set: &ConfigSet,
    lambda: &LagrangeMultipliers,
    path: &MonotonePath,
    beta: f64,
    mc: &McParams,
    label: &str,
) -> Result<Vec<f64>> {
    let spec = mc.spec_for(path)?;
    let k = path.kappa();
    let m = set.sites();
    let r = path.r();
    let factors: Vec<Mat> = (1..=r)
        .map(|p| increment_covariance(path, p).map(|c| linalg::psd_factor(&c, 1e-14)))
        .collect::<Result<_>>()?;
    let top = &path.gammas()[r];
    let dust_var: Vec<Vec<f64>> = (0..r)
        .map(|q| (0..k).map(|j| beta * beta * (top[(j, j)] - path.gammas()[q][(j, j)])).collect())
        .collect();
    let mut lam = lambda.values().to_vec();
    lam.push(0.0);
    let prepared = set.prepare();
    (0..mc.reps)
        .into_par_iter()
        .map(|i| {
            let c = sample_cascade(&spec, rng::derive_seed(mc.seed, label, i as u64))?;
            let ls = c.log_sum(
                m * k,
                |depth, id, buf| add_site_fields(&factors[depth - 1], id, m, k, buf),
                |f| {
                    let mut a = vec![0.0; m * k];
                    for s in 0..m {
                        for j in 0..k {
                            a[s * k + j] = beta * f[s * k + j] + lam[j];
                        }
                    }
                    prepared.log_sum(&a)
                },
                |q, f| {
                    let mut a = vec![0.0; m * k];
                    for s in 0..m {
                        for j in 0..k {
                            a[s * k + j] = beta * f[s * k + j] + lam[j] + dust_var[q][j];
                        }
                    }
                    prepared.log_sum(&a)
                },
            );
            Ok(ls)
        })
        .collect()
}

/// Adds `L ξ` for each of `m` sites, `ξ` standard normal keyed by the node.
pub(crate) fn add_site_fields(factor: &Mat, id: u64, m: usize, k: usize, buf: &mut [f64]) {
    let rank = factor.ncols();
    if rank == 0 {
        return;
    }
    let mut g = rng::stream(id, "z-field", 0);
    let mut xi = vec![0.0; rank];
    for s in 0..m {
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut g);
        }
        for j in 0..k {
            let mut z = 0.0;
            for (c, x) in xi.iter().enumerate() {
                z += factor[(j, c)] * x;
            }
            buf[s * k + j] += z;
        }
    }
}

/// `Φ` by Monte Carlo over truncated cascades, a single site with all states.
pub fn eval_phi_cascade_mc(
    lambda: &LagrangeMultipliers,
    path: &MonotonePath,
    beta: f64,
    mc: &McParams,
) -> Result<EvalResult> {
    let set = ConfigSet::All {
        m: 1,
        kappa: path.kappa(),
    };
    eval_f1_restricted(&set, lambda, path, beta, mc)
}

/// `f¹_M(Σ_M(δ)) − f²` at `λ = 0`.
///
/// `δ` is an `M`-site approximation of the path's endpoint `d` (for example
/// its rounding); it only selects the configuration set.
pub fn eval_lower_bound(
    m: usize,
    delta: &StateDistribution,
    path: &MonotonePath,
    beta: f64,
    mc: &McParams,
) -> Result<EvalResult> {
    if delta.kappa() != path.kappa() {
        return Err(Error::Dimension("delta and path disagree on kappa".into()));
    }
    let set = ConfigSet::constrained(delta, m)?;
    let f1 = eval_f1_restricted(&set, &LagrangeMultipliers::zeros(path.kappa()), path, beta, mc)?;
    let f2 = eval_f2(path, beta);
    Ok(EvalResult {
        value: f1.value - f2,
        std_error: f1.std_error,
        method: Method::CascadeMc,
        diagnostics: f1.diagnostics.clone(),
    }
    .with("f1", f1.value)
    .with("f2", f2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::random_path;

    fn dist(v: &[f64]) -> StateDistribution {
        StateDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn increment_examples() {
        let d = dist(&[0.5, 0.5]);
        let p = MonotonePath::one_step(d, 0.4).unwrap();
        assert_eq!(increment_covariance(&p, 1).unwrap(), Mat::identity(2, 2));
        assert!(increment_covariance(&p, 0).is_err());
        assert!(increment_covariance(&p, 2).is_err());
    }

    #[test]
    fn beta_zero_gives_log_kappa() {
        let mut g = rng::stream(3, "t", 0);
        for kappa in 1..=4 {
            let d = crate::paths::random_distribution(kappa, &mut g);
            let p = random_path(&d, 2, &mut g).unwrap();
            let l = LagrangeMultipliers::zeros(kappa);
            let v = eval_phi(&l, &p, 0.0, &QuadratureSpec::default()).unwrap();
            assert!((v.value - (kappa as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_one_closed_form() {
        for a in [0.1, 0.5, 0.9] {
            for beta in [0.5, 1.0, 2.0] {
                let p = MonotonePath::one_step(dist(&[1.0]), a).unwrap();
                let l = LagrangeMultipliers::zeros(1);
                let q = QuadratureSpec::default();
                let phi = eval_phi(&l, &p, beta, &q).unwrap().value;
                assert!((phi - a * beta * beta).abs() < 1e-12);
                let par = eval_parisi(&l, p.d(), &p, beta, &q).unwrap().value;
                assert!((par - 0.5 * a * beta * beta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f2_examples() {
        let d = dist(&[0.5, 0.5]);
        let low = MonotonePath::one_step(d.clone(), 1.0).unwrap();
        assert!((eval_f2(&low, 1.0) - 0.25).abs() < 1e-15);
        assert!((eval_f2_rearranged(&low, 1.0) - 0.25).abs() < 1e-15);
        let high = MonotonePath::one_step(d, 0.0).unwrap();
        assert_eq!(eval_f2(&high, 1.0), 0.0);
        assert_eq!(eval_f2(&low, 0.0), 0.0);
    }

    #[test]
    fn config_set_sizes() {
        let all = ConfigSet::All { m: 3, kappa: 3 };
        assert!((all.log_size() - 27f64.ln()).abs() < 1e-12);
        let c = ConfigSet::Constrained { counts: vec![2, 2] };
        assert!((c.log_size() - 6f64.ln()).abs() < 1e-12);
        let c = ConfigSet::Constrained { counts: vec![1, 2, 1] };
        assert!((c.log_size() - 12f64.ln()).abs() < 1e-12);
        let r = ConfigSet::Relaxed { m: 4, d: vec![0.5, 0.5], eps: 0.25 };
        assert!((r.log_size() - 14f64.ln()).abs() < 1e-12);
        let e = ConfigSet::Explicit { kappa: 2, configs: vec![vec![0, 1], vec![1, 1]] };
        assert!((e.log_size() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constrained_sum_matches_brute_force() {
        let mut g = rng::stream(4, "t", 0);
        let counts = vec![2, 1, 2];
        let set = ConfigSet::Constrained { counts: counts.clone() };
        let (m, k): (usize, usize) = (5, 3);
        let a: Vec<f64> = (0..m * k).map(|_| StandardNormal.sample(&mut g)).collect();
        let mut terms = Vec::new();
        for code in 0..k.pow(m as u32) {
            let mut c = code;
            let mut sigma = vec![0; m];
            for s in sigma.iter_mut() {
                *s = c % k;
                c /= k;
            }
            let mut n = vec![0; k];
            sigma.iter().for_each(|&s| n[s] += 1);
            if n == counts {
                terms.push(sigma.iter().enumerate().map(|(i, &s)| a[i * k + s]).sum());
            }
        }
        let direct = logsumexp(&terms);
        assert!((set.prepare().log_sum(&a) - direct).abs() < 1e-12);
    }
}
