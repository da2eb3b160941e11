//! Numerical search for `sup_d inf_{λ, x, γ} 𝒫` over discrete paths with a
//! fixed number of levels.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::eval_parisi;
use crate::linalg::{self, Mat};
use crate::paths::{LagrangeMultipliers, MonotonePath, StateDistribution};
use crate::quadrature::QuadratureSpec;
use crate::rng;

/// Objective assigned to infeasible decodes, scaled by `1 + violation`.
pub const PENALTY_BASE: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub starts: usize,
    /// Objective evaluations per simplex run.
    pub max_evals: usize,
    /// Fresh-simplex restarts from each run's best point.
    pub restarts: usize,
    pub tolerance: f64,
    pub initial_step: f64,
    pub grid_mesh: f64,
    /// Evaluations of the inner problem spent refining the best grid point.
    pub refine_evals: usize,
    pub nonneg_gamma: bool,
    pub warm_start: bool,
    pub quadrature: QuadratureSpec,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_evals: 1500,
            restarts: 1,
            tolerance: 1e-11,
            initial_step: 0.5,
            grid_mesh: 0.125,
            refine_evals: 12,
            nonneg_gamma: false,
            warm_start: true,
            quadrature: QuadratureSpec::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 || self.max_evals == 0 {
            return Err(Error::Malformed("starts and max_evals must be positive".into()));
        }
        if !(self.grid_mesh > 0.0 && self.grid_mesh <= 1.0) {
            return Err(Error::Malformed("grid mesh must lie in (0, 1]".into()));
        }
        let steps = (1.0 / self.grid_mesh).round();
        if ((1.0 / self.grid_mesh) - steps).abs() > 1e-9 {
            return Err(Error::Malformed("grid mesh must be 1/m for an integer m".into()));
        }
        if !(self.tolerance >= 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::Malformed("tolerance must be nonnegative and step positive".into()));
        }
        self.quadrature.validate()
    }
}

/// Unconstrained coordinates for `(λ, x, γ)` with `r` levels.
///
/// Layout: `λ_1..λ_{κ−1}`, then `r` numbers `u` with `x_0 = s(u_0)` and
/// `x_p = s(u_0 + Σ_{q≤p} e^{u_q})` for the logistic `s`, then the
/// lower-triangular factors `A_1..A_{r−1}` row by row. `γ_p = Σ_{q≤p} A_q A_qᵀ`
/// and the last increment is `diag(d) − γ_{r−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParametrization {
    pub d: StateDistribution,
    pub r: usize,
}

/// A decoded point, or the size of its constraint violation.
#[derive(Debug, Clone)]
pub enum Decoded {
    Feasible(LagrangeMultipliers, MonotonePath),
    Infeasible(f64),
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl PathParametrization {
    pub fn new(d: StateDistribution, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Malformed("r must be at least 1".into()));
        }
        Ok(Self { d, r })
    }

    pub fn kappa(&self) -> usize {
        self.d.kappa()
    }

    fn tri(&self) -> usize {
        let k = self.kappa();
        k * (k + 1) / 2
    }

    pub fn dim(&self) -> usize {
        self.kappa() - 1 + self.r + (self.r - 1) * self.tri()
    }

    fn factor(&self, theta: &[f64], p: usize) -> Mat {
        let k = self.kappa();
        let base = k - 1 + self.r + (p - 1) * self.tri();
        let mut a = Mat::zeros(k, k);
        let mut idx = base;
        for i in 0..k {
            for j in 0..=i {
                a[(i, j)] = theta[idx];
                idx += 1;
            }
        }
        a
    }

    pub fn decode(&self, theta: &[f64], nonneg: bool) -> Result<Decoded> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                theta.len()
            )));
        }
        let k = self.kappa();
        let lambda = LagrangeMultipliers::new(k, theta[..k - 1].to_vec())?;
        let u = &theta[k - 1..k - 1 + self.r];
        let mut acc = u[0];
        let mut x = Vec::with_capacity(self.r + 1);
        x.push(logistic(acc));
        for v in &u[1..] {
            acc += v.min(50.0).exp();
            x.push(logistic(acc));
        }
        x.push(1.0);
        let mut gammas = vec![Mat::zeros(k, k)];
        for p in 1..self.r {
            let a = self.factor(theta, p);
            let next = &gammas[p - 1] + &a * a.transpose();
            gammas.push(next);
        }
        let last = self.d.diag();
        let mut violation = (-linalg::min_eigenvalue(&(&last - &gammas[self.r - 1]))).max(0.0);
        if nonneg {
            for g in &gammas {
                violation += g.iter().map(|v| (-v).max(0.0)).sum::<f64>();
            }
        }
        if violation > 0.0 {
            return Ok(Decoded::Infeasible(violation));
        }
        gammas.push(last);
        match MonotonePath::new(self.d.clone(), x, gammas) {
            Ok(path) => Ok(Decoded::Feasible(lambda, path)),
            Err(Error::InvalidPath(_)) => Ok(Decoded::Infeasible(f64::EPSILON)),
            Err(e) => Err(e),
        }
    }

    /// The start `λ = 0`, equally spaced `x`, `γ_p = (p/r) diag(d)`.
    pub fn central_point(&self) -> Vec<f64> {
        let k = self.kappa();
        let mut theta = vec![0.0; self.dim()];
        let xs: Vec<f64> = (0..self.r).map(|p| (p + 1) as f64 / (self.r + 1) as f64).collect();
        encode_x(&xs, &mut theta[k - 1..k - 1 + self.r]);
        let scale = 1.0 / self.r as f64;
        for p in 1..self.r {
            let base = k - 1 + self.r + (p - 1) * self.tri();
            let mut idx = base;
            for i in 0..k {
                for j in 0..=i {
                    if i == j {
                        theta[idx] = (self.d.d()[i] * scale).sqrt();
                    }
                    idx += 1;
                }
            }
        }
        theta
    }

    /// A random start: random `λ`, `x`, and factors shrunk until feasible.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.kappa();
        let mut theta = vec![0.0; self.dim()];
        for v in theta[..k - 1].iter_mut() {
            let s: f64 = StandardNormal.sample(rng);
            *v = 0.5 * s;
        }
        let mut xs: Vec<f64> = (0..self.r).map(|_| rng.random_range(0.02..0.98)).collect();
        xs.sort_by(f64::total_cmp);
        for i in 1..xs.len() {
            if xs[i] <= xs[i - 1] {
                xs[i] = (xs[i - 1] + 1.0) / 2.0;
            }
        }
        encode_x(&xs, &mut theta[k - 1..k - 1 + self.r]);
        let start = k - 1 + self.r;
        let scale = (1.0 / self.r as f64).sqrt();
        for (i, v) in theta[start..].iter_mut().enumerate() {
            let s: f64 = StandardNormal.sample(rng);
            *v = scale * s * (0.5 / k as f64).sqrt() * if i % 2 == 0 { 1.0 } else { 0.5 };
        }
        for _ in 0..60 {
            match self.decode(&theta, false) {
                Ok(Decoded::Feasible(..)) => break,
                _ => theta[start..].iter_mut().for_each(|v| *v *= 0.7),
            }
        }
        theta
    }

    /// Coordinates of `prev` (with `r − 1` levels) describing the same path
    /// with an extra level of zero increment below `x_0`.
    pub fn embed_lower(&self, prev: &[f64]) -> Vec<f64> {
        let k = self.kappa();
        let lower_r = self.r - 1;
        let x0 = logistic(prev[k - 1]);
        let mut theta = Vec::with_capacity(self.dim());
        theta.extend_from_slice(&prev[..k - 1]);
        theta.push(logit(x0 / 2.0));
        theta.push((prev[k - 1] - logit(x0 / 2.0)).ln());
        theta.extend_from_slice(&prev[k..k - 1 + lower_r]);
        theta.extend(std::iter::repeat_n(0.0, self.tri()));
        theta.extend_from_slice(&prev[k - 1 + lower_r..]);
        theta
    }
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

fn encode_x(xs: &[f64], out: &mut [f64]) {
    out[0] = logit(xs[0]);
    for i in 1..xs.len() {
        out[i] = (logit(xs[i]) - logit(xs[i - 1])).ln();
    }
}

/// Result of one simplex run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexRun {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Nelder–Mead minimization with the standard coefficients.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: f64, max_evals: usize, tol: f64) -> Result<SimplexRun>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = f(x)?;
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    };
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals)?;
    pts.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals)?;
        pts.push((x, v));
    }
    let order = |pts: &mut Vec<(Vec<f64>, f64)>| {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex(&a.0, &b.0)));
    };
    order(&mut pts);
    let mut trace = vec![pts[0].1];
    let mut converged = n == 0;
    while !converged && evals < max_evals {
        let worst = pts[n].1;
        let best = pts[0].1;
        if (worst - best).abs() <= tol * (1.0 + best.abs()) {
            converged = true;
            break;
        }
        let mut c = vec![0.0; n];
        for (x, _) in &pts[..n] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { c.iter().zip(&pts[n].0).map(|(ci, wi)| ci + t * (wi - ci)).collect() };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals)?;
        if fr < pts[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals)?;
            pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < pts[n - 1].1 {
            pts[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < pts[n].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals)?;
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals)?;
                (xc, fc)
            };
            if fc < pts[n].1.min(fr) {
                pts[n] = (xc, fc);
            } else {
                let b = pts[0].0.clone();
                for p in pts.iter_mut().skip(1) {
                    let x: Vec<f64> = b.iter().zip(&p.0).map(|(bi, xi)| bi + 0.5 * (xi - bi)).collect();
                    let v = eval(&x, &mut evals)?;
                    *p = (x, v);
                }
            }
        }
        order(&mut pts);
        trace.push(pts[0].1);
    }
    let (x, value) = pts.swap_remove(0);
    Ok(SimplexRun {
        x,
        value,
        evals,
        converged,
        trace,
    })
}

fn lex(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
    pub rejections: usize,
    pub warm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub d: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub value: f64,
    pub beta: f64,
    pub r: usize,
    pub d: Vec<f64>,
    pub lambda: LagrangeMultipliers,
    pub path: MonotonePath,
    /// Best value after each simplex iteration of the winning start.
    pub trace: Vec<f64>,
    pub starts: Vec<StartSummary>,
    pub rejections: usize,
    pub evaluations: usize,
    /// Outer search only: the grid values over `d`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridPoint>,
}

struct Candidate {
    theta: Vec<f64>,
    value: f64,
    trace: Vec<f64>,
    summary: StartSummary,
}

fn run_start(
    param: &PathParametrization,
    beta: f64,
    cfg: &OptimizerConfig,
    start: Vec<f64>,
    warm: bool,
) -> Result<Candidate> {
    let mut rejections = 0usize;
    let mut objective = |theta: &[f64]| -> Result<f64> {
        match param.decode(theta, cfg.nonneg_gamma)? {
            Decoded::Feasible(lambda, path) => {
                Ok(eval_parisi(&lambda, &param.d, &path, beta, &cfg.quadrature)?.value)
            }
            Decoded::Infeasible(v) => {
                rejections += 1;
                Ok(PENALTY_BASE * (1.0 + v))
            }
        }
    };
    let mut run = nelder_mead(&mut objective, &start, cfg.initial_step, cfg.max_evals, cfg.tolerance)?;
    let mut evals = run.evals;
    let mut trace = std::mem::take(&mut run.trace);
    for _ in 0..cfg.restarts {
        let next = nelder_mead(&mut objective, &run.x, cfg.initial_step * 0.1, cfg.max_evals, cfg.tolerance)?;
        evals += next.evals;
        trace.extend(next.trace.iter().skip(1));
        if next.value < run.value || (next.value == run.value && lex(&next.x, &run.x).is_lt()) {
            run = SimplexRun { trace: Vec::new(), ..next };
        }
    }
    Ok(Candidate {
        theta: run.x,
        value: run.value,
        trace,
        summary: StartSummary {
            value: run.value,
            evals,
            converged: run.converged,
            rejections,
            warm,
        },
    })
}

/// `inf_{λ, x, γ} 𝒫(λ, d, x, γ)` over paths with `r` levels.
///
/// Start 0 is the central point, the others are random with stream
/// `(seed, "start", i)`. With `warm_start` and `r > 1` the optimum for `r − 1`
/// levels, embedded with a zero increment, is one more start, so the value
/// never exceeds the `r − 1` value. Ties go to the lexicographically smaller
/// coordinates.
pub fn inner_minimize(
    d: &StateDistribution,
    r: usize,
    beta: f64,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<OptimizerReport> {
    cfg.validate()?;
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Malformed("beta must be finite and nonnegative".into()));
    }
    let param = PathParametrization::new(d.clone(), r)?;
    let mut starts: Vec<(Vec<f64>, bool)> = (0..cfg.starts)
        .map(|i| {
            if i == 0 {
                (param.central_point(), false)
            } else {
                let mut g = rng::stream(seed, "start", i as u64);
                (param.random_point(&mut g), false)
            }
        })
        .collect();
    if cfg.warm_start && r > 1 {
        let lower = inner_minimize(d, r - 1, beta, cfg, seed)?;
        let lp = PathParametrization::new(d.clone(), r - 1)?;
        let theta = encode_report(&lp, &lower)?;
        starts.push((param.embed_lower(&theta), true));
    }
    let cands: Vec<Candidate> = starts
        .into_par_iter()
        .map(|(s, warm)| run_start(&param, beta, cfg, s, warm))
        .collect::<Result<_>>()?;
    let best = (0..cands.len())
        .min_by(|&a, &b| {
            cands[a]
                .value
                .total_cmp(&cands[b].value)
                .then_with(|| lex(&cands[a].theta, &cands[b].theta))
        })
        .expect("at least one start");
    let (lambda, path) = match param.decode(&cands[best].theta, cfg.nonneg_gamma)? {
        Decoded::Feasible(l, p) => (l, p),
        Decoded::Infeasible(_) => return Err(Error::Optimizer("no feasible start found".into())),
    };
    let value = eval_parisi(&lambda, d, &path, beta, &cfg.quadrature)?.value;
    Ok(OptimizerReport {
        value,
        beta,
        r,
        d: d.d().to_vec(),
        lambda,
        path,
        trace: cands[best].trace.clone(),
        rejections: cands.iter().map(|c| c.summary.rejections).sum(),
        evaluations: cands.iter().map(|c| c.summary.evals).sum(),
        starts: cands.into_iter().map(|c| c.summary).collect(),
        grid: Vec::new(),
    })
}

/// Coordinates reproducing a reported optimum exactly in `x` and `λ`.
fn encode_report(param: &PathParametrization, rep: &OptimizerReport) -> Result<Vec<f64>> {
    let k = param.kappa();
    let mut theta = vec![0.0; param.dim()];
    theta[..k - 1].copy_from_slice(rep.lambda.values());
    encode_x(&rep.path.xs()[..param.r], &mut theta[k - 1..k - 1 + param.r]);
    let g = rep.path.gammas();
    for p in 1..param.r {
        let inc = linalg::symmetrize(&(&g[p] - &g[p - 1]));
        let a = lower_factor(&inc);
        let base = k - 1 + param.r + (p - 1) * param.tri();
        let mut idx = base;
        for i in 0..k {
            for j in 0..=i {
                theta[idx] = a[(i, j)];
                idx += 1;
            }
        }
    }
    Ok(theta)
}

/// Lower-triangular `L` with `L Lᵀ ≈ m` for PSD `m`, tolerant of singular `m`.
fn lower_factor(m: &Mat) -> Mat {
    let k = m.nrows();
    let mut l = Mat::zeros(k, k);
    for j in 0..k {
        let mut s = m[(j, j)];
        for c in 0..j {
            s -= l[(j, c)] * l[(j, c)];
        }
        let pivot = if s > 1e-15 { s.sqrt() } else { 0.0 };
        l[(j, j)] = pivot;
        for i in j + 1..k {
            let mut v = m[(i, j)];
            for c in 0..j {
                v -= l[(i, c)] * l[(j, c)];
            }
            l[(i, j)] = if pivot > 0.0 { v / pivot } else { 0.0 };
        }
    }
    l
}

/// Points of the simplex with coordinates in `mesh·ℕ`, all positive when
/// possible.
pub fn simplex_grid(kappa: usize, mesh: f64) -> Vec<Vec<f64>> {
    let m = (1.0 / mesh).round() as usize;
    let min = usize::from(m >= kappa);
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(kappa);
    fn rec(k: usize, left: usize, min: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k - 1 {
            if left >= min {
                let mut v: Vec<f64> = cur.iter().map(|&c| c as f64 / m as f64).collect();
                v.push(left as f64 / m as f64);
                out.push(v);
            }
            return;
        }
        for c in min..=left {
            cur.push(c);
            rec(k, left - c, min, m, cur, out);
            cur.pop();
        }
    }
    rec(kappa, m, min, m, &mut cur, &mut out);
    out
}

fn softmax_d(z: &[f64]) -> Result<StateDistribution> {
    let mx = z.iter().copied().fold(0.0, f64::max);
    let mut e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    e.push((-mx).exp());
    let s: f64 = e.iter().sum();
    let mut d: Vec<f64> = e.iter().map(|v| v / s).collect();
    let rest: f64 = d[..d.len() - 1].iter().sum();
    *d.last_mut().unwrap() = 1.0 - rest;
    StateDistribution::new(d)
}

/// `sup_d inf 𝒫` by a simplex grid over `d` and a short local refinement.
///
/// Grid point `i` is minimized with seed `derive_seed(seed, "grid", i)`; the
/// best grid point (lowest index on ties) seeds a simplex search over softmax
/// coordinates of `d`.
pub fn outer_maximize(kappa: usize, beta: f64, r: usize, cfg: &OptimizerConfig, seed: u64) -> Result<OptimizerReport> {
    cfg.validate()?;
    if kappa == 0 {
        return Err(Error::Malformed("kappa must be at least 1".into()));
    }
    let points = simplex_grid(kappa, cfg.grid_mesh);
    let reports: Vec<OptimizerReport> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = StateDistribution::new(p.clone())?;
            inner_minimize(&d, r, beta, cfg, rng::derive_seed(seed, "grid", i as u64))
        })
        .collect::<Result<_>>()?;
    let grid: Vec<GridPoint> = reports
        .iter()
        .map(|r| GridPoint {
            d: r.d.clone(),
            value: r.value,
        })
        .collect();
    let best_idx = (0..reports.len())
        .max_by(|&a, &b| reports[a].value.total_cmp(&reports[b].value).then(b.cmp(&a)))
        .expect("nonempty grid");
    let mut best = reports[best_idx].clone();
    if kappa > 1 && cfg.refine_evals > 0 && best.d.iter().all(|&v| v > 0.0) {
        let z0: Vec<f64> = best.d[..kappa - 1]
            .iter()
            .map(|v| (v / best.d[kappa - 1]).ln())
            .collect();
        let mut found: Vec<OptimizerReport> = Vec::new();
        let mut count = 0u64;
        let run = nelder_mead(
            |z| {
                let d = softmax_d(z)?;
                count += 1;
                let rep = inner_minimize(&d, r, beta, cfg, rng::derive_seed(seed, "refine", count))?;
                let v = -rep.value;
                found.push(rep);
                Ok(v)
            },
            &z0,
            cfg.grid_mesh,
            cfg.refine_evals,
            cfg.tolerance,
        );
        run?;
        for rep in found {
            if rep.value > best.value {
                best = rep;
            }
        }
    }
    best.grid = grid;
    Ok(best)
}
