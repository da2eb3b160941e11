//! State distributions, Gram matrices and discrete monotone matrix paths.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, GramViolation, Result};
use crate::linalg::{self, Mat};

pub const SUM_TOL: f64 = 1e-12;
pub const SYM_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;
pub const NONNEG_TOL: f64 = 1e-12;
pub const CONSTRAINT_TOL: f64 = 1e-10;

/// A point of the probability simplex: proportions of sites in each state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistJson", into = "DistJson")]
pub struct StateDistribution {
    d: Vec<f64>,
    n: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct DistJson {
    kappa: usize,
    d: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
}

impl TryFrom<DistJson> for StateDistribution {
    type Error = Error;
    fn try_from(j: DistJson) -> Result<Self> {
        if j.kappa != j.d.len() {
            return Err(Error::Dimension(format!(
                "kappa = {} but d has {} entries",
                j.kappa,
                j.d.len()
            )));
        }
        let s = StateDistribution::new(j.d)?;
        match j.n {
            Some(n) => s.with_size(n),
            None => Ok(s),
        }
    }
}

impl From<StateDistribution> for DistJson {
    fn from(s: StateDistribution) -> Self {
        DistJson {
            kappa: s.d.len(),
            d: s.d,
            n: s.n,
        }
    }
}

impl StateDistribution {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::Malformed("distribution needs at least one state".into()));
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Malformed(format!(
                "proportions must be finite and nonnegative: {d:?}"
            )));
        }
        let total: f64 = d.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::Malformed(format!("proportions sum to {total}, not 1")));
        }
        Ok(Self { d, n: None })
    }

    pub fn uniform(kappa: usize) -> Self {
        Self {
            d: vec![1.0 / kappa as f64; kappa],
            n: None,
        }
    }

    /// The distribution with the given integer state counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::Malformed("counts sum to zero".into()));
        }
        Ok(Self {
            d: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            n: Some(n),
        })
    }

    /// Tags the distribution as representable with `n` sites.
    pub fn with_size(self, n: usize) -> Result<Self> {
        let counts = counts_for(&self.d, n).ok_or_else(|| {
            Error::Infeasible(format!("{:?} is not representable with N = {n}", self.d))
        })?;
        Self::from_counts(&counts)
    }

    pub fn kappa(&self) -> usize {
        self.d.len()
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn size(&self) -> Option<usize> {
        self.n
    }

    /// State counts `N·d_k` when the distribution is `n`-representable.
    pub fn counts(&self, n: usize) -> Option<Vec<usize>> {
        counts_for(&self.d, n)
    }

    pub fn diag(&self) -> Mat {
        Mat::from_diagonal(&linalg::Vect::from_column_slice(&self.d))
    }

    pub fn sum_sq(&self) -> f64 {
        self.d.iter().map(|v| v * v).sum()
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.kappa() == other.kappa()
            && self.d.iter().zip(&other.d).all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            d: perm.iter().map(|&i| self.d[i]).collect(),
            n: self.n,
        }
    }
}

fn counts_for(d: &[f64], n: usize) -> Option<Vec<usize>> {
    let mut counts = Vec::with_capacity(d.len());
    for &v in d {
        let c = (v * n as f64).round();
        if (c - v * n as f64).abs() > 1e-9 {
            return None;
        }
        counts.push(c as usize);
    }
    (counts.iter().sum::<usize>() == n).then_some(counts)
}

/// Largest-remainder rounding of `d` onto the grid `{c/N}`.
///
/// States with `d_k = 0` stay at zero and remainder ties go to the lowest index,
/// so `max_k |d^N_k − d_k| < 1/N`.
pub fn round_distribution(d: &StateDistribution, n: usize) -> Result<StateDistribution> {
    if n == 0 {
        return Err(Error::Malformed("N must be at least 1".into()));
    }
    let scaled: Vec<f64> = d.d.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..scaled.len()).filter(|&k| d.d[k] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    StateDistribution::from_counts(&counts)
}

/// Uniform draw from the simplex.
pub fn random_distribution<R: Rng + ?Sized>(kappa: usize, rng: &mut R) -> StateDistribution {
    let e: Vec<f64> = (0..kappa).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    let mut d: Vec<f64> = e.iter().map(|v| v / s).collect();
    let head: f64 = d[..kappa - 1].iter().sum();
    d[kappa - 1] = (1.0 - head).max(0.0);
    StateDistribution { d, n: None }
}

/// Which optional memberships to check in [`validate_gram`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GramFlags<'a> {
    /// Require nonnegative entries.
    pub nonnegative: bool,
    /// Require the row and column sums fixed by the state proportions.
    pub constraint: Option<&'a StateDistribution>,
}

/// A validated symmetric positive-semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    m: Mat,
    nonnegative: bool,
    constrained: bool,
}

impl GramMatrix {
    pub fn matrix(&self) -> &Mat {
        &self.m
    }

    pub fn into_matrix(self) -> Mat {
        self.m
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    pub fn is_constrained(&self) -> bool {
        self.constrained
    }
}

/// Checks symmetry, positive semidefiniteness and the optional flags, in that
/// order, and reports the first failure.
pub fn validate_gram(m: &Mat, flags: GramFlags<'_>) -> Result<GramMatrix> {
    let k = m.nrows();
    if m.ncols() != k {
        return Err(Error::Malformed(format!(
            "Gram matrix must be square, got {}x{}",
            k,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Malformed("Gram matrix has non-finite entries".into()));
    }
    for i in 0..k {
        for j in i + 1..k {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > SYM_TOL {
                return Err(Error::Gram(GramViolation::Asymmetric { row: i, col: j, gap }));
            }
        }
    }
    let sym = linalg::symmetrize(m);
    let eigenvalue = linalg::min_eigenvalue(&sym);
    if eigenvalue < -PSD_TOL {
        return Err(Error::Gram(GramViolation::NegativeEigenvalue { eigenvalue }));
    }
    if flags.nonnegative {
        for i in 0..k {
            for j in 0..k {
                if sym[(i, j)] < -NONNEG_TOL {
                    return Err(Error::Gram(GramViolation::NegativeEntry {
                        row: i,
                        col: j,
                        value: sym[(i, j)],
                    }));
                }
            }
        }
    }
    if let Some(d) = flags.constraint {
        if d.kappa() != k {
            return Err(Error::Dimension(format!(
                "constraint has kappa = {}, matrix is {k}x{k}",
                d.kappa()
            )));
        }
        for i in 0..k {
            let lhs: f64 = sym.row(i).sum();
            if (lhs - d.d[i]).abs() > CONSTRAINT_TOL {
                return Err(Error::Gram(GramViolation::ConstraintMismatch {
                    row: i,
                    lhs,
                    rhs: d.d[i],
                }));
            }
        }
    }
    Ok(GramMatrix {
        m: sym,
        nonnegative: flags.nonnegative,
        constrained: flags.constraint.is_some(),
    })
}

/// Completes a `(κ−1)×(κ−1)` principal block to the unique matrix whose rows
/// sum to `d`, then validates it.
pub fn lift_reduced(d: &StateDistribution, reduced: &Mat) -> Result<GramMatrix> {
    let k = d.kappa();
    if reduced.nrows() + 1 != k || reduced.ncols() + 1 != k {
        return Err(Error::Dimension(format!(
            "reduced block is {}x{}, expected {}x{}",
            reduced.nrows(),
            reduced.ncols(),
            k - 1,
            k - 1
        )));
    }
    let mut m = Mat::zeros(k, k);
    m.view_mut((0, 0), (k - 1, k - 1)).copy_from(reduced);
    let mut corner = d.d[k - 1];
    for i in 0..k - 1 {
        let edge = d.d[i] - reduced.row(i).sum();
        m[(i, k - 1)] = edge;
        m[(k - 1, i)] = edge;
        corner -= d.d[i];
    }
    m[(k - 1, k - 1)] = corner + reduced.sum();
    validate_gram(
        &m,
        GramFlags {
            nonnegative: false,
            constraint: Some(d),
        },
    )
    .map_err(|e| match e {
        Error::Gram(v) => Error::LiftInfeasible(v),
        other => other,
    })
}

/// Lagrange multipliers for the first `κ−1` state-size constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LagrangeMultipliers {
    lambda: Vec<f64>,
}

impl LagrangeMultipliers {
    pub fn new(kappa: usize, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() + 1 != kappa {
            return Err(Error::Dimension(format!(
                "kappa = {kappa} needs {} multipliers, got {}",
                kappa.saturating_sub(1),
                lambda.len()
            )));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed("multipliers must be finite".into()));
        }
        Ok(Self { lambda })
    }

    pub fn zeros(kappa: usize) -> Self {
        Self {
            lambda: vec![0.0; kappa.saturating_sub(1)],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    /// The shift `λ_k 1{k ≤ κ−1}` added to state `k`.
    pub fn shift(&self, k: usize) -> f64 {
        self.lambda.get(k).copied().unwrap_or(0.0)
    }

    pub fn dot(&self, d: &StateDistribution) -> f64 {
        self.lambda.iter().zip(d.d()).map(|(l, v)| l * v).sum()
    }
}

/// A discrete monotone path `π(x) = γ_p` on `(x_{p−1}, x_p]`, `x_{−1} = 0`.
///
/// `x` holds `x_0..=x_r` with `x_r = 1`, and `gammas` holds `γ_0..=γ_r` with
/// `γ_0 = 0` and `γ_r = diag(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathJson", into = "PathJson")]
pub struct MonotonePath {
    d: StateDistribution,
    x: Vec<f64>,
    gammas: Vec<Mat>,
}

#[derive(Serialize, Deserialize)]
struct PathJson {
    kappa: usize,
    d: Vec<f64>,
    x: Vec<f64>,
    gammas: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<PathJson> for MonotonePath {
    type Error = Error;
    fn try_from(j: PathJson) -> Result<Self> {
        if j.kappa != j.d.len() {
            return Err(Error::Dimension(format!(
                "kappa = {} but d has {} entries",
                j.kappa,
                j.d.len()
            )));
        }
        let d = StateDistribution::new(j.d)?;
        let gammas = j
            .gammas
            .iter()
            .map(|g| linalg::from_rows(g).ok_or_else(|| Error::Malformed("ragged matrix".into())))
            .collect::<Result<Vec<_>>>()?;
        MonotonePath::new(d, j.x, gammas)
    }
}

impl From<MonotonePath> for PathJson {
    fn from(p: MonotonePath) -> Self {
        PathJson {
            kappa: p.kappa(),
            d: p.d.d.clone(),
            x: p.x.clone(),
            gammas: p.gammas.iter().map(linalg::to_rows).collect(),
        }
    }
}

impl MonotonePath {
    pub fn new(d: StateDistribution, x: Vec<f64>, gammas: Vec<Mat>) -> Result<Self> {
        let k = d.kappa();
        if x.is_empty() || x.len() != gammas.len() {
            return Err(Error::InvalidPath(format!(
                "need r+1 >= 1 levels for both x and gammas, got {} and {}",
                x.len(),
                gammas.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("x must be finite".into()));
        }
        if x[0] < 0.0 || *x.last().unwrap() != 1.0 {
            return Err(Error::InvalidPath(format!(
                "x must start at or above 0 and end exactly at 1: {x:?}"
            )));
        }
        if x.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidPath(format!("x must be nondecreasing: {x:?}")));
        }
        if gammas.iter().any(|g| g.nrows() != k || g.ncols() != k) {
            return Err(Error::Dimension(format!("every gamma must be {k}x{k}")));
        }
        let mut gammas = gammas;
        if gammas[0].iter().any(|v| v.abs() > SUM_TOL) {
            return Err(Error::InvalidPath("gamma_0 must be the zero matrix".into()));
        }
        gammas[0] = Mat::zeros(k, k);
        let last = gammas.len() - 1;
        if (&gammas[last] - d.diag()).abs().max() > SUM_TOL {
            return Err(Error::InvalidPath("gamma_r must equal diag(d)".into()));
        }
        gammas[last] = d.diag();
        for (p, g) in gammas.iter_mut().enumerate() {
            *g = validate_gram(g, GramFlags::default())
                .map_err(|e| Error::InvalidPath(format!("gamma_{p}: {e}")))?
                .into_matrix();
        }
        for p in 1..gammas.len() {
            let inc = &gammas[p] - &gammas[p - 1];
            let ev = linalg::min_eigenvalue(&inc);
            if ev < -PSD_TOL {
                return Err(Error::InvalidPath(format!(
                    "gamma_{p} - gamma_{} has eigenvalue {ev:e}",
                    p - 1
                )));
            }
        }
        Ok(Self { d, x, gammas })
    }

    /// The one-level path `0` on `(0, x_0]`, `diag(d)` on `(x_0, 1]`.
    pub fn one_step(d: StateDistribution, x0: f64) -> Result<Self> {
        let k = d.kappa();
        let top = d.diag();
        Self::new(d, vec![x0, 1.0], vec![Mat::zeros(k, k), top])
    }

    pub fn kappa(&self) -> usize {
        self.d.kappa()
    }

    pub fn d(&self) -> &StateDistribution {
        &self.d
    }

    /// Number of levels `r`.
    pub fn r(&self) -> usize {
        self.x.len() - 1
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn gammas(&self) -> &[Mat] {
        &self.gammas
    }

    /// `x_p`, with `x_{−1} = 0` reachable as `x_before(0)`.
    pub fn x_before(&self, p: usize) -> f64 {
        if p == 0 {
            0.0
        } else {
            self.x[p - 1]
        }
    }

    /// Level index whose cell contains `t`; `t ≤ 0` maps to level 0.
    pub fn level_at(&self, t: f64) -> usize {
        self.x.partition_point(|&xp| xp < t).min(self.r())
    }

    /// `∫₀¹ ‖π(x)‖²_HS dx`.
    pub fn hs_integral(&self) -> f64 {
        (0..=self.r())
            .map(|p| (self.x[p] - self.x_before(p)) * linalg::hs_norm_sq(&self.gammas[p]))
            .sum()
    }

    /// Same path with its state labels permuted: new state `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.kappa();
        let gammas = self
            .gammas
            .iter()
            .map(|g| Mat::from_fn(k, k, |i, j| g[(perm[i], perm[j])]))
            .collect();
        Self {
            d: self.d.permuted(perm),
            x: self.x.clone(),
            gammas,
        }
    }
}

/// Anything that can be evaluated as a monotone path on `[0, 1]`.
pub trait PathFunction {
    fn kappa(&self) -> usize;
    fn endpoint(&self) -> &StateDistribution;
    fn value_at(&self, t: f64) -> Mat;
}

impl PathFunction for MonotonePath {
    fn kappa(&self) -> usize {
        self.d.kappa()
    }
    fn endpoint(&self) -> &StateDistribution {
        &self.d
    }
    fn value_at(&self, t: f64) -> Mat {
        self.gammas[self.level_at(t)].clone()
    }
}

/// A path given by a closure, for example a continuous one.
pub struct DensePath<F> {
    d: StateDistribution,
    f: F,
}

impl<F: Fn(f64) -> Mat> DensePath<F> {
    pub fn new(d: StateDistribution, f: F) -> Self {
        Self { d, f }
    }
}

impl<F: Fn(f64) -> Mat> PathFunction for DensePath<F> {
    fn kappa(&self) -> usize {
        self.d.kappa()
    }
    fn endpoint(&self) -> &StateDistribution {
        &self.d
    }
    fn value_at(&self, t: f64) -> Mat {
        (self.f)(t)
    }
}

/// `Δ(a, b) = ∫₀¹ ‖a(x) − b(x)‖₁ dx`, exact over the merged breakpoints.
pub fn path_delta(a: &MonotonePath, b: &MonotonePath) -> Result<f64> {
    if a.kappa() != b.kappa() {
        return Err(Error::Dimension(format!(
            "paths have kappa {} and {}",
            a.kappa(),
            b.kappa()
        )));
    }
    if !a.d.approx_eq(&b.d, CONSTRAINT_TOL) {
        return Err(Error::Dimension("paths end at different diag(d)".into()));
    }
    let mut cuts: Vec<f64> = a.x.iter().chain(&b.x).copied().collect();
    cuts.push(0.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let ga = &a.gammas[a.level_at(hi)];
        let gb = &b.gammas[b.level_at(hi)];
        total += (hi - lo) * linalg::l1_norm(&(ga - gb));
    }
    Ok(total)
}

/// Step approximation taking the value `p(anchor_c)` on grid cell `c`.
///
/// `grid` lists the interior breakpoints `0 < g_0 < … < g_{m−1} < 1`; the cells are
/// `(0, g_0], …, (g_{m−1}, 1]` and `anchors` has one entry per cell. A zero level
/// is prepended and a `diag(d)` level appended when needed.
pub fn discretize_path<P: PathFunction + ?Sized>(
    p: &P,
    grid: &[f64],
    anchors: &[f64],
) -> Result<MonotonePath> {
    if grid.iter().any(|&g| !(g > 0.0 && g < 1.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidPath(
            "grid must be strictly increasing inside (0, 1)".into(),
        ));
    }
    if anchors.len() != grid.len() + 1 {
        return Err(Error::Dimension(format!(
            "{} cells need {} anchors, got {}",
            grid.len() + 1,
            grid.len() + 1,
            anchors.len()
        )));
    }
    let k = p.kappa();
    let mut x = Vec::with_capacity(grid.len() + 3);
    let mut gammas = Vec::with_capacity(grid.len() + 3);
    for (c, &a) in anchors.iter().enumerate() {
        let lo = if c == 0 { 0.0 } else { grid[c - 1] };
        let hi = if c == grid.len() { 1.0 } else { grid[c] };
        if !(a >= lo && a <= hi) {
            return Err(Error::InvalidPath(format!(
                "anchor {a} lies outside cell [{lo}, {hi}]"
            )));
        }
        let v = linalg::symmetrize(&p.value_at(a));
        if c == 0 && v.iter().any(|e| e.abs() > SUM_TOL) {
            x.push(0.0);
            gammas.push(Mat::zeros(k, k));
        }
        x.push(hi);
        gammas.push(v);
    }
    let top = p.endpoint().diag();
    if (gammas.last().unwrap() - &top).abs().max() > SUM_TOL {
        x.push(1.0);
        gammas.push(top);
    }
    MonotonePath::new(p.endpoint().clone(), x, gammas)
}

/// Upper bound `κ Σ_c |cell_c| · (tr p(right_c) − tr p(left_c))` on the
/// distance between `p` and any step discretization on `grid`.
pub fn discretization_bound<P: PathFunction + ?Sized>(p: &P, grid: &[f64]) -> f64 {
    let mut edges = vec![0.0];
    edges.extend_from_slice(grid);
    edges.push(1.0);
    let k = p.kappa() as f64;
    edges
        .windows(2)
        .map(|w| {
            let osc = p.value_at(w[1]).trace() - p.value_at(w[0]).trace();
            (w[1] - w[0]) * osc.abs()
        })
        .sum::<f64>()
        * k
}

/// A random path with `r` levels, strictly increasing `x_0 < … < x_{r−1}` in
/// `(0, 1)`, and independent random PSD increments.
///
/// Built as `γ_p = D^{1/2} A_p D^{1/2}` with `0 ≤ A_1 ≤ … ≤ A_r = I`.
pub fn random_path<R: Rng + ?Sized>(
    d: &StateDistribution,
    r: usize,
    rng: &mut R,
) -> Result<MonotonePath> {
    let k = d.kappa();
    let mut x: Vec<f64> = (0..r).map(|_| rng.random_range(0.02..0.98)).collect();
    x.sort_by(f64::total_cmp);
    x.push(1.0);
    let increments: Vec<Mat> = (0..r)
        .map(|_| {
            let g = Mat::from_fn(k, k, |_, _| StandardNormal.sample(rng));
            &g * g.transpose()
        })
        .collect();
    let total: Mat = increments.iter().fold(Mat::zeros(k, k), |acc, m| acc + m);
    let (vals, vecs) = linalg::sym_eigen(&total);
    let inv_sqrt = &vecs
        * Mat::from_diagonal(&vals.map(|v| if v > 1e-12 { v.powf(-0.5) } else { 0.0 }))
        * vecs.transpose();
    let half = Mat::from_diagonal(&linalg::Vect::from_iterator(k, d.d().iter().map(|v| v.sqrt())));
    let mut acc = Mat::zeros(k, k);
    let mut gammas = vec![Mat::zeros(k, k)];
    for (p, w) in increments.iter().enumerate() {
        acc += &inv_sqrt * w * &inv_sqrt;
        if p + 1 == r {
            gammas.push(d.diag());
        } else {
            gammas.push(linalg::symmetrize(&(&half * &acc * &half)));
        }
    }
    MonotonePath::new(d.clone(), x, gammas)
}
