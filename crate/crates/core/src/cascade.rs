//! Truncated Ruelle probability cascades and the overlap arrays they generate.
//!
//! A node at depth `p` splits its mass among its children with proportions
//! drawn from `PD(x_p, −x_{p−1})` by stick-breaking. Only the first `K`
//! sticks are kept. Under [`TailMode::MeanField`] the leftover mass ("dust")
//! stays attached to its node and stands for infinitely many vanishing
//! children: it never coincides with another draw and its fields are
//! integrated out in closed form by the evaluators.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::paths::MonotonePath;
use crate::rng;
use crate::stats::{self, Estimate, LogSumExp};

/// Largest number of leaves a fully materialized cascade may have.
pub const LEAF_BUDGET: u128 = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// Keep the untruncated remainder as dust.
    #[default]
    MeanField,
    /// Drop the remainder and renormalize the kept atoms.
    Renormalize,
}

/// Smallest separation [`CascadeSpec::for_path`] keeps between levels.
pub const X_EDGE: f64 = 1e-9;

/// Cascade parameters `0 < x_0 < … < x_{r−1} < 1` and truncation `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    x: Vec<f64>,
    atoms: usize,
    #[serde(default)]
    tail: TailMode,
}

impl CascadeSpec {
    pub fn new(x: Vec<f64>, atoms: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Malformed("a cascade needs at least one level".into()));
        }
        if x.iter().any(|&v| !(v > 0.0 && v < 1.0)) || x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Malformed(format!(
                "cascade parameters must be strictly increasing inside (0, 1): {x:?}"
            )));
        }
        if atoms < 2 {
            return Err(Error::Malformed("at least two atoms per node are required".into()));
        }
        Ok(Self {
            x,
            atoms,
            tail: TailMode::MeanField,
        })
    }

    /// The cascade matching the levels of `path` (its `x_0..x_{r−1}`).
    ///
    /// Levels at 0, at 1 or repeated are moved by multiples of [`X_EDGE`]
    /// so that they are strictly increasing inside `(0, 1)`.
    pub fn for_path(path: &MonotonePath, atoms: usize) -> Result<Self> {
        let r = path.r();
        let mut x: Vec<f64> = path.xs()[..r]
            .iter()
            .enumerate()
            .map(|(p, &v)| v.clamp((p + 1) as f64 * X_EDGE, 1.0 - (r - p) as f64 * X_EDGE))
            .collect();
        for p in 1..r {
            x[p] = x[p].max(x[p - 1] + X_EDGE);
        }
        Self::new(x, atoms)
    }

    pub fn with_tail(mut self, tail: TailMode) -> Self {
        self.tail = tail;
        self
    }

    pub fn with_atoms(&self, atoms: usize) -> Self {
        Self {
            atoms,
            ..self.clone()
        }
    }

    pub fn r(&self) -> usize {
        self.x.len()
    }

    pub fn xs(&self) -> &[f64] {
        &self.x
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn tail(&self) -> TailMode {
        self.tail
    }

    fn leaf_count(&self) -> u128 {
        (self.atoms as u128).saturating_pow(self.r() as u32)
    }
}

fn child_id(parent: u64, index: usize) -> u64 {
    rng::derive_seed(parent, "child", index as u64)
}

fn root_id(seed: u64) -> u64 {
    rng::derive_seed(seed, "cascade-root", 0)
}

/// Children proportions of a node at `depth`, sorted decreasingly, and the dust.
fn split(spec: &CascadeSpec, depth: usize, node: u64) -> (Vec<f64>, f64) {
    let a = spec.x[depth];
    let theta = if depth == 0 { 0.0 } else { -spec.x[depth - 1] };
    let mut g = rng::stream(node, "sticks", 0);
    let mut rest = 1.0;
    let mut w = Vec::with_capacity(spec.atoms);
    for i in 1..=spec.atoms {
        let v = Beta::new(1.0 - a, theta + i as f64 * a)
            .expect("valid beta parameters")
            .sample(&mut g);
        w.push(rest * v);
        rest *= 1.0 - v;
    }
    w.sort_by(|a, b| b.total_cmp(a));
    match spec.tail {
        TailMode::MeanField => (w, rest),
        TailMode::Renormalize => {
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            (w, 0.0)
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    local: Vec<f64>,
    mass: Vec<f64>,
    id: Vec<u64>,
}

/// A fully materialized truncated cascade.
///
/// Nodes at depth `p` are stored in breadth-first order, so the children of
/// node `j` at depth `p` are `j·K .. (j+1)·K` at depth `p+1`.
#[derive(Debug, Clone)]
pub struct CascadeSample {
    spec: CascadeSpec,
    levels: Vec<Level>,
    dust_mass: Vec<Vec<f64>>,
}

/// Draws a cascade; identical seeds give identical trees.
pub fn sample_cascade(spec: &CascadeSpec, seed: u64) -> Result<CascadeSample> {
    if spec.leaf_count() > LEAF_BUDGET {
        return Err(Error::Budget {
            what: "cascade leaves",
            required: spec.leaf_count(),
            limit: LEAF_BUDGET,
        });
    }
    let k = spec.atoms;
    let mut levels = vec![Level {
        local: vec![1.0],
        mass: vec![1.0],
        id: vec![root_id(seed)],
    }];
    let mut dust_mass = Vec::with_capacity(spec.r());
    for depth in 0..spec.r() {
        let parent = &levels[depth];
        let n = parent.id.len();
        let mut next = Level {
            local: Vec::with_capacity(n * k),
            mass: Vec::with_capacity(n * k),
            id: Vec::with_capacity(n * k),
        };
        let mut dm = Vec::with_capacity(n);
        for j in 0..n {
            let (w, rest) = split(spec, depth, parent.id[j]);
            for (c, v) in w.into_iter().enumerate() {
                next.local.push(v);
                next.mass.push(parent.mass[j] * v);
                next.id.push(child_id(parent.id[j], c));
            }
            dm.push(parent.mass[j] * rest);
        }
        dust_mass.push(dm);
        levels.push(next);
    }
    Ok(CascadeSample {
        spec: spec.clone(),
        levels,
        dust_mass,
    })
}

impl CascadeSample {
    pub fn spec(&self) -> &CascadeSpec {
        &self.spec
    }

    pub fn r(&self) -> usize {
        self.spec.r()
    }

    /// Leaf weights `v_α`, breadth-first order.
    pub fn leaf_weights(&self) -> &[f64] {
        &self.levels[self.r()].mass
    }

    /// Total mass of nodes at `depth` (`0..=r`).
    pub fn node_masses(&self, depth: usize) -> &[f64] {
        &self.levels[depth].mass
    }

    pub fn node_ids(&self, depth: usize) -> &[u64] {
        &self.levels[depth].id
    }

    /// Dust mass held at each node of `depth` (`0..r`).
    pub fn dust_masses(&self, depth: usize) -> &[f64] {
        &self.dust_mass[depth]
    }

    /// Leaves plus dust; equals 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.leaf_weights().iter().sum::<f64>()
            + self.dust_mass.iter().flatten().sum::<f64>()
    }

    /// `Σ_{α∧α′ = p} v_α v_α′` for `p = 0..=r`.
    pub fn coincidence_masses(&self) -> Vec<f64> {
        let r = self.r();
        let at_least: Vec<f64> = (0..=r)
            .map(|p| {
                if p == 0 {
                    let t = self.total_mass();
                    t * t
                } else {
                    self.levels[p].mass.iter().map(|w| w * w).sum()
                }
            })
            .collect();
        (0..=r)
            .map(|p| at_least[p] - at_least.get(p + 1).copied().unwrap_or(0.0))
            .collect()
    }

    /// Sums `exp` of a log-weighted functional over leaves and dust.
    ///
    /// `field` has `dim` entries per node; `incr(depth, id, buf)` adds the
    /// increment of a node at `depth ≥ 1` into `buf`. Leaves contribute
    /// `leaf(field)` and the dust of a depth-`q` node contributes
    /// `dust(q, field)`, both on log scale. Returns `log` of the total.
    pub fn log_sum<I, L, D>(&self, dim: usize, incr: I, leaf: L, dust: D) -> f64
    where
        I: Fn(usize, u64, &mut [f64]),
        L: Fn(&[f64]) -> f64,
        D: Fn(usize, &[f64]) -> f64,
    {
        self.log_sums(
            dim,
            1,
            incr,
            |f, out| out[0] = leaf(f),
            |q, f, out| out[0] = dust(q, f),
        )[0]
    }

    /// [`log_sum`](Self::log_sum) for `outputs` functionals sharing one walk.
    pub fn log_sums<I, L, D>(&self, dim: usize, outputs: usize, incr: I, leaf: L, dust: D) -> Vec<f64>
    where
        I: Fn(usize, u64, &mut [f64]),
        L: Fn(&[f64], &mut [f64]),
        D: Fn(usize, &[f64], &mut [f64]),
    {
        let r = self.r();
        let mut bufs = vec![vec![0.0; dim]; r + 1];
        let mut acc = vec![LogSumExp::default(); outputs];
        let mut out = vec![0.0; outputs];
        let mut w = Walker {
            incr: &incr,
            leaf: &leaf,
            dust: &dust,
            acc: &mut acc,
            out: &mut out,
        };
        self.walk(0, 0, &mut bufs, &mut w);
        acc.iter().map(LogSumExp::value).collect()
    }

    fn walk<I, L, D>(&self, depth: usize, j: usize, bufs: &mut [Vec<f64>], w: &mut Walker<'_, I, L, D>)
    where
        I: Fn(usize, u64, &mut [f64]),
        L: Fn(&[f64], &mut [f64]),
        D: Fn(usize, &[f64], &mut [f64]),
    {
        let r = self.r();
        if depth == r {
            let m = self.levels[r].mass[j];
            if m > 0.0 {
                (w.leaf)(&bufs[r], w.out);
                w.push(m.ln());
            }
            return;
        }
        let dm = self.dust_mass[depth][j];
        if dm > 0.0 {
            (w.dust)(depth, &bufs[depth], w.out);
            w.push(dm.ln());
        }
        let k = self.spec.atoms;
        for c in j * k..(j + 1) * k {
            let (head, tail) = bufs.split_at_mut(depth + 1);
            tail[0].copy_from_slice(&head[depth]);
            (w.incr)(depth + 1, self.levels[depth + 1].id[c], &mut tail[0]);
            self.walk(depth + 1, c, bufs, w);
        }
    }

    /// Draws a leaf (or a dust position) from the cascade weights.
    pub fn sample_leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> LeafPath {
        let k = self.spec.atoms;
        descend(self.r(), rng, |depth, node| {
            let lv = &self.levels[depth + 1];
            (lv.local[node * k..(node + 1) * k].to_vec(), node)
        })
    }
}

struct Walker<'a, I, L, D> {
    incr: &'a I,
    leaf: &'a L,
    dust: &'a D,
    acc: &'a mut [LogSumExp],
    out: &'a mut [f64],
}

impl<I, L, D> Walker<'_, I, L, D> {
    fn push(&mut self, log_mass: f64) {
        for (a, v) in self.acc.iter_mut().zip(self.out.iter()) {
            a.push(log_mass + v);
        }
    }
}

/// Where a sampled replica sits in the tree: the child indices it followed and
/// whether it reached a leaf or fell into the dust of its last node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafPath {
    pub indices: Vec<u32>,
    pub complete: bool,
}

impl LeafPath {
    /// `α ∧ α′` for two distinct draws.
    pub fn meet(&self, other: &LeafPath, r: usize) -> usize {
        let common = self
            .indices
            .iter()
            .zip(&other.indices)
            .take_while(|(a, b)| a == b)
            .count();
        if common == r && self.complete && other.complete {
            r
        } else {
            common.min(r)
        }
    }
}

fn descend<R, F>(r: usize, rng: &mut R, mut children: F) -> LeafPath
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize) -> (Vec<f64>, usize),
{
    let mut node = 0usize;
    let mut indices = Vec::with_capacity(r);
    for depth in 0..r {
        let (w, _) = children(depth, node);
        let u: f64 = rng.random();
        let total: f64 = w.iter().sum();
        let mut cum = 0.0;
        let mut pick = None;
        for (c, v) in w.iter().enumerate() {
            cum += v;
            if u < cum {
                pick = Some(c);
                break;
            }
        }
        let pick = match pick {
            Some(c) => c,
            None if total >= 1.0 - 1e-15 => w.len() - 1,
            None => {
                return LeafPath {
                    indices,
                    complete: false,
                }
            }
        };
        indices.push(pick as u32);
        node = node * w.len() + pick;
    }
    LeafPath {
        indices,
        complete: true,
    }
}

/// A cascade whose nodes are generated on first use.
///
/// Node randomness is keyed by node identity, so it draws exactly the same tree
/// as [`sample_cascade`] with the same seed.
pub struct LazyCascade {
    spec: CascadeSpec,
    root: u64,
    cache: HashMap<(usize, usize), (Vec<f64>, u64)>,
}

impl LazyCascade {
    pub fn new(spec: &CascadeSpec, seed: u64) -> Self {
        Self {
            spec: spec.clone(),
            root: root_id(seed),
            cache: HashMap::new(),
        }
    }

    fn node_id(&mut self, depth: usize, node: usize) -> u64 {
        if depth == 0 {
            return self.root;
        }
        let k = self.spec.atoms;
        let parent = node / k;
        let pid = self.node_id(depth - 1, parent);
        child_id(pid, node % k)
    }

    pub fn sample_leaf<R: Rng + ?Sized>(&mut self, rng: &mut R) -> LeafPath {
        let r = self.spec.r();
        descend(r, rng, |depth, node| {
            if let Some((w, _)) = self.cache.get(&(depth, node)) {
                return (w.clone(), node);
            }
            let id = self.node_id(depth, node);
            let (w, _) = split(&self.spec, depth, id);
            self.cache.insert((depth, node), (w.clone(), id));
            (w, node)
        })
    }
}

/// Replica overlap array: traces `T` and κ×κ blocks `Q = φ(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArrayJson", into = "ArrayJson")]
pub struct OverlapArray {
    pub n: usize,
    pub kappa: usize,
    pub traces: Vec<Vec<f64>>,
    pub blocks: Vec<Vec<Mat>>,
}

#[derive(Serialize, Deserialize)]
struct ArrayJson {
    n: usize,
    kappa: usize,
    traces: Vec<Vec<f64>>,
    blocks: Vec<Vec<Vec<Vec<f64>>>>,
}

impl TryFrom<ArrayJson> for OverlapArray {
    type Error = Error;
    fn try_from(j: ArrayJson) -> Result<Self> {
        let blocks = j
            .blocks
            .iter()
            .map(|row| {
                row.iter()
                    .map(|b| linalg::from_rows(b).ok_or_else(|| Error::Malformed("ragged block".into())))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let a = OverlapArray {
            n: j.n,
            kappa: j.kappa,
            traces: j.traces,
            blocks,
        };
        a.check()?;
        Ok(a)
    }
}

impl From<OverlapArray> for ArrayJson {
    fn from(a: OverlapArray) -> Self {
        ArrayJson {
            n: a.n,
            kappa: a.kappa,
            traces: a.traces,
            blocks: a
                .blocks
                .iter()
                .map(|row| row.iter().map(linalg::to_rows).collect())
                .collect(),
        }
    }
}

impl OverlapArray {
    /// Array of blocks; traces are taken from the blocks.
    pub fn from_blocks(blocks: Vec<Vec<Mat>>) -> Result<Self> {
        let n = blocks.len();
        let kappa = blocks.first().and_then(|r| r.first()).map_or(0, |b| b.nrows());
        let traces = blocks
            .iter()
            .map(|row| row.iter().map(|b| b.trace()).collect())
            .collect();
        let a = Self {
            n,
            kappa,
            traces,
            blocks,
        };
        a.check()?;
        Ok(a)
    }

    fn check(&self) -> Result<()> {
        let ok = self.traces.len() == self.n
            && self.blocks.len() == self.n
            && self.traces.iter().all(|r| r.len() == self.n)
            && self.blocks.iter().all(|r| {
                r.len() == self.n
                    && r.iter().all(|b| b.nrows() == self.kappa && b.ncols() == self.kappa)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("overlap array has inconsistent shape".into()))
        }
    }

    pub fn block(&self, l: usize, m: usize) -> &Mat {
        &self.blocks[l][m]
    }

    /// The same array with replicas reordered: new replica `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            n: self.n,
            kappa: self.kappa,
            traces: perm
                .iter()
                .map(|&a| perm.iter().map(|&b| self.traces[a][b]).collect())
                .collect(),
            blocks: perm
                .iter()
                .map(|&a| perm.iter().map(|&b| self.blocks[a][b].clone()).collect())
                .collect(),
        }
    }
}

fn check_grid(q: &[f64], r: usize) -> Result<()> {
    if q.len() != r + 1 || q[0] != 0.0 || q.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Malformed(format!(
            "q must be 0 = q_0 < … < q_r with r = {r}, got {q:?}"
        )));
    }
    Ok(())
}

fn build_array(
    leaves: &[LeafPath],
    r: usize,
    q: &[f64],
    phi: &dyn Fn(f64) -> Mat,
) -> OverlapArray {
    let n = leaves.len();
    let top = phi(q[r]);
    let kappa = top.nrows();
    let mut traces = vec![vec![q[r]; n]; n];
    let mut blocks = vec![vec![top.clone(); n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let t = q[leaves[a].meet(&leaves[b], r)];
            let m = phi(t);
            traces[a][b] = t;
            traces[b][a] = t;
            blocks[a][b] = m.clone();
            blocks[b][a] = m;
        }
    }
    OverlapArray {
        n,
        kappa,
        traces,
        blocks,
    }
}

/// `n` i.i.d. replicas drawn from the cascade weights, with trace array
/// `T_{ℓℓ′} = q_{α^ℓ ∧ α^ℓ′}` and blocks `φ(T_{ℓℓ′})`.
pub fn sample_overlap_array(
    c: &CascadeSample,
    q: &[f64],
    phi: &dyn Fn(f64) -> Mat,
    n: usize,
    seed: u64,
) -> Result<OverlapArray> {
    if n < 2 {
        return Err(Error::Malformed("an overlap array needs n >= 2".into()));
    }
    check_grid(q, c.r())?;
    let mut g = rng::stream(seed, "replicas", 0);
    let leaves: Vec<LeafPath> = (0..n).map(|_| c.sample_leaf(&mut g)).collect();
    Ok(build_array(&leaves, c.r(), q, phi))
}

/// Same as [`sample_overlap_array`] on a lazily generated cascade.
pub fn sample_overlap_array_lazy(
    spec: &CascadeSpec,
    cascade_seed: u64,
    q: &[f64],
    phi: &dyn Fn(f64) -> Mat,
    n: usize,
    seed: u64,
) -> Result<OverlapArray> {
    if n < 2 {
        return Err(Error::Malformed("an overlap array needs n >= 2".into()));
    }
    check_grid(q, spec.r())?;
    let mut lazy = LazyCascade::new(spec, cascade_seed);
    let mut g = rng::stream(seed, "replicas", 0);
    let leaves: Vec<LeafPath> = (0..n).map(|_| lazy.sample_leaf(&mut g)).collect();
    Ok(build_array(&leaves, spec.r(), q, phi))
}

/// Monte Carlo estimates of `E Σ_{α∧α′=p} v_α v_α′`, `p = 0..=r`.
pub fn estimate_coincidence(spec: &CascadeSpec, cascades: usize, seed: u64) -> Result<Vec<Estimate>> {
    let per: Vec<Vec<f64>> = (0..cascades)
        .into_par_iter()
        .map(|i| {
            sample_cascade(spec, rng::derive_seed(seed, "coincidence", i as u64))
                .map(|c| c.coincidence_masses())
        })
        .collect::<Result<_>>()?;
    Ok((0..=spec.r())
        .map(|p| {
            let col: Vec<f64> = per.iter().map(|v| v[p]).collect();
            stats::mean_se(&col)
        })
        .collect())
}

/// Expected coincidence masses `x_p − x_{p−1}` with `x_r = 1`.
pub fn coincidence_targets(spec: &CascadeSpec) -> Vec<f64> {
    let mut x = spec.x.clone();
    x.push(1.0);
    (0..x.len())
        .map(|p| x[p] - if p == 0 { 0.0 } else { x[p - 1] })
        .collect()
}

/// Monte Carlo settings shared by the cascade evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McParams {
    pub reps: usize,
    pub atoms: usize,
    pub seed: u64,
    pub tail: TailMode,
}

impl Default for McParams {
    fn default() -> Self {
        Self {
            reps: 200,
            atoms: 200,
            seed: 0,
            tail: TailMode::MeanField,
        }
    }
}

impl McParams {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::Malformed("at least two replicates are required".into()));
        }
        if self.atoms < 2 {
            return Err(Error::Malformed("at least two atoms per node are required".into()));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        Self {
            atoms: 2 * self.atoms,
            ..*self
        }
    }

    pub fn spec_for(&self, path: &MonotonePath) -> Result<CascadeSpec> {
        Ok(CascadeSpec::for_path(path, self.atoms)?.with_tail(self.tail))
    }
}

/// Outcome of the cascade identity for the `Y` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YIdentityReport {
    pub estimate: f64,
    pub std_error: f64,
    pub estimate_doubled: f64,
    pub std_error_doubled: f64,
    pub closed_form: f64,
    pub truncation_allowance: f64,
    pub discrepancy_se: f64,
    pub pass: bool,
}

/// `(β²/2) Σ_p x_p (‖γ_{p+1}‖² − ‖γ_p‖²)`.
pub fn y_closed_form(path: &MonotonePath, beta: f64) -> f64 {
    let h: Vec<f64> = path.gammas().iter().map(linalg::hs_norm_sq).collect();
    0.5 * beta * beta
        * (0..path.r())
            .map(|p| path.xs()[p] * (h[p + 1] - h[p]))
            .sum::<f64>()
}

fn y_estimate(path: &MonotonePath, beta: f64, scale_n: usize, mc: &McParams) -> Result<Estimate> {
    let spec = mc.spec_for(path)?;
    let h: Vec<f64> = path.gammas().iter().map(linalg::hs_norm_sq).collect();
    let r = path.r();
    let n = scale_n as f64;
    let amp = beta * n.sqrt();
    let sd: Vec<f64> = (0..=r)
        .map(|p| if p == 0 { 0.0 } else { (h[p] - h[p - 1]).max(0.0).sqrt() })
        .collect();
    let vals: Vec<f64> = (0..mc.reps)
        .into_par_iter()
        .map(|i| {
            let c = sample_cascade(&spec, rng::derive_seed(mc.seed, "y-identity", i as u64))?;
            let ls = c.log_sum(
                1,
                |depth, id, buf| {
                    let mut g = rng::stream(id, "y-field", 0);
                    let z: f64 = rand_distr::StandardNormal.sample(&mut g);
                    buf[0] += sd[depth] * z;
                },
                |f| amp * f[0],
                |q, f| amp * f[0] + 0.5 * beta * beta * n * (h[r] - h[q]),
            );
            Ok(ls / n)
        })
        .collect::<Result<_>>()?;
    Ok(stats::mean_se(&vals))
}

/// Checks `(1/N) E log Σ v_α exp(β√N Y^α)` against its closed form.
pub fn verify_y_identity(
    path: &MonotonePath,
    beta: f64,
    scale_n: usize,
    mc: &McParams,
) -> Result<YIdentityReport> {
    mc.validate()?;
    if scale_n == 0 {
        return Err(Error::Malformed("scale_N must be at least 1".into()));
    }
    let closed_form = y_closed_form(path, beta);
    let base = y_estimate(path, beta, scale_n, mc)?;
    let doubled = y_estimate(path, beta, scale_n, &mc.doubled())?;
    let allowance = (base.value - doubled.value).abs();
    let gap = (base.value - closed_form).abs();
    let discrepancy_se = if base.std_error > 0.0 {
        gap / base.std_error
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(YIdentityReport {
        estimate: base.value,
        std_error: base.std_error,
        estimate_doubled: doubled.value,
        std_error_doubled: doubled.std_error,
        closed_form,
        truncation_allowance: allowance,
        discrepancy_se,
        pass: gap <= 3.0 * base.std_error + allowance + 1e-12,
    })
}
