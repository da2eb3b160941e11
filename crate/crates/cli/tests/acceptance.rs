//! End-to-end acceptance checks, one line per criterion.
//!
//! Every run executes on a 1-thread and an 8-thread pool; the JSON of the two
//! runs must match byte for byte.

use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};

use potts_cli::{bound_check, BoundCheckArgs};
use potts_core::cascade::{
    coincidence_targets, estimate_coincidence, verify_y_identity, CascadeSpec, McParams,
};
use potts_core::diagnostics::{
    cascade_arrays, gg_residual, interpolation_curve, legendre_gap, sync_fit_blocks, Bootstrap, Replicas,
};
use potts_core::functional::{eval_parisi, eval_phi, eval_phi_cascade_mc};
use potts_core::linalg::{self, Mat};
use potts_core::model::{ass_covariance_check, enumerate_free_energy, Constraint, PerturbationSpec};
use potts_core::optimize::{inner_minimize, OptimizerConfig};
use potts_core::paths::{
    path_delta, random_distribution, random_path, LagrangeMultipliers, MonotonePath, StateDistribution,
};
use potts_core::quadrature::QuadratureSpec;
use potts_core::rng;

const SEED: u64 = 20240917;

struct Outcome {
    pass: bool,
    detail: String,
    json: Value,
}

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    elapsed: Duration,
    limit: Duration,
    detail: String,
    deterministic: bool,
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn run(
    id: usize,
    name: &'static str,
    limit_secs: u64,
    f: impl Fn() -> Outcome + Send + Sync,
) -> Line {
    let start = Instant::now();
    let first = pool(1).install(&f);
    let elapsed = start.elapsed();
    let second = pool(8).install(&f);
    let a = serde_json::to_vec(&first.json).unwrap();
    let b = serde_json::to_vec(&second.json).unwrap();
    let limit = Duration::from_secs(limit_secs);
    let line = Line {
        id,
        name,
        pass: first.pass && elapsed <= limit,
        elapsed,
        limit,
        detail: first.detail,
        deterministic: a == b,
    };
    print_line(&line);
    line
}

fn print_line(l: &Line) {
    println!(
        "criterion {:>2} {} {}: {} [{:.1}s of {}s]",
        l.id,
        if l.pass { "PASS" } else { "FAIL" },
        l.name,
        l.detail,
        l.elapsed.as_secs_f64(),
        l.limit.as_secs()
    );
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap()
}

fn uniform_r1(d: &StateDistribution) -> MonotonePath {
    MonotonePath::one_step(d.clone(), 0.5).unwrap()
}

fn random_case(kappa: usize, r: usize, label: &str, i: u64) -> MonotonePath {
    let mut g = rng::stream(SEED, label, i);
    let d = random_distribution(kappa, &mut g);
    random_path(&d, r, &mut g).unwrap()
}

fn mc(reps: usize, atoms: usize, label: &str, i: u64) -> McParams {
    McParams {
        reps,
        atoms,
        seed: rng::derive_seed(SEED, label, i),
        ..McParams::default()
    }
}

fn beta_zero() -> Outcome {
    let q = QuadratureSpec::default();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    let mut zero_var = true;
    for kappa in 1..=4 {
        let d = StateDistribution::uniform(kappa);
        let path = uniform_r1(&d);
        let v = eval_parisi(&LagrangeMultipliers::zeros(kappa), &d, &path, 0.0, &q).unwrap().value;
        worst = worst.max((v - (kappa as f64).ln()).abs());
        let fe = enumerate_free_energy(4, kappa, 0.0, 10, SEED, &Constraint::None).unwrap();
        worst = worst.max((fe.estimate - (kappa as f64).ln()).abs());
        zero_var &= fe.se == 0.0;
        rows.push(json!({"kappa": kappa, "parisi": v, "enumerate": fe.estimate, "se": fe.se}));
    }
    Outcome {
        pass: worst <= 1e-9 && zero_var,
        detail: format!("max |value - log kappa| = {worst:.2e}, zero variance = {zero_var}"),
        json: Value::Array(rows),
    }
}

fn kappa_one() -> Outcome {
    let q = QuadratureSpec::default();
    let d = StateDistribution::uniform(1);
    let lam = LagrangeMultipliers::zeros(1);
    let mut worst: f64 = 0.0;
    for i in 1..=9 {
        let x0 = i as f64 / 10.0;
        let path = MonotonePath::one_step(d.clone(), x0).unwrap();
        for beta in [0.5, 1.0, 2.0] {
            let phi = eval_phi(&lam, &path, beta, &q).unwrap().value;
            let p = eval_parisi(&lam, &d, &path, beta, &q).unwrap().value;
            worst = worst.max((phi - x0 * beta * beta).abs());
            worst = worst.max((p - x0 * beta * beta / 2.0).abs());
        }
    }
    let opt = inner_minimize(&d, 1, 1.0, &OptimizerConfig::default(), SEED).unwrap();
    Outcome {
        pass: worst <= 1e-8 && opt.value < 1e-3,
        detail: format!("max closed-form error {worst:.2e}, optimizer value {:.2e}", opt.value),
        json: json!({"worst": worst, "optimizer": to_json(&opt)}),
    }
}

fn bounds(n: usize, kappa: usize, beta: f64, r: usize) -> potts_cli::BoundReport {
    let args = BoundCheckArgs {
        n: Some(n),
        kappa: Some(kappa),
        beta: Some(beta),
        samples: Some(200),
        r: Some(r),
        m: Some(8),
        ..Default::default()
    };
    bound_check(&args, SEED).unwrap()
}

const SANDWICH: [(usize, usize, f64, usize); 3] = [(10, 2, 0.5, 2), (10, 2, 1.0, 2), (7, 3, 1.0, 1)];

fn upper_sandwich(reports: &[potts_cli::BoundReport]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for b in reports {
        let ok = b.middle <= b.upper + b.correction + 3.0 * b.middle_se;
        pass &= ok;
        parts.push(format!(
            "(k={}, N={}, b={}) F_N {:.4}±{:.4} vs upper {:.4}+{:.3}",
            b.kappa, b.n, b.beta, b.middle, b.middle_se, b.upper, b.correction
        ));
    }
    Outcome { pass, detail: parts.join("; "), json: to_json(&reports) }
}

fn lower_consistency(reports: &[potts_cli::BoundReport]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for b in reports {
        let vs_upper = b.lower <= b.upper + 3.0 * b.lower_se;
        let vs_middle = b.lower <= b.middle + b.correction + 3.0 * b.lower_se.hypot(b.middle_se);
        pass &= vs_upper && vs_middle;
        parts.push(format!(
            "(k={}, N={}, b={}) lower {:.4}±{:.4} vs upper {:.4}, F_N {:.4}",
            b.kappa, b.n, b.beta, b.lower, b.lower_se, b.upper, b.middle
        ));
    }
    Outcome { pass, detail: parts.join("; "), json: to_json(&reports) }
}

fn y_identity() -> Outcome {
    let mut pass = true;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..5u64 {
        let kappa = 2 + (i as usize % 2);
        let r = 1 + (i as usize / 2) % 2;
        let path = random_case(kappa, r, "y-path", i);
        let rep = verify_y_identity(&path, 1.0, 1, &mc(200, 200, "y-mc", i)).unwrap();
        pass &= rep.pass;
        let slack = 3.0 * rep.std_error + rep.truncation_allowance;
        worst = worst.max((rep.estimate - rep.closed_form).abs() / slack.max(1e-300));
        rows.push(to_json(&rep));
    }
    Outcome {
        pass,
        detail: format!("5 paths, worst |gap| / allowed = {worst:.3}"),
        json: Value::Array(rows),
    }
}

fn dual_phi() -> Outcome {
    let q = QuadratureSpec::default();
    let mut pass = true;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let path = random_case(2, 2, "phi-path", i);
        let mut g = rng::stream(SEED, "phi-lambda", i);
        let lambda = LagrangeMultipliers::new(2, vec![rand::Rng::random_range(&mut g, -1.0..1.0)]).unwrap();
        let exact = eval_phi(&lambda, &path, 1.0, &q).unwrap().value;
        let p = mc(200, 200, "phi-mc", i);
        let base = eval_phi_cascade_mc(&lambda, &path, 1.0, &p).unwrap();
        let doubled = eval_phi_cascade_mc(&lambda, &path, 1.0, &p.doubled()).unwrap();
        let allowed = 3.0 * base.std_error + (base.value - doubled.value).abs();
        let gap = (base.value - exact).abs();
        pass &= gap <= allowed;
        worst = worst.max(gap / allowed.max(1e-300));
        rows.push(json!({"quadrature": exact, "mc": base.value, "se": base.std_error, "doubled": doubled.value}));
    }
    Outcome {
        pass,
        detail: format!("10 inputs, worst |gap| / allowed = {worst:.3}"),
        json: Value::Array(rows),
    }
}

fn coincidence() -> Outcome {
    let path = random_case(2, 2, "coincidence-path", 0);
    let spec = CascadeSpec::for_path(&path, 200).unwrap();
    let est = estimate_coincidence(&spec, 10_000, SEED).unwrap();
    let target = coincidence_targets(&spec);
    let z: Vec<f64> = est
        .iter()
        .zip(&target)
        .map(|(e, t)| (e.value - t).abs() / e.std_error)
        .collect();
    let worst = z.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: worst <= 3.0,
        detail: format!("x = {:?}, max |z| = {worst:.2}", spec.xs()),
        json: json!({"estimates": to_json(&est), "targets": target}),
    }
}

fn gg() -> Outcome {
    let path = random_case(2, 2, "gg-path", 0);
    let arrays = cascade_arrays(&path, 20_000, 4, 200, rng::derive_seed(SEED, "gg-arrays", 0)).unwrap();
    let specs = [
        PerturbationSpec::new(1, vec![1], vec![vec![1.0, 0.0]]).unwrap(),
        PerturbationSpec::new(1, vec![2], vec![vec![1.0, 1.0]]).unwrap(),
        PerturbationSpec::new(2, vec![1], vec![vec![1.0, -1.0]]).unwrap(),
        PerturbationSpec::new(1, vec![1, 1], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        PerturbationSpec::new(3, vec![1, 2], vec![vec![0.5, 1.0], vec![-0.5, 1.0]]).unwrap(),
    ];
    let one = |_: &Replicas<'_>| 1.0;
    let poly = |r: &Replicas<'_>| r.trace(0, 1).powi(2);
    let fs: [(&str, &(dyn Fn(&Replicas<'_>) -> f64 + Sync)); 2] = [("one", &one), ("poly", &poly)];
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for (si, spec) in specs.iter().enumerate() {
        for (fname, f) in fs {
            for n in [2, 3] {
                let boot = Bootstrap { resamples: 200, seed: rng::derive_seed(SEED, "gg-boot", si as u64) };
                let res = gg_residual(&arrays, f, n, spec, &boot).unwrap();
                let z = res.residual.abs() / res.std_error.max(1e-300);
                pass &= res.residual.abs() <= 3.0 * res.std_error;
                worst = worst.max(z);
                rows.push(json!({"spec": si, "f": fname, "n": n, "residual": to_json(&res)}));
            }
        }
    }
    // Exchangeable replicas with f = 1 and n = 2.
    let trivial = gg_residual(&arrays, &one, 2, &specs[0], &Bootstrap::default()).unwrap();
    // Every off-diagonal block equal, so C is constant.
    let c = Mat::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.5]);
    let diag = Mat::from_row_slice(2, 2, &[0.4, 0.0, 0.0, 0.6]);
    let constant: Vec<_> = (0..50)
        .map(|_| {
            let blocks = (0..4)
                .map(|l| {
                    (0..4)
                        .map(|m| if l == m { diag.clone() } else { c.clone() })
                        .collect()
                })
                .collect();
            potts_core::cascade::OverlapArray::from_blocks(blocks).unwrap()
        })
        .collect();
    let mut exact_zero = trivial.residual == 0.0;
    for n in [2, 3] {
        for spec in &specs {
            exact_zero &= gg_residual(&constant, &poly, n, spec, &Bootstrap::default()).unwrap().residual == 0.0;
        }
    }
    Outcome {
        pass: pass && exact_zero,
        detail: format!("20 residuals, max |z| = {worst:.2}; trivial cases exactly zero = {exact_zero}"),
        json: json!({"rows": rows, "trivial": trivial.residual}),
    }
}

/// `φ(t) = (t/2) I + (t²/4) J`, `J` the swap matrix; `tr φ(t) = t` and
/// `‖φ′(t)‖₁ = 1 + t ≤ 2` on `[0, 1]`.
fn generator(t: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[t / 2.0, t * t / 4.0, t * t / 4.0, t / 2.0])
}

fn sync() -> Outcome {
    const LIPSCHITZ: f64 = 2.0;
    let mut g = rng::stream(SEED, "sync-traces", 0);
    let clean: Vec<(f64, Mat)> = (0..10_000)
        .map(|_| {
            let t: f64 = rand::Rng::random_range(&mut g, 0.0..1.0);
            (t, generator(t))
        })
        .collect();
    let fit = sync_fit_blocks(&clean, 20).unwrap();
    let error = (0..=1000)
        .map(|i| {
            let t = fit.grid[0] + (fit.grid[fit.grid.len() - 1] - fit.grid[0]) * i as f64 / 1000.0;
            linalg::l1_norm(&(fit.evaluate(t) - generator(t)))
        })
        .fold(0.0, f64::max);
    let bound = 2.0 * fit.bin_width * LIPSCHITZ;
    let a = Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]);
    let b = Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.5]);
    let broken: Vec<(f64, Mat)> = clean
        .iter()
        .enumerate()
        .map(|(i, blk)| match i % 10 {
            0 => (0.5, a.clone()),
            5 => (0.5, b.clone()),
            _ => blk.clone(),
        })
        .collect();
    let bad = sync_fit_blocks(&broken, 20).unwrap();
    let pass = error <= bound && bad.residual > 10.0 * fit.residual;
    Outcome {
        pass,
        detail: format!(
            "generator error {error:.2e} <= {bound:.2e}; violation residual {:.3} vs recovery {:.2e}",
            bad.residual, fit.residual
        ),
        json: json!({"fit": to_json(&fit), "violation": to_json(&bad), "error": error}),
    }
}

fn interpolation() -> Outcome {
    let d = StateDistribution::uniform(2);
    let path = random_path(&d, 1, &mut rng::stream(SEED, "interp-path", 0)).unwrap();
    let t: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
    let rep = interpolation_curve(4, &d, 1.0, &path, &t, &mc(2000, 100, "interp", 0)).unwrap();
    Outcome {
        pass: rep.monotone && rep.endpoint_pass,
        detail: format!(
            "max positive increment {:.2e}, endpoint gap {:.4} ± {:.4}",
            rep.max_positive_increment, rep.endpoint_gap, rep.endpoint_se
        ),
        json: to_json(&rep),
    }
}

fn legendre() -> Outcome {
    let d = StateDistribution::uniform(2);
    let q = QuadratureSpec::default();
    let grid: Vec<Vec<f64>> = (0..9).map(|i| vec![-1.0 + 0.25 * i as f64]).collect();
    let flat = legendre_gap(&d, &uniform_r1(&d), 0.0, &grid, &[4], &mc(50, 50, "legendre0", 0), &q).unwrap();
    let exact = 2f64.ln() - 6f64.ln() / 4.0;
    let err = (flat.rows[0].gap - exact).abs();
    let path = random_path(&d, 2, &mut rng::stream(SEED, "legendre-path", 0)).unwrap();
    let rep = legendre_gap(&d, &path, 1.0, &grid, &[2, 4, 8], &mc(200, 200, "legendre1", 0), &q).unwrap();
    let gaps: Vec<String> = rep.rows.iter().map(|r| format!("{:.4}±{:.4}", r.gap, r.gap_se)).collect();
    Outcome {
        pass: err <= 1e-12 && rep.nonnegative && rep.nonincreasing,
        detail: format!("beta=0 error {err:.1e}; beta=1 gaps M=2,4,8: {}", gaps.join(", ")),
        json: json!({"flat": to_json(&flat), "beta1": to_json(&rep)}),
    }
}

fn lipschitz() -> Outcome {
    let q = QuadratureSpec::default();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for i in 0..100u64 {
        let mut g = rng::stream(SEED, "lipschitz", i);
        let d = random_distribution(2, &mut g);
        let ra = rand::Rng::random_range(&mut g, 1..=3usize);
        let rb = rand::Rng::random_range(&mut g, 1..=3usize);
        let a = random_path(&d, ra, &mut g).unwrap();
        let b = random_path(&d, rb, &mut g).unwrap();
        let beta = [0.5, 1.0, 1.5][i as usize % 3];
        let lambda = LagrangeMultipliers::new(2, vec![rand::Rng::random_range(&mut g, -1.0..1.0)]).unwrap();
        let fa = eval_phi(&lambda, &a, beta, &q).unwrap().value;
        let fb = eval_phi(&lambda, &b, beta, &q).unwrap().value;
        let delta = path_delta(&a, &b).unwrap();
        let ratio = (fa - fb).abs() / (beta * beta * delta);
        worst = worst.max(ratio);
        rows.push(json!([fa, fb, delta]));
    }
    Outcome {
        pass: worst <= 1.0,
        detail: format!("100 pairs, max |dPhi| / (beta^2 Delta) = {worst:.3}"),
        json: Value::Array(rows),
    }
}

fn ass() -> Outcome {
    let rep = ass_covariance_check(4, 2, 2, 2, 10_000, SEED).unwrap();
    let worst = rep.checks.iter().map(|c| c.z).fold(0.0, f64::max);
    Outcome {
        pass: rep.pass,
        detail: format!("{} covariance checks, max |z| = {worst:.2}", rep.checks.len()),
        json: to_json(&rep),
    }
}

fn main() {
    let mut lines = vec![
        run(1, "beta = 0 exactness", 1, beta_zero),
        run(2, "kappa = 1 closed form", 10, kappa_one),
    ];
    let start = Instant::now();
    let reports: Vec<_> = pool(1).install(|| SANDWICH.iter().map(|&(n, k, b, r)| bounds(n, k, b, r)).collect());
    let sandwich_time = start.elapsed();
    let again: Vec<_> = pool(8).install(|| SANDWICH.iter().map(|&(n, k, b, r)| bounds(n, k, b, r)).collect());
    let same = serde_json::to_vec(&reports).unwrap() == serde_json::to_vec(&again).unwrap();
    for (id, name, limit, out) in [
        (3, "upper-bound sandwich", 600 * 3, upper_sandwich(&reports)),
        (4, "lower-bound consistency", 600 * 3, lower_consistency(&reports)),
    ] {
        let line = Line {
            id,
            name,
            pass: out.pass && sandwich_time <= Duration::from_secs(limit),
            elapsed: sandwich_time,
            limit: Duration::from_secs(limit),
            detail: out.detail,
            deterministic: same,
        };
        print_line(&line);
        lines.push(line);
    }
    lines.push(run(5, "cascade Y identity", 120, y_identity));
    lines.push(run(6, "dual-method Phi", 300, dual_phi));
    lines.push(run(7, "coincidence masses", 60, coincidence));
    lines.push(run(8, "Ghirlanda-Guerra identities", 120, gg));
    lines.push(run(9, "synchronization", 60, sync));
    lines.push(run(10, "interpolation monotonicity", 300, interpolation));
    lines.push(run(11, "Legendre gap", 300, legendre));
    lines.push(run(12, "Lipschitz continuity", 60, lipschitz));
    lines.push(run(13, "cavity covariances", 60, ass));

    let drifted: Vec<String> = lines.iter().filter(|l| !l.deterministic).map(|l| l.id.to_string()).collect();
    let det = drifted.is_empty();
    println!(
        "criterion 14 {} determinism: {}",
        if det { "PASS" } else { "FAIL" },
        if det {
            "all runs byte-identical at 1 and 8 threads".to_string()
        } else {
            format!("JSON differs between thread counts for criteria {}", drifted.join(", "))
        }
    );
    let failed: Vec<usize> = lines.iter().filter(|l| !l.pass).map(|l| l.id).chain((!det).then_some(14)).collect();
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
