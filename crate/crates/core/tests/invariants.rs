use proptest::prelude::*;

use potts_core::cascade::{sample_cascade, sample_overlap_array, CascadeSpec, McParams};
use potts_core::diagnostics::{
    cascade_arrays, gg_residual, interpolation_curve, min_block_entry, path_generator, Bootstrap, Replicas,
};
use potts_core::functional::{eval_f1_restricted, eval_parisi, eval_phi, eval_phi_with_gradient, ConfigSet};
use potts_core::linalg::{self, Mat};
use potts_core::model::{
    enumerate_free_energy, enumerate_free_energy_grid, overlap, perturbation_covariance, Configuration, Constraint,
    PerturbationSpec,
};
use potts_core::optimize::{inner_minimize, OptimizerConfig};
use potts_core::paths::{
    lift_reduced, path_delta, random_distribution, random_path, LagrangeMultipliers, MonotonePath,
    StateDistribution,
};
use potts_core::quadrature::QuadratureSpec;
use potts_core::rng;

fn path_from(seed: u64, kappa: usize, r: usize) -> MonotonePath {
    let mut g = rng::stream(seed, "path", 0);
    let d = random_distribution(kappa, &mut g);
    random_path(&d, r, &mut g).unwrap()
}

fn paths_on(seed: u64, d: &StateDistribution, rs: &[usize]) -> Vec<MonotonePath> {
    let mut g = rng::stream(seed, "paths", 0);
    rs.iter().map(|&r| random_path(d, r, &mut g).unwrap()).collect()
}

fn lambda_from(seed: u64, kappa: usize) -> LagrangeMultipliers {
    let mut g = rng::stream(seed, "lambda", 0);
    let v = (1..kappa).map(|_| rand::Rng::random_range(&mut g, -1.0..1.0)).collect();
    LagrangeMultipliers::new(kappa, v).unwrap()
}

fn cheap() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

proptest! {
    #![proptest_config(cheap())]

    #[test]
    fn traces_increase_to_one(seed in any::<u64>(), kappa in 1usize..5, r in 1usize..5) {
        let path = path_from(seed, kappa, r);
        let tr: Vec<f64> = path.gammas().iter().map(|g| g.trace()).collect();
        for w in tr.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        prop_assert!((tr[r] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_norm_is_bounded_by_trace(entries in prop::collection::vec(-2.0f64..2.0, 16), kappa in 1usize..5) {
        let a = Mat::from_fn(kappa, kappa, |i, j| entries[i * 4 + j]);
        let g = &a * a.transpose();
        prop_assert!(linalg::l1_norm(&g) <= kappa as f64 * g.trace() + 1e-12);
    }

    #[test]
    fn delta_is_a_pseudometric(seed in any::<u64>(), kappa in 1usize..4) {
        let d = random_distribution(kappa, &mut rng::stream(seed, "d", 0));
        let p = paths_on(seed, &d, &[1, 2, 3]);
        let ab = path_delta(&p[0], &p[1]).unwrap();
        let ba = path_delta(&p[1], &p[0]).unwrap();
        let bc = path_delta(&p[1], &p[2]).unwrap();
        let ac = path_delta(&p[0], &p[2]).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(path_delta(&p[0], &p[0]).unwrap() == 0.0);
    }

    #[test]
    fn lift_inverts_the_principal_block(seed in any::<u64>(), kappa in 2usize..5, a in 0.0f64..1.0) {
        let d = random_distribution(kappa, &mut rng::stream(seed, "d", 0));
        let v = nalgebra::DVector::from_column_slice(d.d());
        let m = &v * v.transpose() * a + d.diag() * (1.0 - a);
        let block = m.view((0, 0), (kappa - 1, kappa - 1)).into_owned();
        let lifted = lift_reduced(&d, &block).unwrap();
        prop_assert!((lifted.matrix() - &m).abs().max() < 1e-12);
    }

    #[test]
    fn overlap_transposes(a in prop::collection::vec(0usize..3, 6), b in prop::collection::vec(0usize..3, 6)) {
        let ca = Configuration::new(a, 3).unwrap();
        let cb = Configuration::new(b, 3).unwrap();
        let ab = overlap(&ca, &cb, 3).unwrap();
        let ba = overlap(&cb, &ca, 3).unwrap();
        prop_assert_eq!(ab.transpose(), ba);
    }

    #[test]
    fn covariance_is_nonnegative_for_nonnegative_directions(
        a in prop::collection::vec(0usize..3, 5),
        b in prop::collection::vec(0usize..3, 5),
        lam in prop::collection::vec(0.0f64..1.0, 3),
        p in 1u32..4,
        n in 1u32..3,
    ) {
        let r = overlap(&Configuration::new(a, 3).unwrap(), &Configuration::new(b, 3).unwrap(), 3).unwrap();
        let spec = PerturbationSpec::new(p, vec![n], vec![lam]).unwrap();
        prop_assert!(perturbation_covariance(&spec, r.matrix()) >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phi_is_monotone_in_lambda(seed in any::<u64>(), kappa in 2usize..4, r in 1usize..3, beta in 0.0f64..2.0) {
        let path = path_from(seed, kappa, r);
        let lam = lambda_from(seed, kappa);
        let q = QuadratureSpec::default();
        let base = eval_phi(&lam, &path, beta, &q).unwrap().value;
        for k in 0..kappa - 1 {
            let mut v = lam.values().to_vec();
            v[k] += 0.1;
            let up = eval_phi(&LagrangeMultipliers::new(kappa, v).unwrap(), &path, beta, &q).unwrap().value;
            prop_assert!(up >= base - 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), beta in 0.0f64..2.0) {
        let path = path_from(seed, 2, 1);
        let lam = lambda_from(seed, 2);
        let q = QuadratureSpec::default();
        let (_, grad) = eval_phi_with_gradient(&lam, &path, beta, &q).unwrap();
        let h = 1e-4;
        let at = |s: f64| {
            let l = LagrangeMultipliers::new(2, vec![lam.values()[0] + s]).unwrap();
            eval_phi(&l, &path, beta, &q).unwrap().value
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        prop_assert!((fd - grad[0]).abs() < 1e-4, "fd {} vs {}", fd, grad[0]);
    }

    #[test]
    fn quadrature_has_converged(seed in any::<u64>(), kappa in 2usize..4, r in 1usize..3, beta in 0.0f64..2.0) {
        let path = path_from(seed, kappa, r);
        let lam = lambda_from(seed, kappa);
        let n = if kappa == 3 && r == 2 { 25 } else { 41 };
        let coarse = eval_phi(&lam, &path, beta, &QuadratureSpec::with_nodes(n)).unwrap().value;
        let fine = eval_phi(&lam, &path, beta, &QuadratureSpec::with_nodes(2 * n - 1)).unwrap().value;
        prop_assert!((coarse - fine).abs() < 1e-6, "{} vs {}", coarse, fine);
    }

    #[test]
    fn both_forms_of_the_functional_agree(seed in any::<u64>(), kappa in 1usize..4, r in 1usize..4, beta in 0.0f64..2.0) {
        let path = path_from(seed, kappa, r);
        let lam = lambda_from(seed, kappa);
        let res = eval_parisi(&lam, path.d(), &path, beta, &QuadratureSpec::default()).unwrap();
        prop_assert!((res.value - res.diagnostics["rearranged"]).abs() < 1e-10);
    }

    #[test]
    fn phi_is_lipschitz_in_the_path(seed in any::<u64>(), beta in 0.1f64..2.0) {
        let d = random_distribution(2, &mut rng::stream(seed, "d", 0));
        let p = paths_on(seed, &d, &[1, 3]);
        let lam = lambda_from(seed, 2);
        let q = QuadratureSpec::default();
        let a = eval_phi(&lam, &p[0], beta, &q).unwrap().value;
        let b = eval_phi(&lam, &p[1], beta, &q).unwrap().value;
        prop_assert!((a - b).abs() <= beta * beta * path_delta(&p[0], &p[1]).unwrap() + 1e-10);
    }

    #[test]
    fn free_energy_is_convex_in_beta(seed in any::<u64>(), kappa in 2usize..4) {
        let betas: Vec<f64> = (0..8).map(|i| 0.25 * i as f64).collect();
        let rows = enumerate_free_energy_grid(5, kappa, &betas, 5, seed, &Constraint::None).unwrap();
        for w in rows.windows(3) {
            prop_assert!(w[0].estimate - 2.0 * w[1].estimate + w[2].estimate >= -1e-12);
        }
    }

    #[test]
    fn unconstrained_is_below_best_constrained(seed in any::<u64>(), beta in 0.0f64..2.0) {
        let n = 6;
        let kappa = 2;
        let free = enumerate_free_energy(n, kappa, beta, 20, seed, &Constraint::None).unwrap();
        let best = (0..=n)
            .map(|c| {
                let d = StateDistribution::from_counts(&[c, n - c]).unwrap();
                enumerate_free_energy(n, kappa, beta, 20, seed, &Constraint::Exact { d }).unwrap().estimate
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let slack = kappa as f64 * ((n + 1) as f64).ln() / n as f64 + 3.0 * free.se;
        prop_assert!(free.estimate <= best + slack);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cascade_traces_are_ultrametric(seed in any::<u64>(), r in 1usize..4) {
        let path = path_from(seed, 2, r);
        let spec = CascadeSpec::for_path(&path, 50).unwrap();
        let c = sample_cascade(&spec, seed).unwrap();
        let (q, phi) = path_generator(&path).unwrap();
        let a = sample_overlap_array(&c, &q, &phi, 6, seed).unwrap();
        for i in 0..6 {
            for j in i + 1..6 {
                for k in j + 1..6 {
                    let mut t = [a.traces[i][j], a.traces[i][k], a.traces[j][k]];
                    t.sort_by(f64::total_cmp);
                    prop_assert_eq!(t[0], t[1]);
                }
            }
        }
    }

    #[test]
    fn cascade_traces_are_nonnegative(seed in any::<u64>(), kappa in 2usize..4, r in 1usize..3) {
        let path = path_from(seed, kappa, r);
        let arrays = cascade_arrays(&path, 20, 4, 50, seed).unwrap();
        let least = arrays.iter().flat_map(|a| a.traces.iter().flatten()).copied().fold(f64::INFINITY, f64::min);
        prop_assert!(least >= -1e-12);
    }

    #[test]
    fn cascade_blocks_are_nonnegative_on_nonnegative_paths(seed in any::<u64>(), kappa in 2usize..4, a in 0.0f64..1.0) {
        let d = random_distribution(kappa, &mut rng::stream(seed, "d", 0));
        let v = nalgebra::DVector::from_column_slice(d.d());
        let mid = &v * v.transpose() * a;
        let path = MonotonePath::new(d.clone(), vec![0.3, 0.7, 1.0], vec![nalgebra::DMatrix::zeros(kappa, kappa), mid, d.diag()]).unwrap();
        let arrays = cascade_arrays(&path, 20, 4, 50, seed).unwrap();
        prop_assert!(min_block_entry(&arrays) >= -1e-12);
    }

    #[test]
    fn gg_residual_ignores_replica_labels(seed in any::<u64>(), n in 2usize..4) {
        let path = path_from(seed, 2, 2);
        let arrays = cascade_arrays(&path, 200, n + 1, 50, seed).unwrap();
        let spec = PerturbationSpec::new(1, vec![1], vec![vec![1.0, 0.5]]).unwrap();
        let f = |r: &Replicas<'_>| r.trace(0, 1);
        let boot = Bootstrap::default();
        let base = gg_residual(&arrays, &f, n, &spec, &boot).unwrap();
        // Swap replicas 2 and n.
        let mut perm: Vec<usize> = (0..=n).collect();
        perm.swap(1, n - 1);
        let moved: Vec<_> = arrays.iter().map(|a| a.permuted(&perm)).collect();
        let other = gg_residual(&moved, &f, n, &spec, &boot).unwrap();
        prop_assert!((base.residual - other.residual).abs() < 1e-12);
    }
}

#[test]
fn interpolation_start_matches_the_restricted_functional() {
    let d = StateDistribution::uniform(2);
    let path = random_path(&d, 1, &mut rng::stream(3, "path", 0)).unwrap();
    let mc = McParams { reps: 1000, atoms: 100, seed: 11, ..McParams::default() };
    let curve = interpolation_curve(4, &d, 1.0, &path, &[0.0], &mc).unwrap();
    let set = ConfigSet::constrained(&d, 4).unwrap();
    let other = McParams { seed: 12, ..mc };
    let f1 = eval_f1_restricted(&set, &LagrangeMultipliers::zeros(2), &path, 1.0, &other).unwrap();
    let se = curve.se[0].hypot(f1.std_error);
    assert!((curve.estimate[0] - f1.value).abs() <= 3.0 * se, "{} vs {} ± {se}", curve.estimate[0], f1.value);
}

#[test]
fn reported_optimum_reproduces() {
    let d = StateDistribution::new(vec![0.3, 0.7]).unwrap();
    let cfg = OptimizerConfig { starts: 3, ..OptimizerConfig::default() };
    let rep = inner_minimize(&d, 2, 1.0, &cfg, 5).unwrap();
    let again = eval_parisi(&rep.lambda, &d, &rep.path, 1.0, &cfg.quadrature).unwrap().value;
    assert!((again - rep.value).abs() < 1e-8);
}

#[test]
fn more_starts_never_hurt() {
    let d = StateDistribution::new(vec![0.4, 0.6]).unwrap();
    let few = OptimizerConfig { starts: 2, ..OptimizerConfig::default() };
    let many = OptimizerConfig { starts: 4, ..few };
    let a = inner_minimize(&d, 1, 1.5, &few, 9).unwrap().value;
    let b = inner_minimize(&d, 1, 1.5, &many, 9).unwrap().value;
    assert!(b <= a);
}

#[test]
fn f1_is_lipschitz_in_the_path() {
    let d = StateDistribution::uniform(2);
    let set = ConfigSet::constrained(&d, 4).unwrap();
    let zero = LagrangeMultipliers::zeros(2);
    for i in 0..5 {
        let p = paths_on(i, &d, &[1, 2]);
        let mc = McParams { reps: 200, atoms: 100, seed: i, ..McParams::default() };
        let a = eval_f1_restricted(&set, &zero, &p[0], 1.0, &mc).unwrap();
        let b = eval_f1_restricted(&set, &zero, &p[1], 1.0, &mc).unwrap();
        let bound = path_delta(&p[0], &p[1]).unwrap() + 5.0 * a.std_error.hypot(b.std_error);
        assert!((a.value - b.value).abs() <= bound, "{} vs {}", a.value, b.value);
    }
}
