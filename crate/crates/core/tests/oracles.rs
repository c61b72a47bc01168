//! Independent oracles and property checks against the library.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use hyperstab::certify::{
    audit_trajectory, decay_bound, fit_rate, theorem2_constant, theorem3_constant, Verdict,
};
use hyperstab::heatmem::{assemble, HeatMemoryExperiment};
use hyperstab::operators::{
    build_b_epsilon, build_dirichlet_laplacian, build_memory_operator, check_monotone, coercivity_constant,
    default_monotone_tol, DiscreteOperator, HeatMemoryGeometry, InnerProduct,
};
use hyperstab::solver::{
    picard_mild_solution, simulate, step_backward_euler, DisturbanceKind, DisturbanceSpec, EvolutionProblem,
    SimOptions, SpatialPattern,
};
use hyperstab::timescale::{
    lemma1_check, lemma1_constant, lemma1_lhs, log_grid, PsiKind, PsiSchedule, TimeMap,
};
use hyperstab::Error;

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|k| f(lo + k as f64 * h)).sum();
    h * (0.5 * f(lo) + inner + 0.5 * f(hi))
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
    }
    s * h / 3.0
}

fn lemma_constant_oracle(a: f64, alpha: f64) -> f64 {
    let aa = a * alpha;
    let u = (aa - 1.0) / a;
    let head = trapezoid(|s| (s - u).exp() * (a * s + 1.0).powf(-alpha), 0.0, u, 200_000);
    aa.powf(alpha) * head + (aa + 1.0) + ((aa + 1.0) / aa).powf(alpha) * (1.0 - (-1.0 / a).exp())
}

#[test]
fn lemma_constant_matches_trapezoid_oracle() {
    for (a, alpha) in [(1.5, 1.0), (2.0, 1.0), (2.0, 2.0), (5.0, 1.0), (10.0, 1.0), (10.0, 0.5), (4.0, 1.0)] {
        let got = lemma1_constant(a, alpha).unwrap();
        assert_relative_eq!(got, lemma_constant_oracle(a, alpha), max_relative = 1e-6);
    }
    assert_relative_eq!(lemma1_constant(2.0, 1.0).unwrap(), 4.120280728896106, max_relative = 1e-9);
    assert!(lemma1_constant(10.0, 1.0).unwrap() > 11.0);
}

#[test]
fn lemma_lhs_matches_simpson_oracle() {
    for (a, alpha) in [(2.0, 1.0), (1.5, 1.0), (2.0, 2.0)] {
        for tau in [0.1, 1.0, 10.0, 50.0] {
            let n = (tau * 2000.0) as usize + 200;
            let oracle = simpson(|s| (s - tau).exp() * (a * s + 1.0).powf(-alpha), 0.0, tau, n);
            assert_relative_eq!(lemma1_lhs(a, alpha, tau).unwrap(), oracle, max_relative = 1e-8);
        }
    }
}

#[test]
fn lemma_inequality_on_log_grid() {
    let grid = log_grid(1e-2, 1e3, 60);
    for (a, alpha) in [(1.5, 1.0), (2.0, 1.0), (2.0, 2.0), (5.0, 1.0), (10.0, 0.5)] {
        let rep = lemma1_check(a, alpha, &grid).unwrap();
        assert!(rep.all_pass(), "({a}, {alpha}) worst margin {}", rep.worst_relative_margin());
    }
    assert!(matches!(lemma1_check(10.0, 0.05, &grid), Err(Error::Precondition { .. })));
    let rep = lemma1_check(1.5, 1.0, &[50.0]).unwrap();
    assert!(rep.rows[0].margin > 0.0);
}

#[test]
fn laplacian_spectrum_matches_analytic_formula() {
    for n in [3usize, 7, 31] {
        let op = build_dirichlet_laplacian(n).unwrap();
        let h = 1.0 / (n + 1) as f64;
        let mut eig: Vec<f64> = op.matrix().clone().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        for (k, lam) in eig.iter().enumerate() {
            let exact = 2.0 / (h * h) * (1.0 - ((k + 1) as f64 * std::f64::consts::PI * h).cos());
            assert_relative_eq!(*lam, exact, max_relative = 1e-10);
        }
    }
}

#[test]
fn coercivity_of_b_epsilon() {
    for eps in [0.1, 0.5, 1.0, 2.0, 10.0] {
        let g = HeatMemoryGeometry::new(15, 1.0, 0.7, eps).unwrap();
        let b = build_b_epsilon(&g).unwrap();
        assert!((coercivity_constant(&b) - eps.min(1.0)).abs() <= 1e-10);
    }
}

#[test]
fn picard_matches_forced_semigroup_closed_form() {
    // K = 0 and constant d: X(t) = S(t)X₀ + A⁻¹(I − S(t))p·c
    let g = HeatMemoryGeometry::new(6, 1.0, 1.0, 1.0).unwrap();
    let a = build_memory_operator(&g).unwrap();
    let x0 = DVector::from_fn(12, |i, _| (i as f64 * 0.3).sin());
    let p = EvolutionProblem {
        a: a.clone(),
        b: build_b_epsilon(&g).unwrap(),
        gain: 0.0,
        schedule: PsiSchedule::affine(1).unwrap(),
        disturbance: DisturbanceSpec::new(DisturbanceKind::Constant { value: 0.5 }, SpatialPattern::FirstComponentOnly),
        initial_state: x0.clone(),
        horizon: 0.4,
    };
    let sol = picard_mild_solution(&p, 0.4, 10, 4000).unwrap();
    let s = (a.matrix() * -0.4).exp();
    let forcing = p.disturbance_pattern() * 0.5;
    let exact = &s * &x0 + a.matrix().clone().lu().solve(&((DMatrix::identity(12, 12) - &s) * forcing)).unwrap();
    assert!((&sol.state - &exact).norm() <= 1e-6 * exact.norm());
}

#[test]
fn picard_scalar_and_contraction_reports() {
    let p = EvolutionProblem::scalar(0.0, 1.0, 1.0, PsiSchedule::affine(1).unwrap(), 1.0, 1.0).unwrap();
    let sol = picard_mild_solution(&p, 1.0, 100, 10_000).unwrap();
    assert_relative_eq!(sol.state[0], (-1.5f64).exp(), max_relative = 1e-7);
    assert!(sol.subintervals.len() > 1);
    for r in &sol.subintervals {
        assert!(r.bound_ratio < 1.0);
        assert!(r.observed_ratio < 1.0, "{r:?}");
    }
}

#[test]
fn backward_euler_is_first_order_against_picard() {
    let exp = HeatMemoryExperiment {
        horizon: 0.5,
        ..HeatMemoryExperiment::with_geometry(HeatMemoryGeometry::new(8, 1.0, 1.0, 1.0).unwrap())
    };
    let p = assemble(&exp).unwrap();
    let oracle = picard_mild_solution(&p, 0.5, 200, 10_000).unwrap();
    let err = |dt: f64| {
        let opts = SimOptions {
            dt_max: Some(dt),
            sample_interval: Some(0.05),
            ..SimOptions::default()
        };
        let traj = simulate(&p, &opts).unwrap();
        p.inner().norm(&(traj.final_state() - &oracle.state))
    };
    let ratio = err(1e-4) / err(5e-5);
    assert!((1.7..=2.3).contains(&ratio), "{ratio}");
}

#[test]
fn scalar_simulation_matches_closed_form() {
    let p = EvolutionProblem::scalar(0.0, 1.0, 1.0, PsiSchedule::affine(1).unwrap(), 1.0, 2.0).unwrap();
    let opts = SimOptions {
        dt_max: Some(1e-4),
        ..SimOptions::default()
    };
    let traj = simulate(&p, &opts).unwrap();
    for t in [0.5, 1.0, 2.0] {
        let k = traj.index_of(t, 1e-6).unwrap();
        assert_relative_eq!(traj.states[k][0], (-t * (t + 2.0) / 2.0).exp(), max_relative = 1e-3);
    }
}

#[test]
fn heat_memory_norm_nonincreasing_without_disturbance() {
    let exp = HeatMemoryExperiment {
        horizon: 1.0,
        ..HeatMemoryExperiment::default()
    };
    let traj = simulate(&assemble(&exp).unwrap(), &SimOptions::default()).unwrap();
    let norms: Vec<f64> = traj.norms().collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert_eq!(traj.meta.contraction_violations, 0);
}

#[test]
fn both_constants_cover_scalar_iss_run() {
    let mut p = EvolutionProblem::scalar(0.0, 1.0, 1.0, PsiSchedule::affine(1).unwrap(), 1.0, 4.0).unwrap();
    p.disturbance = DisturbanceSpec::new(DisturbanceKind::Constant { value: 0.3 }, SpatialPattern::UniformAcrossDomain);
    let traj = simulate(&p, &SimOptions { dt_max: Some(1e-4), ..SimOptions::default() }).unwrap();
    let map = TimeMap::new(1.0, PsiSchedule::affine(1).unwrap()).unwrap();
    for c in [theorem2_constant(1.0).unwrap(), theorem3_constant(1.0, 1e3).unwrap()] {
        for (t, v) in traj.times.iter().zip(&traj.lyapunov) {
            assert!(*v <= decay_bound(&map, 1.0, *t, 0.3, c).unwrap() * 1.01);
        }
    }
    let cert = audit_trajectory(&traj, &p).unwrap();
    assert_eq!(cert.verdict, Verdict::Pass);
    // soundness: re-evaluate every sample
    let c = cert.constant_c;
    for (t, v) in traj.times.iter().zip(&traj.lyapunov) {
        assert!(*v <= (1.0 + cert.tol_bound) * decay_bound(&map, 1.0, *t, 0.3, c).unwrap());
    }
}

#[test]
fn lemma_route_dominates_supremum_route() {
    for eta in [0.5, 1.0, 1.5] {
        let lemma = theorem2_constant(eta).unwrap();
        let sup = theorem3_constant(eta, 1e3).unwrap() / eta;
        assert!(lemma >= sup, "eta {eta}: {lemma} < {sup}");
    }
}

#[test]
fn rate_fit_detects_quadratic_exponent_only_for_growing_gain() {
    let p = EvolutionProblem::scalar(0.0, 1.0, 1.0, PsiSchedule::affine(1).unwrap(), 1.0, 2.0).unwrap();
    let traj = simulate(&p, &SimOptions { dt_max: Some(1e-4), sample_interval: Some(0.01), ..SimOptions::default() }).unwrap();
    let fit = fit_rate(&traj, [0.2, 2.0]).unwrap();
    assert!((fit.quad_coeff - 0.5).abs() < 0.02 && (fit.lin_coeff - 1.0).abs() < 0.05);
    assert!(fit.quad_coeff >= 0.5 - 0.05 && fit.residual_rms < 1e-3);

    let schedule = PsiSchedule::new(PsiKind::Constant { c: 1.0 }, 1).unwrap();
    let p = EvolutionProblem::scalar(0.0, 1.0, 1.0, schedule, 1.0, 2.0).unwrap();
    let traj = simulate(&p, &SimOptions { dt_max: Some(1e-4), sample_interval: Some(0.01), ..SimOptions::default() }).unwrap();
    let fit = fit_rate(&traj, [0.2, 2.0]).unwrap();
    assert!(fit.quad_coeff.abs() < 0.05 * fit.lin_coeff / 2.0, "{fit:?}");
}

#[test]
fn negative_identity_fails_with_unit_witness() {
    let inner = InnerProduct::new(vec![2.0, 1.0, 0.5], 0.1).unwrap();
    let op = DiscreteOperator::new(-DMatrix::identity(3, 3), inner.clone(), "neg").unwrap();
    let v = check_monotone(&op, 1e-10);
    assert!(!v.pass);
    assert_relative_eq!(v.lambda_min, -1.0, epsilon = 1e-12);
    let w = DVector::from_vec(v.witness.unwrap());
    assert_relative_eq!(inner.norm(&w), 1.0, epsilon = 1e-12);
}

fn random_monotone(m: usize, seed: &[f64], weights: &[f64]) -> DiscreteOperator {
    let g = DMatrix::from_fn(m, m, |i, j| seed[(i * m + j) % seed.len()] * ((i + 2 * j) as f64).cos());
    let k = DMatrix::from_fn(m, m, |i, j| seed[(3 * i + j) % seed.len()]);
    let core = &g * g.transpose() + (&k - k.transpose());
    let d = DVector::from_iterator(m, weights.iter().map(|w| w.sqrt()));
    let matrix = DMatrix::from_fn(m, m, |i, j| core[(i, j)] * d[j] / d[i]);
    DiscreteOperator::new(matrix, InnerProduct::new(weights.to_vec(), 0.5).unwrap(), "random")
        .unwrap()
        .certify_monotone()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn phi_round_trip(t in 0.0f64..50.0, pick in 0usize..4, eta in 0.2f64..3.0) {
        let kind = [
            PsiKind::Affine,
            PsiKind::Exponential { a: 1.5, alpha: 0.2 },
            PsiKind::PowerTower { b: 0.5 },
            PsiKind::Constant { c: 2.0 },
        ][pick];
        let map = TimeMap::new(eta, PsiSchedule::new(kind, 1).unwrap()).unwrap();
        let back = map.phi_inverse(map.phi(t).unwrap()).unwrap();
        prop_assert!((back - t).abs() <= 1e-8 * t.max(1.0), "{kind:?}: {t} -> {back}");
    }

    #[test]
    fn phi_strictly_increasing(t in 0.0f64..20.0, dt in 1e-3f64..5.0, pick in 0usize..3) {
        let kind = [PsiKind::Affine, PsiKind::Exponential { a: 2.0, alpha: 0.3 }, PsiKind::PowerTower { b: 1.0 }][pick];
        let map = TimeMap::new(1.0, PsiSchedule::new(kind, 2).unwrap()).unwrap();
        prop_assert!(map.phi(t + dt).unwrap() > map.phi(t).unwrap());
    }

    #[test]
    fn memory_operator_weighted_identity(z in prop::collection::vec(-1.0f64..1.0, 2 * 31), beta in 0.0f64..2.0, eta in 0.1f64..3.0) {
        let g = HeatMemoryGeometry::new(31, beta, eta, 1.0).unwrap();
        let a = build_memory_operator(&g).unwrap();
        let z = DVector::from_vec(z);
        let lhs = a.inner().dot(&a.apply(&z), &z);
        let h = g.h();
        let z1 = |j: isize| if !(0..31).contains(&j) { 0.0 } else { z[j as usize] };
        let grad: f64 = (-1..31).map(|j| ((z1(j + 1) - z1(j)) / h).powi(2)).sum();
        let w2: f64 = (31..62).map(|j| z[j] * z[j]).sum();
        let rhs = eta * h * grad + beta * h * w2;
        prop_assert!((lhs - rhs).abs() <= 1e-10 * a.inner().norm_squared(&z));
    }

    #[test]
    fn b_epsilon_rayleigh_quotient(z in prop::collection::vec(-1.0f64..1.0, 2 * 9), eps in 0.05f64..5.0) {
        let g = HeatMemoryGeometry::new(9, 1.0, 0.8, eps).unwrap();
        let b = build_b_epsilon(&g).unwrap();
        let z = DVector::from_vec(z);
        let n2 = b.inner().norm_squared(&z);
        prop_assume!(n2 > 1e-12);
        let q = b.inner().dot(&b.apply(&z), &z) / n2;
        prop_assert!(q >= eps.min(1.0) - 1e-12 && q <= eps.max(1.0) + 1e-12);
    }

    #[test]
    fn monotone_verdict_bounds_sampled_forms(seed in prop::collection::vec(-1.0f64..1.0, 16), z in prop::collection::vec(-1.0f64..1.0, 6), w in prop::collection::vec(0.1f64..4.0, 6)) {
        let op = random_monotone(6, &seed, &w);
        let v = check_monotone(&op, default_monotone_tol(&op));
        prop_assert!(v.pass);
        let z = DVector::from_vec(z);
        prop_assert!(op.inner().dot(&op.apply(&z), &z) >= -v.tol * op.inner().norm_squared(&z));
    }

    #[test]
    fn backward_euler_step_contracts(seed in prop::collection::vec(-1.0f64..1.0, 16), x in prop::collection::vec(-1.0f64..1.0, 6), w in prop::collection::vec(0.1f64..4.0, 6), t in 0.0f64..5.0, dt in 1e-4f64..0.5) {
        let a = random_monotone(6, &seed, &w);
        let b = DiscreteOperator::identity(a.inner().clone()).certify_monotone().unwrap();
        let x = DVector::from_vec(x);
        let p = EvolutionProblem {
            a, b, gain: 1.0,
            schedule: PsiSchedule::affine(2).unwrap(),
            disturbance: DisturbanceSpec::zero(),
            initial_state: x.clone(),
            horizon: 1.0,
        };
        let next = step_backward_euler(&p, &x, t, dt).unwrap();
        prop_assert!(p.inner().norm(&next) <= p.inner().norm(&x) * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), amplitude in 0.0f64..0.5) {
        let exp = HeatMemoryExperiment {
            horizon: 0.3,
            disturbance: DisturbanceSpec::new(DisturbanceKind::BoundedRandom { amplitude, seed }, SpatialPattern::FirstComponentOnly),
            ..HeatMemoryExperiment::with_geometry(HeatMemoryGeometry::new(15, 1.0, 1.0, 1.0).unwrap())
        };
        let p = assemble(&exp).unwrap();
        let a = simulate(&p, &SimOptions::default()).unwrap();
        let b = simulate(&p, &SimOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
