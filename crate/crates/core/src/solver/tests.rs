use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::coupling::check_membership;
use crate::random::random_space;

fn two_point(a: f64) -> MmSpace {
    MmSpace::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DVector::from_vec(vec![a, 1.0 - a]),
    )
    .unwrap()
}

fn cfg() -> SolveConfig {
    SolveConfig::default()
}

fn pair(seed: u64, n: usize, m: usize) -> (MmSpace, MmSpace) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_space(&mut rng, n), random_space(&mut rng, m))
}

#[test]
fn gw_of_a_space_with_itself_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 1..6 {
        let x = random_space(&mut rng, n);
        for p in [Exponent::ONE, Exponent::TWO, Exponent::Finite(3.0)] {
            let r = solve_gw(&x, &x, p, &cfg()).unwrap();
            assert!(r.value <= 1e-9, "n={n} p={p}: {}", r.value);
        }
    }
}

#[test]
fn gw_of_relabeled_copy_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_space(&mut rng, 5);
    let y = x.relabel(&[3, 0, 4, 1, 2]).unwrap();
    let r = solve_gw(&x, &y, Exponent::TWO, &cfg()).unwrap();
    assert!(r.value <= 1e-9, "{}", r.value);
    // The optimal coupling is the permutation.
    assert_relative_eq!(r.coupling.matrix()[(3, 0)], x.weights()[3], epsilon = 1e-12);
}

#[test]
fn gw_point_vs_two_simplex() {
    let d2 = MmSpace::simplex(2).unwrap();
    let r = solve_gw(&MmSpace::point(), &d2, Exponent::ONE, &cfg()).unwrap();
    assert_relative_eq!(r.value, 0.5, epsilon = 1e-12);
}

#[test]
fn gw_simplex_refinement_bound() {
    for (n, k) in [(2, 2), (2, 3), (3, 2)] {
        let a = MmSpace::simplex(n).unwrap();
        let b = MmSpace::simplex(n * k).unwrap();
        for p in [Exponent::ONE, Exponent::TWO] {
            let r = solve_gw(&a, &b, p, &cfg()).unwrap();
            assert!(r.value <= (n as f64).powf(-p.reciprocal()) + 1e-9, "n={n} k={k} p={p}: {}", r.value);
        }
    }
}

#[test]
fn results_are_feasible_and_consistent() {
    let (x, y) = pair(7, 4, 3);
    let fams = [
        RelaxParams::Exact,
        RelaxParams::relaxed(0.3, 0.6),
        RelaxParams::symmetric(0.3, 0.6),
        RelaxParams::relaxed(f64::INFINITY, 0.2),
    ];
    for params in fams {
        let r = solve(&x, &y, &params, Exponent::TWO, &cfg(), &[]).unwrap();
        assert!(check_membership(&r.coupling, x.weights(), y.weights(), &params).unwrap().ok);
        let v = crate::distortion::dis_p(&x, &y, &r.coupling, Exponent::TWO).unwrap();
        assert!((v - r.value).abs() <= 1e-9 * v.max(1e-300), "{v} vs {}", r.value);
        assert!(r.is_upper_bound);
        assert!(r.feasibility_residual <= 1e-9);
    }
}

#[test]
fn relaxed_at_zero_equals_gw() {
    for seed in 0..5 {
        let (x, y) = pair(seed, 3, 3);
        let gw = solve_gw(&x, &y, Exponent::TWO, &cfg()).unwrap().value;
        let pgw = solve_pgw(&x, &y, (0.0, 0.0), Exponent::TWO, &cfg()).unwrap().value;
        let spgw = solve_spgw(&x, &y, (0.0, 0.0), Exponent::TWO, &cfg()).unwrap().value;
        assert!((gw - pgw).abs() <= 1e-8 && (gw - spgw).abs() <= 1e-8);
    }
}

#[test]
fn pgw_of_a_space_with_itself_is_zero() {
    let (x, _) = pair(2, 4, 1);
    for eps in [(0.1, 0.1), (1.0, 0.0), (f64::INFINITY, 0.5)] {
        assert!(solve_pgw(&x, &x, eps, Exponent::TWO, &cfg()).unwrap().value <= 1e-9);
    }
}

#[test]
fn strictly_coarser_instance_has_zero_pgw_at_infinity() {
    for n in [2usize, 10, 100] {
        let xn = two_point(1.0 - 1.0 / n as f64);
        let eps = 1.0 / (n as f64 - 1.0);
        let c = cfg().with_p_inf(PInfStrategy::Enumerate);
        let r = solve_pgw(&xn, &MmSpace::point(), (eps, eps), Exponent::Infinity, &c).unwrap();
        assert_eq!(r.value, 0.0, "n={n}");
        let g = solve_gw(&xn, &MmSpace::point(), Exponent::Infinity, &c).unwrap();
        assert_eq!(g.value, 1.0);
    }
}

#[test]
fn large_p_surrogate_on_the_coarser_instance() {
    let xn = two_point(0.9);
    let r = solve_pgw(&xn, &MmSpace::point(), (1.0 / 9.0, 1.0 / 9.0), Exponent::Infinity, &cfg()).unwrap();
    assert_eq!(r.value, 0.0);
}

#[test]
fn enumerate_rejects_large_instances() {
    let (x, y) = pair(1, 4, 3);
    let c = cfg().with_p_inf(PInfStrategy::Enumerate);
    assert!(matches!(solve_gw(&x, &y, Exponent::Infinity, &c), Err(Error::Unsupported(_))));
}

/// Spaces of the naive-triangle counterexample with β = ½ − δ.
fn counterexample(delta: f64) -> (MmSpace, MmSpace, MmSpace) {
    (MmSpace::point(), two_point(0.5), two_point(0.5 - delta))
}

#[test]
fn counterexample_two_sided_values() {
    let (x, y, z) = counterexample(0.1);
    let eps2 = 0.25;
    let yz = solve_spgw(&y, &z, (0.0, eps2), Exponent::TWO, &cfg()).unwrap();
    assert!(yz.value <= 1e-9);
    // Exact minima over the two-sided boxes.
    let beta: f64 = 0.4;
    let s = (beta / (1.0 + eps2)).max(1.0 - (1.0 + eps2) * (1.0 - beta));
    let xz = solve_spgw(&x, &z, (0.0, eps2), Exponent::TWO, &cfg()).unwrap();
    assert_relative_eq!(xz.value.powi(2), 2.0 * s * (1.0 - s), epsilon = 1e-9);
    let t = eps2 / (1.0 + eps2);
    let xy = solve_spgw(&x, &y, (eps2, eps2), Exponent::TWO, &cfg()).unwrap();
    assert_relative_eq!(xy.value.powi(2), 0.5 * (1.0 - t * t), epsilon = 1e-9);
}

#[test]
fn counterexample_one_sided_values() {
    let (x, y, z) = counterexample(0.1);
    let xz = solve_pgw(&x, &z, (0.0, 0.25), Exponent::TWO, &cfg()).unwrap();
    assert_relative_eq!(xz.value.powi(2), 0.375, epsilon = 1e-9);
    let xy = solve_pgw(&x, &y, (0.25, 0.25), Exponent::TWO, &cfg()).unwrap();
    assert_relative_eq!(xy.value.powi(2), 0.46875, epsilon = 1e-9);
}

#[test]
fn mass_zero_gives_zero_coupling() {
    let (x, y) = pair(5, 3, 2);
    let r = solve_mpgw(&x, &y, 0.0, Exponent::TWO, &cfg()).unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(r.coupling.total(), 0.0);
}

#[test]
fn mass_out_of_range_is_rejected() {
    let (x, y) = pair(5, 3, 2);
    assert!(matches!(solve_mpgw(&x, &y, 1.5, Exponent::TWO, &cfg()), Err(Error::Parameter(_))));
}

#[test]
fn full_mass_equals_gw() {
    for seed in 10..14 {
        let (x, y) = pair(seed, 3, 3);
        let gw = solve_gw(&x, &y, Exponent::TWO, &cfg()).unwrap().value;
        let m = solve_mpgw(&x, &y, 1.0, Exponent::TWO, &cfg()).unwrap().value;
        assert!((gw - m).abs() <= 1e-8);
    }
}

#[test]
fn mass_route_matches_relaxed_route() {
    for seed in 20..24 {
        let (x, y) = pair(seed, 3, 3);
        let (xt, yt) = (
            x.with_weights(x.weights() * 2.0).unwrap(),
            y.with_weights(y.weights() * 3.0).unwrap(),
        );
        for delta in [0.5, 1.2, 1.9] {
            let m = solve_mpgw(&xt, &yt, delta, Exponent::TWO, &cfg()).unwrap();
            let eps = (2.0 / delta - 1.0, 3.0 / delta - 1.0);
            let pg = solve_pgw(&x, &y, eps, Exponent::TWO, &cfg()).unwrap();
            assert!((m.value / delta - pg.value).abs() <= 1e-6, "{} vs {}", m.value / delta, pg.value);
        }
    }
}

#[test]
fn warm_starts_are_checked() {
    let (x, y) = pair(9, 3, 3);
    let bad = Coupling::dirac(3, 3, 0, 0, 1.0);
    assert!(matches!(
        solve(&x, &y, &RelaxParams::Exact, Exponent::TWO, &cfg(), &[bad]),
        Err(Error::Parameter(_))
    ));
    let good = Coupling::product(x.weights(), y.weights());
    let r = solve(&x, &y, &RelaxParams::Exact, Exponent::TWO, &cfg(), &[good]).unwrap();
    assert_eq!(r.restarts_used, 16 + 9 + 1);
}

#[test]
fn deterministic_for_fixed_seed() {
    let (x, y) = pair(11, 4, 4);
    let c = cfg().with_seed(99);
    let a = solve_pgw(&x, &y, (0.2, 0.4), Exponent::ONE, &c).unwrap();
    let b = solve_pgw(&x, &y, (0.2, 0.4), Exponent::ONE, &c).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_config_rejected() {
    let (x, y) = pair(1, 2, 2);
    let c = SolveConfig { restarts: 0, ..cfg() };
    assert!(solve_gw(&x, &y, Exponent::TWO, &c).is_err());
    let c = SolveConfig { fw_tol: 0.0, ..cfg() };
    assert!(solve_gw(&x, &y, Exponent::TWO, &c).is_err());
}

#[test]
fn oracle_examples() {
    let d2 = MmSpace::simplex(2).unwrap();
    assert!(brute_force_oracle(&d2, &d2, &RelaxParams::Exact, Exponent::TWO, 50).unwrap() < 1e-9);
    let (x, y, z) = counterexample(0.1);
    let v = brute_force_oracle(&x, &z, &RelaxParams::relaxed(0.0, 0.25), Exponent::TWO, 200).unwrap();
    assert!((v - 0.375f64.sqrt()).abs() < 1e-3, "{v}");
    let v = brute_force_oracle(&x, &y, &RelaxParams::relaxed(0.25, 0.25), Exponent::TWO, 200).unwrap();
    assert!((v - 0.46875f64.sqrt()).abs() < 1e-3, "{v}");
    let (a, b) = pair(1, 4, 3);
    assert!(brute_force_oracle(&a, &b, &RelaxParams::Exact, Exponent::TWO, 10).is_err());
}

#[test]
fn solver_matches_oracle_on_small_instances() {
    let fams = [
        RelaxParams::Exact,
        RelaxParams::relaxed(0.5, 0.25),
        RelaxParams::symmetric(0.5, 0.25),
        RelaxParams::mass(0.6),
    ];
    for seed in 0..6 {
        let (x, y) = pair(100 + seed, 2 + (seed as usize % 2), 2);
        for params in &fams {
            for p in [Exponent::ONE, Exponent::TWO] {
                let s = solve(&x, &y, params, p, &cfg(), &[]).unwrap().value;
                let o = brute_force_oracle(&x, &y, params, p, 60).unwrap();
                assert!((s - o).abs() < 1e-3, "seed {seed} {params:?} p={p}: solver {s} oracle {o}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn monotone_in_eps(seed in any::<u64>(), e in 0.0f64..1.0, de in 0.0f64..1.0) {
        let (x, y) = pair(seed, 3, 3);
        let c = cfg();
        let a = solve_pgw(&x, &y, (e, e), Exponent::TWO, &c).unwrap();
        let b = solve(&x, &y, &RelaxParams::relaxed(e + de, e + de), Exponent::TWO, &c, std::slice::from_ref(&a.coupling)).unwrap();
        prop_assert!(b.value <= a.value + 2.0 * c.fw_tol);
        prop_assert!(a.value <= solve_gw(&x, &y, Exponent::TWO, &c).unwrap().value + 2.0 * c.fw_tol);
    }

    #[test]
    fn symmetric_in_arguments(seed in any::<u64>(), e in 0.0f64..1.0) {
        let (x, y) = pair(seed, 3, 2);
        let c = cfg();
        let a = solve_pgw(&x, &y, (e, e), Exponent::TWO, &c).unwrap().value;
        let b = solve_pgw(&y, &x, (e, e), Exponent::TWO, &c).unwrap().value;
        prop_assert!((a - b).abs() <= 2.0 * c.fw_tol, "{a} vs {b}");
    }

    #[test]
    fn symmetric_family_is_no_better_than_relaxed(seed in any::<u64>(), e in 0.0f64..1.0) {
        let (x, y) = pair(seed, 3, 3);
        let c = cfg();
        let r = solve_pgw(&x, &y, (e, e), Exponent::TWO, &c).unwrap().value;
        let s = solve_spgw(&x, &y, (e, e), Exponent::TWO, &c).unwrap().value;
        prop_assert!(s >= r - 2.0 * c.fw_tol, "{s} < {r}");
    }
}
