use std::sync::Arc;

use num_complex::Complex64 as C64;
use proptest::prelude::*;

use nlskam::algebra::{
    evaluate, lie_transform, poisson_bracket, to_complex, to_real, vector_field_eval, LieOptions, PhaseState,
    Polynomial,
};
use nlskam::lattice::{Lattice, LatticeConfig};
use nlskam::random::{random_graded_polynomial, random_polynomial, realify, rng, MonomialShape};

fn lattice_1d() -> Arc<Lattice> {
    Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1], vec![-2]], cutoff: 3 }).unwrap())
}

fn lattice_2d() -> Arc<Lattice> {
    Arc::new(Lattice::new(LatticeConfig { d: 2, tangential: vec![vec![1, 0]], cutoff: 1 }).unwrap())
}

fn lattices() -> Vec<Arc<Lattice>> {
    vec![lattice_1d(), lattice_2d()]
}

const CUBIC: MonomialShape = MonomialShape { max_degree: 3, max_k: 2 };

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_is_antisymmetric(seed in any::<u64>(), which in 0usize..2) {
        let lat = lattices()[which].clone();
        let mut r = rng(seed);
        let f = random_polynomial(&lat, CUBIC, 8, 6, &mut r);
        let g = random_polynomial(&lat, CUBIC, 8, 6, &mut r);
        let s = poisson_bracket(&f, &g, 6).unwrap().plus(&poisson_bracket(&g, &f, 6).unwrap());
        prop_assert!(s.max_abs() < 1e-12);
    }

    #[test]
    fn jacobi_identity_holds(seed in any::<u64>(), which in 0usize..2) {
        let lat = lattices()[which].clone();
        let mut r = rng(seed);
        let f = random_polynomial(&lat, CUBIC, 6, 9, &mut r);
        let g = random_polynomial(&lat, CUBIC, 6, 9, &mut r);
        let h = random_polynomial(&lat, CUBIC, 6, 9, &mut r);
        let b = |x: &Polynomial, y: &Polynomial| poisson_bracket(x, y, 9).unwrap();
        let sum = b(&f, &b(&g, &h)).plus(&b(&g, &b(&h, &f))).plus(&b(&h, &b(&f, &g)));
        prop_assert!(sum.max_abs() < 1e-10);
    }

    #[test]
    fn momentum_adds_under_bracket(seed in any::<u64>(), which in 0usize..2) {
        let lat = lattices()[which].clone();
        let mut r = rng(seed);
        let (f, p) = random_graded_polynomial(&lat, CUBIC, 6, 6, &mut r);
        let (g, q) = random_graded_polynomial(&lat, CUBIC, 6, 6, &mut r);
        let expect: Vec<i64> = p.iter().zip(&q).map(|(a, b)| a + b).collect();
        for (m, _) in poisson_bracket(&f, &g, 6).unwrap().iter() {
            prop_assert_eq!(m.momentum(&lat), expect.clone());
        }
    }

    #[test]
    fn bracket_degree_is_graded(seed in any::<u64>(), d1 in 0u32..5, d2 in 0u32..5) {
        let lat = lattice_1d();
        let mut r = rng(seed);
        let f = random_polynomial(&lat, MonomialShape { max_degree: 4, max_k: 2 }, 10, 8, &mut r).layer(d1);
        let g = random_polynomial(&lat, MonomialShape { max_degree: 4, max_k: 2 }, 10, 8, &mut r).layer(d2);
        for (m, _) in poisson_bracket(&f, &g, 8).unwrap().iter() {
            prop_assert_eq!(m.weighted_degree() + 2, d1 + d2);
        }
    }

    #[test]
    fn split_low_high_partitions(seed in any::<u64>()) {
        let lat = lattice_1d();
        let mut r = rng(seed);
        let f = random_polynomial(&lat, MonomialShape { max_degree: 4, max_k: 2 }, 20, 4, &mut r);
        let (lo, hi) = f.split_low_high();
        prop_assert_eq!(lo.plus(&hi), f.clone());
        prop_assert!(lo.iter().all(|(m, _)| m.r_degree() <= 1 && m.weighted_degree() <= 2));
        prop_assert!(hi.iter().all(|(m, _)| m.weighted_degree() >= 3));
    }

    #[test]
    fn lie_flow_is_inverted_by_negated_generator(seed in any::<u64>()) {
        let lat = lattice_1d();
        let mut r = rng(seed);
        let f = random_polynomial(&lat, MonomialShape { max_degree: 4, max_k: 2 }, 12, 4, &mut r);
        let s = random_polynomial(&lat, MonomialShape { max_degree: 3, max_k: 1 }, 8, 4, &mut r)
            .filter(|m, _| m.weighted_degree() >= 2)
            .scaled(C64::new(0.1, 0.0));
        let opts = LieOptions { order_cap: 30, tail_tol: 1e-12 };
        let fwd = lie_transform(&f, &s, 4, opts).unwrap().result;
        let back = lie_transform(&fwd, &s.scaled(C64::new(-1.0, 0.0)), 4, opts).unwrap().result;
        prop_assert!(back.max_abs_diff(&f) < 1e-9);
    }

    #[test]
    fn lie_transform_preserves_reality(seed in any::<u64>()) {
        let lat = lattice_1d();
        let mut r = rng(seed);
        let f = realify(&random_polynomial(&lat, MonomialShape { max_degree: 4, max_k: 2 }, 10, 4, &mut r));
        let s = realify(&random_polynomial(&lat, MonomialShape { max_degree: 3, max_k: 1 }, 6, 4, &mut r)
            .filter(|m, _| m.weighted_degree() >= 2))
            .scaled(C64::new(0.1, 0.0));
        prop_assert!(f.is_real(1e-15) && s.is_real(1e-15));
        let out = lie_transform(&f, &s, 4, LieOptions { order_cap: 30, tail_tol: 1e-12 }).unwrap().result;
        prop_assert!(out.is_real(1e-12));
    }

    #[test]
    fn vector_field_matches_finite_differences(seed in any::<u64>()) {
        let lat = lattice_1d();
        let mut r = rng(seed);
        let f = random_polynomial(&lat, MonomialShape { max_degree: 4, max_k: 2 }, 12, 4, &mut r);
        let state = random_state(&lat, &mut r);
        let x = vector_field_eval(&f, &state).unwrap();
        let h = 1e-5;
        let fd = |perturb: &dyn Fn(&mut PhaseState, f64)| {
            let (mut p, mut m) = (state.clone(), state.clone());
            perturb(&mut p, h);
            perturb(&mut m, -h);
            (evaluate(&f, &p).unwrap() - evaluate(&f, &m).unwrap()) / (2.0 * h)
        };
        let scale = 1.0 + f.l1();
        for a in 0..lat.n_tangential() {
            let d_r = fd(&|s: &mut PhaseState, t| s.r[a] += t);
            let d_phi = fd(&|s: &mut PhaseState, t| s.phi[a] += t);
            prop_assert!((x.phi[a] - d_r).norm() < 1e-6 * scale);
            prop_assert!((x.r[a] + d_phi).norm() < 1e-6 * scale);
        }
        for s in 0..lat.n_normal() {
            let d_u = fd(&|st: &mut PhaseState, t| st.u[s] += t);
            let d_v = fd(&|st: &mut PhaseState, t| st.v[s] += t);
            prop_assert!((x.u[s] - C64::new(0.0, -1.0) * d_v).norm() < 1e-6 * scale);
            prop_assert!((x.v[s] - C64::new(0.0, 1.0) * d_u).norm() < 1e-6 * scale);
        }
    }

    #[test]
    fn real_complex_coordinates_round_trip(xr in -5.0f64..5.0, xi in -5.0f64..5.0, er in -5.0f64..5.0, ei in -5.0f64..5.0) {
        let (xi0, eta0) = (C64::new(xr, xi), C64::new(er, ei));
        let (u, v) = to_complex(xi0, eta0);
        let (x1, e1) = to_real(u, v);
        prop_assert!((x1 - xi0).norm() < 1e-14 && (e1 - eta0).norm() < 1e-14);
    }

    #[test]
    fn serialization_round_trips(seed in any::<u64>()) {
        let lat = lattice_2d();
        let mut r = rng(seed);
        let f = random_polynomial(&lat, MonomialShape { max_degree: 4, max_k: 2 }, 15, 4, &mut r);
        let back = Polynomial::from_records(lat.clone(), &f.to_records()).unwrap();
        prop_assert_eq!(back, f);
    }
}

fn random_state(lat: &Lattice, r: &mut nlskam::random::InstanceRng) -> PhaseState {
    use rand::Rng;
    let na = lat.n_tangential();
    let phi = (0..na).map(|_| r.random_range(-3.0..3.0)).collect();
    let act = (0..na).map(|_| r.random_range(-0.5..0.5)).collect();
    let u = (0..lat.n_normal())
        .map(|_| C64::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)))
        .collect();
    PhaseState::real(phi, act, u)
}

#[test]
fn reality_survives_bracket_of_real_functions() {
    let lat = lattice_1d();
    let mut r = rng(11);
    let f = realify(&random_polynomial(&lat, CUBIC, 10, 6, &mut r));
    let g = realify(&random_polynomial(&lat, CUBIC, 10, 6, &mut r));
    assert!(poisson_bracket(&f, &g, 6).unwrap().is_real(1e-13));
}
