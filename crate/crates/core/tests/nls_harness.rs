use std::sync::Arc;

use nlskam::algebra::{to_complex, PhaseState};
use nlskam::lattice::{Lattice, LatticeConfig};
use nlskam::nls::*;
use nlskam::nonresonance::{ParameterPoint, SamplingBox};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::Rng;

fn toy_w() -> ParameterPoint {
    let cart = Lattice::cartesian(1, 8).unwrap();
    ParameterPoint::sample(&cart, SamplingBox::default(), &mut nlskam::random::rng(1))
}

fn aa_lattice() -> Arc<Lattice> {
    Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 3 }).unwrap())
}

fn toy_start(delta: f64) -> (Arc<Lattice>, nlskam::algebra::Polynomial, PhaseState) {
    let cfg = toy_config(toy_w(), 1e-3, delta, 3);
    let (cart, ham) = cartesian_hamiltonian(&cfg).unwrap();
    let u0 = initial_field(&cfg, &cart).unwrap();
    (cart, ham, PhaseState::real(vec![], vec![], u0))
}

#[test]
fn energy_drift_over_1e5_steps() {
    let (_, ham, mut x) = toy_start(0.05);
    let integ = Integrator::new(&ham, IntegratorOptions { real: true, ..IntegratorOptions::new(0.01, Scheme::SplitStep) }).unwrap();
    let e0 = integ.energy(&x).re;
    let mut drift = 0.0f64;
    integ
        .run(&mut x, 100_000, |n, _, x| {
            if n % 1000 == 0 {
                drift = drift.max((integ.energy(x).re - e0).abs() / e0.abs());
            }
        })
        .unwrap();
    assert!(drift < 1e-6, "relative energy drift {drift:e}");
}

#[test]
fn forward_then_backward_returns_to_start() {
    let (_, ham, x0) = toy_start(0.05);
    for scheme in [Scheme::SplitStep, Scheme::ImplicitMidpoint] {
        let opts = IntegratorOptions::new(0.01, scheme);
        let fwd = Integrator::new(&ham, opts).unwrap();
        let bwd = Integrator::new(&ham.scaled(C64::new(-1.0, 0.0)), opts).unwrap();
        let mut x = x0.clone();
        fwd.run(&mut x, 2000, |_, _, _| {}).unwrap();
        bwd.run(&mut x, 2000, |_, _, _| {}).unwrap();
        let err = x.u.iter().zip(&x0.u).chain(x.v.iter().zip(&x0.v)).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-7, "{scheme:?} reversal error {err:e}");
    }
}

#[test]
fn distance_matches_angle_grid_minimization() {
    let lat = aa_lattice();
    let q = [0.5];
    let p = 4.0;
    let mut r = nlskam::random::rng(11);
    for _ in 0..20 {
        let phi: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let rr: f64 = r.random_range(-0.2..0.2);
        let u: Vec<C64> = (0..lat.n_normal()).map(|_| C64::new(r.random_range(-0.01..0.01), r.random_range(-0.01..0.01))).collect();
        let x = PhaseState::real(vec![phi], vec![rr], u.clone());
        let got = torus_distance(&x, &lat, &q, p);

        // tangential coordinate as a complex amplitude; torus points √q e^{−iθ}
        let ut = C64::from_polar((q[0] + rr).sqrt(), -phi);
        let normal: f64 = lat
            .normal()
            .iter()
            .zip(&u)
            .map(|(s, c)| 2.0 * c.norm_sqr() * nlskam::lattice::bracket_weight(s).powf(2.0 * p))
            .sum();
        let tangential_weight = nlskam::lattice::bracket_weight(&lat.tangential()[0]).powf(2.0 * p);
        let at = |theta: f64| {
            let d = ut - C64::from_polar(q[0].sqrt(), -theta);
            (2.0 * d.norm_sqr() * tangential_weight + normal).sqrt()
        };
        let n = 20_000;
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for i in 0..n {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            if at(th) < best {
                best = at(th);
                arg = th;
            }
        }
        let (mut lo, mut hi) = (arg - std::f64::consts::TAU / n as f64, arg + std::f64::consts::TAU / n as f64);
        for _ in 0..100 {
            let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
            if at(m1) < at(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let oracle = at(0.5 * (lo + hi)).min(best);
        assert!((got - oracle).abs() < 1e-6, "distance {got} vs grid {oracle}");
    }
}

#[test]
fn field_and_action_angle_distances_agree() {
    let aa = aa_lattice();
    let cart = Lattice::cartesian(1, 3).unwrap();
    let mut r = nlskam::random::rng(4);
    let phi = 0.7;
    let rr = 0.03;
    let u: Vec<C64> = (0..aa.n_normal()).map(|_| C64::new(r.random_range(-0.02..0.02), r.random_range(-0.02..0.02))).collect();
    let x = PhaseState::real(vec![phi], vec![rr], u.clone());
    let mut field = vec![C64::new(0.0, 0.0); cart.n_normal()];
    for (s, c) in aa.normal().iter().zip(&u) {
        field[cart.normal_index(s).unwrap()] = *c;
    }
    let t = cart.normal_index(&[1]).unwrap();
    field[t] = C64::from_polar((0.5f64 + rr).sqrt(), -phi);
    let a = torus_distance(&x, &aa, &[0.5], 4.0);
    let b = field_torus_distance(&cart, &field, &[(t, 0.5)], 4.0);
    assert!((a - b).abs() < 1e-14);
}

#[test]
fn single_normal_excitation_weighted_by_bracket_power() {
    let lat = aa_lattice();
    let b = lat.normal_index(&[2]).unwrap();
    let mut u = vec![C64::new(0.0, 0.0); lat.n_normal()];
    u[b] = to_complex(C64::new(0.03, 0.0), C64::new(0.0, 0.0)).0;
    let x = PhaseState::real(vec![0.4], vec![0.0], u);
    assert!((torus_distance(&x, &lat, &[0.5], 4.0) - 0.03 * 16.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_invariant_under_rigid_angle_shift(
        phi in 0.0..6.3f64,
        shift in -10.0..10.0f64,
        rr in -0.3..0.3f64,
        re in proptest::collection::vec(-0.05..0.05f64, 6),
        im in proptest::collection::vec(-0.05..0.05f64, 6),
    ) {
        let lat = aa_lattice();
        let u: Vec<C64> = re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect();
        let x = PhaseState::real(vec![phi], vec![rr], u.clone());
        let y = PhaseState::real(vec![phi + shift], vec![rr], u);
        let (a, b) = (torus_distance(&x, &lat, &[0.5], 4.0), torus_distance(&y, &lat, &[0.5], 4.0));
        prop_assert!((a - b).abs() <= 1e-15 * a.max(1.0));
    }

    #[test]
    fn field_distance_is_invariant_under_global_phase(theta in -4.0..4.0f64, seed in 0u64..1000) {
        let cart = Lattice::cartesian(1, 4).unwrap();
        let mut r = nlskam::random::rng(seed);
        let u: Vec<C64> = (0..cart.n_normal()).map(|_| C64::new(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3))).collect();
        let rotated: Vec<C64> = u.iter().map(|c| c * C64::from_polar(1.0, theta)).collect();
        let t = cart.normal_index(&[1]).unwrap();
        let (a, b) = (field_torus_distance(&cart, &u, &[(t, 0.5)], 4.0), field_torus_distance(&cart, &rotated, &[(t, 0.5)], 4.0));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn momentum_mass_and_energy_conserved_in_stability_run() {
    let cfg = toy_config(toy_w(), 1e-3, 0.05, 0);
    let rep = stability_experiment(&cfg).unwrap();
    assert!(rep.momentum_drift < 1e-9, "momentum drift {:e}", rep.momentum_drift);
    assert!(rep.mass_drift < 1e-9, "mass drift {:e}", rep.mass_drift);
    assert!(rep.energy_drift < 1e-6, "energy drift {:e}", rep.energy_drift);
    assert!((rep.initial_distance - 0.05).abs() < 1e-12);
    assert_eq!(rep.samples.first().unwrap().0, 0.0);
    assert!((rep.samples.last().unwrap().0 - rep.horizon).abs() < 1e-9);
    assert_eq!(rep.verdict, rep.max_distance < 0.1);
}

#[test]
fn state_on_torus_stays_on_torus() {
    let mut cfg = toy_config(toy_w(), 1e-3, 0.05, 2);
    cfg.perturbation = Perturbation::None;
    let rep = stability_experiment(&cfg).unwrap();
    // one rounding per step in the amplitude update
    let tol = rep.steps as f64 * f64::EPSILON;
    assert!(rep.max_distance < 10.0 * tol, "drifted to {:e} after {} steps", rep.max_distance, rep.steps);
}

#[test]
fn momentum_is_conserved_in_action_angle_flow() {
    let lat = aa_lattice();
    let cart = Lattice::cartesian(1, 3).unwrap();
    let model = NlsModel { v_hat: ParameterPoint::sample(&cart, SamplingBox::default(), &mut nlskam::random::rng(2)), f_taylor: vec![0.0, 0.0, 1.0], eps: 0.05, q: vec![0.5], degree_cutoff: 4 };
    let (quad, f) = build_nls_hamiltonian(&model, &lat).unwrap();
    let ham = quad.to_polynomial(&lat, f.degree_cutoff()).plus(&f);
    let mut r = nlskam::random::rng(9);
    let u: Vec<C64> = (0..lat.n_normal()).map(|_| C64::new(r.random_range(-0.02..0.02), r.random_range(-0.02..0.02))).collect();
    let x0 = PhaseState::real(vec![0.2], vec![0.01], u);
    let traj = integrate(&ham, &x0, 0.005, 5.0, Scheme::ImplicitMidpoint, 10).unwrap();
    let p0 = momentum(&x0, &lat, &model.q)[0];
    for x in &traj.states {
        assert!((momentum(x, &lat, &model.q)[0] - p0).abs() < 1e-10);
    }
    assert!(traj.energy_drift < 1e-6);
}

#[test]
fn real_mode_matches_complex_mode() {
    let (_, ham, x0) = toy_start(0.05);
    let complex = Integrator::new(&ham, IntegratorOptions::new(0.01, Scheme::SplitStep)).unwrap();
    let real = Integrator::new(&ham, IntegratorOptions { real: true, ..IntegratorOptions::new(0.01, Scheme::SplitStep) }).unwrap();
    let (mut a, mut b) = (x0.clone(), x0);
    complex.run(&mut a, 2000, |_, _, _| {}).unwrap();
    real.run(&mut b, 2000, |_, _, _| {}).unwrap();
    let err = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err:e}");
}
