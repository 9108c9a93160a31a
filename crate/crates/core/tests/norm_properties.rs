use std::sync::Arc;

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::Rng;

use nlskam::lattice::{Lattice, LatticeConfig};
use nlskam::norms::{
    band_truncate, bracket_norm_check, matrix_gamma_norm, ptame_vfield_norm, weighted_vfield_norm, Block2,
    DomainParams, LatticeMatrix,
};
use nlskam::random::{random_coeff, random_polynomial, rng, MonomialShape};

fn lattice() -> Arc<Lattice> {
    Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 3 }).unwrap())
}

fn dom() -> DomainParams {
    DomainParams { rho: 0.2, mu: 0.04, sigma: 0.2, gamma: 0.0, p: 2.0 }
}

const SHAPE: MonomialShape = MonomialShape { max_degree: 4, max_k: 2 };

fn random_matrix(lat: &Lattice, seed: u64) -> LatticeMatrix {
    let mut r = rng(seed);
    let n = lat.n_normal();
    let mut m = LatticeMatrix::new();
    for _ in 0..12 {
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        let blk = Block2::new(random_coeff(&mut r), random_coeff(&mut r), random_coeff(&mut r), random_coeff(&mut r));
        m.add(a, b, blk);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weighted_norm_is_dominated_by_tame_norm(seed in any::<u64>()) {
        let lat = lattice();
        let f = random_polynomial(&lat, SHAPE, 10, 4, &mut rng(seed));
        let w = weighted_vfield_norm(&f, &dom(), 200, seed).unwrap();
        prop_assert!(w.bound_holds, "weighted {} > tame {}", w.value, w.ptame);
    }

    #[test]
    fn tame_norm_is_homogeneous(seed in any::<u64>(), c in 0.01f64..10.0) {
        let lat = lattice();
        let f = random_polynomial(&lat, SHAPE, 10, 4, &mut rng(seed));
        let a = ptame_vfield_norm(&f.scaled(C64::new(0.0, c)), &dom());
        let b = c * ptame_vfield_norm(&f, &dom());
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b));
    }

    #[test]
    fn tame_norm_triangle_inequality(seed in any::<u64>()) {
        let lat = lattice();
        let mut r = rng(seed);
        // low-degree layers are evaluated exactly
        let f = random_polynomial(&lat, MonomialShape { max_degree: 3, max_k: 2 }, 8, 3, &mut r);
        let g = random_polynomial(&lat, MonomialShape { max_degree: 3, max_k: 2 }, 8, 3, &mut r);
        let s = ptame_vfield_norm(&f.plus(&g), &dom());
        prop_assert!(s <= (ptame_vfield_norm(&f, &dom()) + ptame_vfield_norm(&g, &dom())) * (1.0 + 1e-9));
    }

    #[test]
    fn gamma_norm_homogeneous_and_subadditive(s1 in any::<u64>(), s2 in any::<u64>(), c in 0.1f64..5.0, gamma in 0.0f64..0.5) {
        let lat = lattice();
        let (a, b) = (random_matrix(&lat, s1), random_matrix(&lat, s2));
        let na = matrix_gamma_norm(&a, gamma, &lat).unwrap();
        let nb = matrix_gamma_norm(&b, gamma, &lat).unwrap();
        prop_assert!((matrix_gamma_norm(&a.scaled(C64::new(c, 0.0)), gamma, &lat).unwrap() - c * na).abs() < 1e-10 * (1.0 + na));
        prop_assert!(matrix_gamma_norm(&a.plus(&b), gamma, &lat).unwrap() <= na + nb + 1e-12);
    }

    #[test]
    fn band_truncation_idempotent_and_norm_decreasing(seed in any::<u64>(), delta in 0.0f64..6.0, gamma in 0.0f64..0.5) {
        let lat = lattice();
        let m = random_matrix(&lat, seed);
        let t = band_truncate(&m, delta, &lat).unwrap();
        let tt = band_truncate(&t, delta, &lat).unwrap();
        for (k, v) in &t.entries {
            prop_assert!((v - tt.get(k.0, k.1)).norm() < 1e-14);
        }
        prop_assert_eq!(t.entries.len(), tt.entries.len());
        prop_assert!(matrix_gamma_norm(&t, gamma, &lat).unwrap() <= matrix_gamma_norm(&m, gamma, &lat).unwrap() + 1e-14);
    }
}

#[test]
fn band_truncation_leaves_diagonal_alone() {
    let lat = lattice();
    let mut m = LatticeMatrix::new();
    for a in 0..lat.n_normal() {
        m.add(a, a, Block2::identity() * C64::new(a as f64 + 1.0, 0.0));
    }
    assert_eq!(band_truncate(&m, 0.0, &lat).unwrap(), m);
}

#[test]
fn bracket_estimate_has_uniform_constant() {
    let lat = lattice();
    let mut r = rng(99);
    let d = DomainParams { rho: 0.4, mu: 0.16, sigma: 0.4, gamma: 0.0, p: 2.0 };
    let shape = MonomialShape { max_degree: 3, max_k: 2 };
    let mut constants = Vec::new();
    for _ in 0..50 {
        let f = random_polynomial(&lat, shape, 6, 3, &mut r);
        let g = random_polynomial(&lat, shape, 6, 3, &mut r);
        let chk = bracket_norm_check(&f, &g, &d, 0.1, 0.1).unwrap();
        constants.push(chk.constant);
        let scaled = bracket_norm_check(&f.scaled(C64::new(3.0, 0.0)), &g, &d, 0.1, 0.1).unwrap();
        assert!((scaled.constant - chk.constant).abs() <= 1e-9 * (1.0 + chk.constant));
    }
    let c = constants.iter().copied().fold(0.0, f64::max);
    assert!(c.is_finite() && c > 0.0);
    let zero = bracket_norm_check(&nlskam::algebra::Polynomial::zero(lat.clone(), 3), &random_polynomial(&lat, shape, 6, 3, &mut r), &d, 0.1, 0.1).unwrap();
    assert_eq!((zero.lhs, zero.rhs_without_constant), (0.0, 0.0));
}
