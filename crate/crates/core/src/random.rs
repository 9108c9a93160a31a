//! Seeded random instances: polynomials, momentum-graded polynomials, and
//! Hermitian matrices, used by property tests and regression batteries.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{var, Monomial, Polynomial, SLOT_U, SLOT_V};
use crate::lattice::Lattice;

pub use rand::SeedableRng;

pub type InstanceRng = ChaCha8Rng;

pub fn rng(seed: u64) -> InstanceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug)]
pub struct MonomialShape {
    /// Largest weighted degree drawn.
    pub max_degree: u32,
    /// Largest `|k_a|` per tangential site.
    pub max_k: i32,
}

pub fn random_coeff(rng: &mut InstanceRng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// A monomial of weighted degree exactly `deg`.
pub fn random_monomial_of_degree(lat: &Lattice, deg: u32, max_k: i32, rng: &mut InstanceRng) -> Monomial {
    let na = lat.n_tangential();
    let nl = lat.n_normal();
    let mut m = Monomial::one(na);
    for a in 0..na {
        m.k[a] = rng.random_range(-max_k..=max_k);
    }
    let mut left = deg;
    if nl == 0 {
        left -= left % 2;
    }
    while left > 0 {
        let take_r = na > 0 && left >= 2 && (nl == 0 || rng.random_bool(0.3));
        if take_r {
            let a = rng.random_range(0..na);
            m.alpha[a] += 1;
            left -= 2;
        } else if nl > 0 {
            let s = rng.random_range(0..nl);
            let slot = if rng.random_bool(0.5) { SLOT_U } else { SLOT_V };
            m = m.times_var(var(s, slot), 1);
            left -= 1;
        } else {
            break;
        }
    }
    m
}

pub fn random_polynomial(
    lat: &Arc<Lattice>,
    shape: MonomialShape,
    n_terms: usize,
    cutoff: u32,
    rng: &mut InstanceRng,
) -> Polynomial {
    let terms: Vec<(Monomial, C64)> = (0..n_terms)
        .map(|_| {
            let deg = rng.random_range(0..=shape.max_degree);
            (random_monomial_of_degree(lat, deg, shape.max_k, rng), random_coeff(rng))
        })
        .collect();
    Polynomial::from_terms(lat.clone(), cutoff, terms)
}

/// `n_terms` draws of weighted degree exactly `deg`.
pub fn random_layer(
    lat: &Arc<Lattice>,
    deg: u32,
    max_k: i32,
    n_terms: usize,
    cutoff: u32,
    rng: &mut InstanceRng,
) -> Polynomial {
    let terms: Vec<(Monomial, C64)> = (0..n_terms)
        .map(|_| (random_monomial_of_degree(lat, deg, max_k, rng), random_coeff(rng)))
        .collect();
    Polynomial::from_terms(lat.clone(), cutoff, terms)
}

/// Terms of a single momentum `p`, fixed by the first draw. Rejection
/// sampling; may return fewer than `n_terms` terms.
pub fn random_graded_polynomial(
    lat: &Arc<Lattice>,
    shape: MonomialShape,
    n_terms: usize,
    cutoff: u32,
    rng: &mut InstanceRng,
) -> (Polynomial, Vec<i64>) {
    let deg = rng.random_range(0..=shape.max_degree);
    let first = random_monomial_of_degree(lat, deg, shape.max_k, rng);
    let p = first.momentum(lat);
    let mut terms = vec![(first, random_coeff(rng))];
    let mut tries = 0;
    while terms.len() < n_terms && tries < 200 * n_terms {
        tries += 1;
        let deg = rng.random_range(0..=shape.max_degree);
        let m = random_monomial_of_degree(lat, deg, shape.max_k, rng);
        if m.momentum(lat) == p {
            terms.push((m, random_coeff(rng)));
        }
    }
    (Polynomial::from_terms(lat.clone(), cutoff, terms), p)
}

/// `f + conj(f)`: real-valued on the real phase space.
pub fn realify(f: &Polynomial) -> Polynomial {
    f.plus(&f.conjugate())
}

pub fn random_hermitian(n: usize, scale: f64, rng: &mut InstanceRng) -> DMatrix<C64> {
    let m = DMatrix::from_fn(n, n, |_, _| random_coeff(rng) * scale);
    (&m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn random_matrix(n: usize, m: usize, rng: &mut InstanceRng) -> DMatrix<C64> {
    DMatrix::from_fn(n, m, |_, _| random_coeff(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;

    #[test]
    fn graded_terms_share_momentum() {
        let lat = Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 3 }).unwrap());
        let mut r = rng(7);
        let shape = MonomialShape { max_degree: 3, max_k: 2 };
        let (f, p) = random_graded_polynomial(&lat, shape, 6, 4, &mut r);
        assert!(f.iter().all(|(m, _)| m.momentum(&lat) == p));
    }

    #[test]
    fn monomial_has_requested_degree() {
        let lat = Arc::new(Lattice::new(LatticeConfig { d: 2, tangential: vec![vec![1, 0]], cutoff: 1 }).unwrap());
        let mut r = rng(3);
        for deg in 0..6 {
            assert_eq!(random_monomial_of_degree(&lat, deg, 1, &mut r).weighted_degree(), deg);
        }
    }
}
