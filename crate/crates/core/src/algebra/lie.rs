//! Time-one map of a Hamiltonian flow acting on functions:
//! `f ∘ X_s^1 = Σ_j (1/j!) ad_s^j f` with `ad_s f = {f, s}`.

use super::bracket::poisson_bracket;
use super::polynomial::Polynomial;
use crate::error::{Error, Result};

pub const DEFAULT_ORDER_CAP: usize = 12;
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub struct LieOptions {
    pub order_cap: usize,
    pub tail_tol: f64,
}

impl Default for LieOptions {
    fn default() -> Self {
        LieOptions {
            order_cap: DEFAULT_ORDER_CAP,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LieSeries {
    pub result: Polynomial,
    /// Number of brackets summed.
    pub order: usize,
    /// ℓ¹ coefficient norm of the first omitted term (0 when the series
    /// terminated exactly under the cutoff).
    pub tail: f64,
}

pub fn lie_transform(f: &Polynomial, s: &Polynomial, cutoff: u32, opts: LieOptions) -> Result<LieSeries> {
    f.same_lattice(s)?;
    let mut result = f.with_cutoff(cutoff);
    let mut term = result.clone();
    let mut order = 0;
    let mut tail = 0.0;
    for j in 1..=opts.order_cap + 1 {
        term = poisson_bracket(&term, s, cutoff)?.scaled((1.0 / j as f64).into());
        if term.is_empty() {
            break;
        }
        if j > opts.order_cap {
            tail = term.l1();
            break;
        }
        result.add_assign(&term);
        order = j;
    }
    if tail > opts.tail_tol {
        return Err(Error::LieSeriesDiverged {
            tail,
            tol: opts.tail_tol,
            order,
        });
    }
    Ok(LieSeries { result, order, tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::monomial::{var, Monomial, SLOT_U, SLOT_V};
    use crate::lattice::{Lattice, LatticeConfig};
    use num_complex::Complex64 as C64;
    use std::sync::Arc;

    fn lat() -> Arc<Lattice> {
        Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![0]], cutoff: 2 }).unwrap())
    }

    #[test]
    fn zero_generator_is_identity() {
        let l = lat();
        let f = Polynomial::from_terms(l.clone(), 4, [(Monomial::uv(1, 0, 1), C64::new(1.0, 2.0))]);
        let out = lie_transform(&f, &Polynomial::zero(l, 4), 4, LieOptions::default()).unwrap();
        assert_eq!(out.result, f);
        assert_eq!(out.order, 0);
    }

    #[test]
    fn cubic_generator_stops_after_one_bracket() {
        let l = lat();
        let f = Polynomial::from_terms(l.clone(), 3, [(Monomial::uv(1, 0, 0), C64::new(1.0, 0.0))]);
        let s = Polynomial::from_terms(
            l.clone(),
            3,
            [(Monomial::u(1, 0).times_var(var(1, SLOT_V), 1).times_var(var(2, SLOT_U), 1), C64::new(0.5, 0.0))],
        );
        let out = lie_transform(&f, &s, 3, LieOptions::default()).unwrap();
        let expect = f.plus(&poisson_bracket(&f, &s, 3).unwrap());
        assert!(out.result.max_abs_diff(&expect) < 1e-15);
        assert_eq!(out.order, 1);
    }

    #[test]
    fn harmonic_rotation_matches_exponential() {
        // s = θ u v rotates u by e^{−iθ}: u∘X = e^{−iθ} u.
        let l = lat();
        let theta = 0.3;
        let f = Polynomial::from_terms(l.clone(), 2, [(Monomial::u(1, 0), C64::new(1.0, 0.0))]);
        let s = Polynomial::from_terms(l.clone(), 2, [(Monomial::uv(1, 0, 0), C64::new(theta, 0.0))]);
        let opts = LieOptions { order_cap: 30, tail_tol: 1e-14 };
        let out = lie_transform(&f, &s, 2, opts).unwrap();
        let c = out.result.coeff(&Monomial::u(1, 0));
        assert!((c - C64::new(0.0, -theta).exp()).norm() < 1e-14);
    }

    #[test]
    fn divergence_is_flagged() {
        let l = lat();
        let f = Polynomial::from_terms(l.clone(), 2, [(Monomial::u(1, 0), C64::new(1.0, 0.0))]);
        let s = Polynomial::from_terms(l.clone(), 2, [(Monomial::uv(1, 0, 0), C64::new(20.0, 0.0))]);
        let opts = LieOptions { order_cap: 4, tail_tol: 1e-10 };
        assert!(matches!(lie_transform(&f, &s, 2, opts), Err(Error::LieSeriesDiverged { .. })));
    }
}
